#pragma once

// JSON forms of the model, optimizer and recipe descriptions. These are
// embedded verbatim in encoded-message headers and experiment outputs, so
// field names are part of the file formats.

#include <json.hpp>

#include <string>

#include "pqdl/calib.hpp"
#include "pqdl/error.hpp"
#include "pqdl/hash.hpp"
#include "pqdl/nn.hpp"
#include "pqdl/optim.hpp"
#include "pqdl/prequential.hpp"
#include "pqdl/train.hpp"

namespace pqdl {

using json = nlohmann::json;

NLOHMANN_JSON_SERIALIZE_ENUM(Activation, {{Activation::none, "none"},
                                          {Activation::relu, "relu"},
                                          {Activation::tanh, "tanh"}})

inline void to_json(json& j, const Shape& s) {
  if (s.spatial)
    j = {{"height", s.height}, {"width", s.width}, {"channels", s.channels}};
  else
    j = {{"dim", s.size()}};
}

inline void from_json(const json& j, Shape& s) {
  if (j.contains("dim"))
    s = Shape::flat(j.at("dim").get<std::size_t>());
  else
    s = Shape::image(j.at("height").get<std::size_t>(), j.at("width").get<std::size_t>(),
                     j.at("channels").get<std::size_t>());
}

inline void to_json(json& j, const Layer& layer) {
  if (const auto* d = std::get_if<Dense>(&layer))
    j = {{"type", "dense"}, {"width", d->width}, {"activation", d->activation}};
  else if (const auto* dr = std::get_if<Dropout>(&layer))
    j = {{"type", "dropout"}, {"rate", dr->rate}};
  else if (const auto* c = std::get_if<Conv>(&layer))
    j = {{"type", "conv"},       {"kernel", c->kernel},
         {"channels", c->channels}, {"stride", c->stride},
         {"activation", c->activation}};
  else
    j = {{"type", "flatten"}};
}

inline void from_json(const json& j, Layer& layer) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "dense") {
    layer = Dense{j.at("width").get<std::size_t>(), j.value("activation", Activation::relu)};
  } else if (type == "dropout") {
    layer = Dropout{j.at("rate").get<double>()};
  } else if (type == "conv") {
    layer = Conv{j.at("kernel").get<std::size_t>(), j.at("channels").get<std::size_t>(),
                 j.value("stride", std::size_t{1}), j.value("activation", Activation::relu)};
  } else if (type == "flatten") {
    layer = Flatten{};
  } else {
    throw ConfigError("unknown layer type '" + type + "'");
  }
}

inline void to_json(json& j, const ModelSpec& m) {
  j = {{"input", m.input}, {"num_classes", m.num_classes}, {"layers", m.layers}};
}

inline void from_json(const json& j, ModelSpec& m) {
  m.input = j.at("input").get<Shape>();
  m.num_classes = j.at("num_classes").get<std::size_t>();
  m.layers = j.value("layers", std::vector<Layer>{});
}

NLOHMANN_JSON_SERIALIZE_ENUM(OptimizerKind, {{OptimizerKind::adam, "adam"},
                                             {OptimizerKind::momentum_sgd_cosine, "momentum_sgd_cosine"},
                                             {OptimizerKind::rmsprop_cosine, "rmsprop_cosine"}})

inline void to_json(json& j, const OptimizerSpec& o) {
  j = {{"kind", o.kind},           {"learning_rates", o.learning_rates},
       {"epochs", o.epochs},       {"momentum", o.momentum},
       {"epsilon", o.epsilon},     {"batch_size", o.batch_size},
       {"beta1", o.beta1},         {"beta2", o.beta2},
       {"rms_decay", o.rms_decay}};
}

/// Missing fields take the defaults of the named optimizer kind.
inline void from_json(const json& j, OptimizerSpec& o) {
  const std::string kind = j.value("kind", std::string("adam"));
  if (kind == "adam")
    o = OptimizerSpec::adam();
  else if (kind == "momentum_sgd_cosine" || kind == "momentum_sgd")
    o = OptimizerSpec::momentum_sgd();
  else if (kind == "rmsprop_cosine" || kind == "rmsprop")
    o = OptimizerSpec::rmsprop();
  else
    throw ConfigError("unknown optimizer kind '" + kind + "'");
  o.learning_rates = j.value("learning_rates", o.learning_rates);
  o.epochs = j.value("epochs", o.epochs);
  o.momentum = j.value("momentum", o.momentum);
  o.epsilon = j.value("epsilon", o.epsilon);
  o.batch_size = j.value("batch_size", o.batch_size);
  o.beta1 = j.value("beta1", o.beta1);
  o.beta2 = j.value("beta2", o.beta2);
  o.rms_decay = j.value("rms_decay", o.rms_decay);
}

inline void to_json(json& j, const CalibPolicy& c) {
  j = {{"train_steps_per_calib_step", c.train_steps_per_calib_step},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"refine_steps", c.refine_steps}};
}

inline void from_json(const json& j, CalibPolicy& c) {
  c = CalibPolicy{};
  c.train_steps_per_calib_step = j.value("train_steps_per_calib_step", c.train_steps_per_calib_step);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.refine_steps = j.value("refine_steps", c.refine_steps);
}

inline void to_json(json& j, const TrainingRecipe& r) {
  j = {{"optimizer", r.optimizer},
       {"calibration", r.calibration},
       {"calib_fraction", r.calib_fraction},
       {"full_dataset_size", r.full_dataset_size}};
}

inline void from_json(const json& j, TrainingRecipe& r) {
  r = TrainingRecipe{};
  if (j.contains("optimizer")) r.optimizer = j.at("optimizer").get<OptimizerSpec>();
  if (j.contains("calibration")) r.calibration = j.at("calibration").get<CalibPolicy>();
  r.calib_fraction = j.value("calib_fraction", r.calib_fraction);
  r.full_dataset_size = j.value("full_dataset_size", r.full_dataset_size);
}

inline void to_json(json& j, const BlockSchedule& s) { j = s.boundaries; }
inline void from_json(const json& j, BlockSchedule& s) {
  s.boundaries = j.get<std::vector<std::size_t>>();
}

inline std::uint64_t json_hash(const json& j) { return Fnv1a().str(j.dump()).value(); }

}  // namespace pqdl
