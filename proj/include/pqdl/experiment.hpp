#pragma once

// Config-driven experiment runners behind the command-line tool. Each runner
// validates the whole configuration before computing anything and writes
// plot-ready CSV files whose first line records the config hash and seeds.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <type_traits>
#include <string>
#include <utility>
#include <vector>

#include "pqdl/codec.hpp"
#include "pqdl/data.hpp"
#include "pqdl/prequential.hpp"
#include "pqdl/serialize.hpp"
#include "pqdl/stats.hpp"
#include "pqdl/train.hpp"

namespace pqdl {

struct DatasetConfig {
  std::string source = "synth";  // synth | idx | csv
  // synth
  std::size_t num_classes = 10;
  std::size_t dim = 32;
  std::size_t examples_per_class = 100;
  double separation = 3.0;
  std::uint64_t seed = 0;
  // idx
  std::string images;
  std::string labels;
  // csv
  std::string path;
  /// Use only the first `limit` examples of the source (0: all).
  std::size_t limit = 0;
};

struct NamedModel {
  std::string name;
  std::vector<Layer> layers;
};

struct ScheduleConfig {
  std::vector<std::size_t> boundaries;  // explicit; overrides first/factor
  std::size_t first = 0;                // 0: 2 * num_classes
  double factor = 2.0;
};

struct ExperimentConfig {
  json source;  // the document as loaded, for provenance
  DatasetConfig dataset;
  std::size_t evaluation_size = 0;  // held out from the pool, never trained on
  std::uint64_t data_seed = 0;      // pool/evaluation split and prefix chain
  std::vector<NamedModel> models;
  TrainingRecipe recipe;
  std::vector<std::size_t> prefix_sizes;
  ScheduleConfig schedule;
  bool coarse_schedule = true;  // also run the coarsened schedule for uncertainty
  std::vector<std::uint64_t> seeds{0};
  std::vector<std::uint64_t> mdl_seeds;  // defaults to `seeds`
  std::size_t bootstrap_samples = kDefaultBootstrapSamples;
  std::uint64_t bootstrap_seed = 0;
  Resampling resampling = Resampling::joint;
  std::vector<std::size_t> widths;
  std::string width_model;
  std::string encode_model;
  unsigned precision = kDefaultPrecision;
  bool verify_determinism = false;
  std::string output_dir;
};

namespace detail {

template <class T>
T field(const json& j, const char* key, const std::string& where, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("field '" + where + key + "': " + e.what());
  }
}

template <class T>
T required(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError("missing required field '" + where + key + "'");
  return field<T>(j, key, where, T{});
}

}  // namespace detail

/// Parses and validates an experiment document. Every problem is reported
/// as ConfigError naming the offending field.
inline ExperimentConfig parse_config(const json& j) {
  using detail::field;
  using detail::required;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c;
  c.source = j;

  if (!j.contains("dataset")) throw ConfigError("missing required field 'dataset'");
  const json& d = j.at("dataset");
  c.dataset.source = field<std::string>(d, "source", "dataset.", "synth");
  c.dataset.limit = field<std::size_t>(d, "limit", "dataset.", 0);
  if (c.dataset.source == "synth") {
    c.dataset.num_classes = field<std::size_t>(d, "num_classes", "dataset.", 10);
    c.dataset.dim = field<std::size_t>(d, "dim", "dataset.", 32);
    c.dataset.examples_per_class = field<std::size_t>(d, "examples_per_class", "dataset.", 100);
    c.dataset.separation = field<double>(d, "separation", "dataset.", 3.0);
    c.dataset.seed = field<std::uint64_t>(d, "seed", "dataset.", 0);
    if (c.dataset.num_classes < 2 || c.dataset.dim == 0 || c.dataset.examples_per_class == 0)
      throw ConfigError("dataset: synth needs num_classes >= 2, dim >= 1, examples_per_class >= 1");
  } else if (c.dataset.source == "idx") {
    c.dataset.images = required<std::string>(d, "images", "dataset.");
    c.dataset.labels = required<std::string>(d, "labels", "dataset.");
  } else if (c.dataset.source == "csv") {
    c.dataset.path = required<std::string>(d, "path", "dataset.");
  } else {
    throw ConfigError("dataset.source must be synth, idx or csv (got '" + c.dataset.source + "')");
  }

  c.evaluation_size = field<std::size_t>(j, "evaluation_size", "", 0);
  c.data_seed = field<std::uint64_t>(j, "data_seed", "", 0);

  if (!j.contains("models") || !j.at("models").is_object() || j.at("models").empty())
    throw ConfigError("missing required field 'models' (object of named layer lists)");
  for (const auto& [name, spec] : j.at("models").items()) {
    NamedModel m{name, {}};
    try {
      const json& layers = spec.is_array() ? spec : spec.at("layers");
      m.layers = layers.get<std::vector<Layer>>();
    } catch (const json::exception& e) {
      throw ConfigError("model '" + name + "': " + e.what());
    }
    c.models.push_back(std::move(m));
  }

  try {
    if (j.contains("optimizer")) c.recipe.optimizer = j.at("optimizer").get<OptimizerSpec>();
    if (j.contains("calibration")) c.recipe.calibration = j.at("calibration").get<CalibPolicy>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("optimizer/calibration: ") + e.what());
  }
  try {
    c.recipe.optimizer.validate();
    c.recipe.calibration.validate();
  } catch (const TrainingError& e) {
    throw ConfigError(e.what());
  }
  c.recipe.calib_fraction = field<double>(j, "calib_fraction", "", 0.1);
  if (!(c.recipe.calib_fraction > 0.0 && c.recipe.calib_fraction < 1.0))
    throw ConfigError("calib_fraction must lie in (0, 1)");

  c.prefix_sizes = field<std::vector<std::size_t>>(j, "prefix_sizes", "", {});
  for (std::size_t i = 0; i < c.prefix_sizes.size(); ++i)
    if (c.prefix_sizes[i] < 2 || (i > 0 && c.prefix_sizes[i] <= c.prefix_sizes[i - 1]))
      throw ConfigError("prefix_sizes must be strictly increasing and at least 2");

  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    if (s.is_array()) {
      c.schedule.boundaries = field<std::vector<std::size_t>>(j, "schedule", "", {});
    } else {
      c.schedule.boundaries = field<std::vector<std::size_t>>(s, "boundaries", "schedule.", {});
      c.schedule.first = field<std::size_t>(s, "first", "schedule.", 0);
      c.schedule.factor = field<double>(s, "factor", "schedule.", 2.0);
      c.coarse_schedule = field<bool>(s, "coarse", "schedule.", true);
    }
    if (!(c.schedule.factor > 1.0)) throw ConfigError("schedule.factor must exceed 1");
  }

  c.seeds = field<std::vector<std::uint64_t>>(j, "seeds", "", {0});
  if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
  c.mdl_seeds = field<std::vector<std::uint64_t>>(j, "mdl_seeds", "", c.seeds);
  if (c.mdl_seeds.empty()) throw ConfigError("mdl_seeds must not be empty");

  if (j.contains("bootstrap")) {
    const json& b = j.at("bootstrap");
    c.bootstrap_samples = field<std::size_t>(b, "samples", "bootstrap.", kDefaultBootstrapSamples);
    c.bootstrap_seed = field<std::uint64_t>(b, "seed", "bootstrap.", 0);
    const auto mode = field<std::string>(b, "resampling", "bootstrap.", "joint");
    if (mode == "joint")
      c.resampling = Resampling::joint;
    else if (mode == "examples_only")
      c.resampling = Resampling::examples_only;
    else
      throw ConfigError("bootstrap.resampling must be joint or examples_only");
    if (c.bootstrap_samples == 0) throw ConfigError("bootstrap.samples must be positive");
  }

  c.widths = field<std::vector<std::size_t>>(j, "widths", "", {});
  for (std::size_t w : c.widths)
    if (w == 0) throw ConfigError("widths must be positive");
  c.width_model = field<std::string>(j, "width_model", "", c.models.front().name);
  c.encode_model = field<std::string>(j, "encode_model", "", c.models.front().name);
  auto known = [&](const std::string& n) {
    for (const auto& m : c.models)
      if (m.name == n) return true;
    return false;
  };
  if (!known(c.width_model)) throw ConfigError("width_model '" + c.width_model + "' is not a model");
  if (!known(c.encode_model)) throw ConfigError("encode_model '" + c.encode_model + "' is not a model");
  c.precision = field<unsigned>(j, "precision", "", kDefaultPrecision);
  if (c.precision < 2 || c.precision > 24) throw ConfigError("precision must lie in [2, 24]");
  c.verify_determinism = field<bool>(j, "verify_determinism", "", false);
  c.output_dir = field<std::string>(j, "output_dir", "", "");
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

/// Seeds shifted by a command-line offset.
inline ExperimentConfig with_seed_offset(ExperimentConfig c, std::uint64_t offset) {
  for (auto& s : c.seeds) s += offset;
  for (auto& s : c.mdl_seeds) s += offset;
  return c;
}

/// The source dataset split into a training pool and a held-out evaluation
/// set (the last `evaluation_size` entries of a seeded permutation).
struct ExperimentData {
  Dataset pool;
  Dataset evaluation;
};

inline Dataset load_dataset(const DatasetConfig& d) {
  Dataset data;
  if (d.source == "synth")
    data = synth_mixture(d.num_classes, d.dim, d.examples_per_class, d.separation, d.seed);
  else if (d.source == "idx")
    data = load_idx(d.images, d.labels);
  else
    data = load_csv(d.path);
  if (d.limit != 0 && d.limit < data.size()) {
    std::vector<std::size_t> rows(d.limit);
    std::iota(rows.begin(), rows.end(), 0);
    Dataset cut = data.subset(rows);
    cut.provenance += ",limit=" + std::to_string(d.limit);
    data = std::move(cut);
  }
  return data;
}

inline ExperimentData prepare_data(const ExperimentConfig& c) {
  const Dataset all = load_dataset(c.dataset);
  if (c.evaluation_size >= all.size())
    throw ConfigError("evaluation_size " + std::to_string(c.evaluation_size) +
                      " leaves no training pool (dataset has " + std::to_string(all.size()) + ")");
  if (c.evaluation_size == 0) return {all, {}};
  std::vector<std::size_t> perm(all.size());
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = Rng::stream(c.data_seed, Stream::split, {0, all.size()});
  rng.shuffle(std::span<std::size_t>(perm));
  const auto cut = static_cast<std::ptrdiff_t>(all.size() - c.evaluation_size);
  std::vector<std::size_t> pool(perm.begin(), perm.begin() + cut);
  std::vector<std::size_t> eval(perm.begin() + cut, perm.end());
  std::sort(pool.begin(), pool.end());
  std::sort(eval.begin(), eval.end());
  ExperimentData out{all.subset(pool), all.subset(eval)};
  out.pool.provenance += ",pool";
  out.evaluation.provenance += ",evaluation";
  return out;
}

inline ModelSpec model_spec(const ExperimentConfig& c, const std::string& name, const Dataset& d) {
  for (const auto& m : c.models)
    if (m.name == name) {
      ModelSpec spec{d.shape, d.num_classes, m.layers};
      try {
        init_params(spec, 0);
      } catch (const SpecError& e) {
        throw ConfigError("model '" + name + "': " + e.what());
      }
      return spec;
    }
  throw ConfigError("unknown model '" + name + "'");
}

inline BlockSchedule block_schedule(const ExperimentConfig& c, std::size_t n, std::size_t k) {
  BlockSchedule s;
  if (!c.schedule.boundaries.empty()) {
    s.boundaries = c.schedule.boundaries;
  } else {
    const std::size_t first = c.schedule.first ? c.schedule.first : 2 * k;
    s = BlockSchedule::geometric(first, n, c.schedule.factor);
  }
  try {
    s.validate(n);
  } catch (const DataError& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
  return s;
}

inline std::string config_hash(const ExperimentConfig& c) { return hex64(json_hash(c.source)); }

/// Writes CSV files into one output directory, each starting with a
/// provenance comment line.
class OutputDir {
 public:
  OutputDir(std::filesystem::path dir, const ExperimentConfig& c) : dir_(std::move(dir)) {
    std::ostringstream s;
    s << "# config_hash=" << config_hash(c) << " seeds=";
    for (std::size_t i = 0; i < c.seeds.size(); ++i) s << (i ? "," : "") << c.seeds[i];
    provenance_ = s.str();
    std::filesystem::create_directories(dir_);
    std::ofstream(dir_ / "config.json") << c.source.dump(2) << '\n';
  }

  std::filesystem::path path(const std::string& name) const { return dir_ / name; }

  /// Rows are written as given; the header line follows the provenance line.
  void csv(const std::string& name, const std::string& header,
           const std::vector<std::string>& rows) const {
    std::ofstream out(dir_ / name, std::ios::binary);
    if (!out) throw Error("cannot write '" + (dir_ / name).string() + "'");
    out << provenance_ << '\n' << header << '\n';
    for (const auto& r : rows) out << r << '\n';
  }

  const std::string& provenance() const { return provenance_; }

 private:
  std::filesystem::path dir_;
  std::string provenance_;
};

/// Shortest text that round-trips the double exactly.
inline std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

template <class... Ts>
std::string row(const Ts&... cells) {
  std::ostringstream s;
  bool first = true;
  auto put = [&](const auto& v) {
    if (!first) s << ',';
    first = false;
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>)
      s << num(v);
    else
      s << v;
  };
  (put(cells), ...);
  return s.str();
}

inline std::string seed_tag(std::uint64_t seed) { return "s" + std::to_string(seed); }

// ---------------------------------------------------------------- train

struct TrainSummary {
  std::string model;
  std::uint64_t seed = 0;
  double learning_rate = 0.0;
  double temperature = 1.0;
  double calib_nats = 0.0;
};

/// Learning-rate sweep and training on the pool for every model and seed:
/// history CSV plus a JSON blob with the final parameters and temperature.
inline std::vector<TrainSummary> run_train(const ExperimentConfig& c, const OutputDir& out,
                                           std::size_t jobs = 1) {
  const ExperimentData data = prepare_data(c);
  TrainingRecipe recipe = c.recipe;
  recipe.full_dataset_size = data.pool.size();
  std::vector<std::pair<std::string, std::uint64_t>> tasks;
  for (const auto& m : c.models)
    for (auto seed : c.seeds) tasks.emplace_back(m.name, seed);
  std::vector<ModelSpec> specs;
  for (const auto& [name, seed] : tasks) specs.push_back(model_spec(c, name, data.pool));
  const auto fits = parallel_map(tasks.size(), jobs, [&](std::size_t i) {
    return fit_recipe(specs[i], recipe, data.pool, tasks[i].second);
  });
  std::vector<TrainSummary> summary;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& [name, seed] = tasks[i];
    const TrainRun& run = fits[i].sweep.run;
    std::vector<std::string> rows;
    for (const auto& h : run.history)
      rows.push_back(row(h.step, h.train_nats, h.calib_nats_raw, h.calib_nats_cal, h.calib_err));
    out.csv("history_" + name + "_" + seed_tag(seed) + ".csv",
            "step,train_nats,calib_nats_raw,calib_nats_cal,calib_err", rows);
    json blob;
    blob["provenance"] = out.provenance();
    blob["model"] = specs[i];
    blob["seed"] = seed;
    blob["learning_rate"] = fits[i].sweep.best_lr;
    blob["candidate_calib_nats"] = fits[i].sweep.candidate_nats;
    blob["log_temperature"] = run.temperature.log_t;
    blob["temperature"] = run.temperature.value();
    blob["gradient_steps"] = run.gradient_steps;
    blob["params_hash"] = hex64(params_hash(run.params));
    json layers = json::array();
    for (const auto& l : run.params.layers)
      layers.push_back({{"weight_shape", {l.weight.rows(), l.weight.cols()}},
                        {"weight", std::vector<double>(l.weight.values().begin(), l.weight.values().end())},
                        {"bias", std::vector<double>(l.bias.values().begin(), l.bias.values().end())}});
    blob["params"] = layers;
    std::ofstream(out.path("params_" + name + "_" + seed_tag(seed) + ".json")) << blob.dump() << '\n';
    summary.push_back({name, seed, fits[i].sweep.best_lr, run.temperature.value(), run.calib_nats});
  }
  std::vector<std::string> rows;
  for (const auto& s : summary)
    rows.push_back(row(s.model, s.seed, s.learning_rate, s.temperature, s.calib_nats));
  out.csv("train_summary.csv", "model,seed,learning_rate,temperature,calib_nats", rows);
  return summary;
}

// -------------------------------------------------------------- profile

struct ModelProfile {
  std::string model;
  ProfileResult result;
};

inline void require_profile_inputs(const ExperimentConfig& c, const ExperimentData& data) {
  if (c.prefix_sizes.empty()) throw ConfigError("missing required field 'prefix_sizes'");
  if (c.evaluation_size == 0) throw ConfigError("evaluation_size must be positive for profiles");
  if (c.prefix_sizes.back() > data.pool.size())
    throw ConfigError("largest prefix size exceeds the training pool (" +
                      std::to_string(data.pool.size()) + " examples)");
}

inline std::vector<ModelProfile> profile_models(const ExperimentConfig& c,
                                                const ExperimentData& data,
                                                const std::vector<std::pair<std::string, ModelSpec>>& models,
                                                std::size_t jobs) {
  require_profile_inputs(c, data);
  const PrefixChain chain = make_prefix_chain(data.pool, c.prefix_sizes, c.data_seed);
  TrainingRecipe recipe = c.recipe;
  recipe.full_dataset_size = data.pool.size();
  std::vector<ModelProfile> out;
  for (const auto& [name, spec] : models)
    out.push_back({name, profile(spec, recipe, data.pool, chain, data.evaluation, c.seeds, jobs)});
  return out;
}

inline void write_profile_csv(const OutputDir& out, const std::string& file,
                              const std::vector<ModelProfile>& profiles) {
  std::vector<std::string> rows, summary;
  for (const auto& p : profiles)
    for (const auto& pt : p.result.points) {
      for (std::size_t s = 0; s < pt.seed_nats.size(); ++s)
        rows.push_back(row(pt.prefix_size, p.model, s, pt.seed_nats[s], pt.seed_error[s]));
      summary.push_back(row(pt.prefix_size, p.model, pt.mean_nats, pt.std_nats, pt.mean_error,
                            pt.std_error));
    }
  out.csv(file + ".csv", "prefix_size,model,seed,nats,error_rate", rows);
  out.csv(file + "_summary.csv", "prefix_size,model,mean_nats,std_nats,mean_error,std_error",
          summary);
}

inline std::vector<ModelProfile> run_profile(const ExperimentConfig& c, const OutputDir& out,
                                             std::size_t jobs = 1) {
  const ExperimentData data = prepare_data(c);
  std::vector<std::pair<std::string, ModelSpec>> models;
  for (const auto& m : c.models) models.emplace_back(m.name, model_spec(c, m.name, data.pool));
  const auto profiles = profile_models(c, data, models, jobs);
  write_profile_csv(out, "profile", profiles);
  return profiles;
}

// ------------------------------------------------------------------ snr

struct PairSnr {
  std::size_t prefix_size = 0;
  std::string a;
  std::string b;
  SnrEstimate estimate;
};

inline std::vector<PairSnr> pairwise_snr(const ExperimentConfig& c,
                                         const std::vector<ModelProfile>& profiles) {
  std::vector<PairSnr> out;
  if (profiles.empty()) return out;
  for (std::size_t si = 0; si < profiles.front().result.points.size(); ++si)
    for (std::size_t i = 0; i < profiles.size(); ++i)
      for (std::size_t j = i + 1; j < profiles.size(); ++j)
        out.push_back({profiles[i].result.points[si].prefix_size, profiles[i].model, profiles[j].model,
                       bootstrap_snr(profiles[i].result.eval[si], profiles[j].result.eval[si],
                                     c.bootstrap_samples, c.bootstrap_seed, c.resampling)});
  return out;
}

/// Profiles every model and writes the pairwise SNR of their calibrated
/// evaluation losses at each prefix size.
inline std::vector<PairSnr> run_snr(const ExperimentConfig& c, const OutputDir& out,
                                    std::size_t jobs = 1) {
  if (c.models.size() < 2) throw ConfigError("snr needs at least two models");
  const auto profiles = run_profile(c, out, jobs);
  const auto pairs = pairwise_snr(c, profiles);
  std::vector<std::string> rows, detail;
  for (const auto& p : pairs) {
    rows.push_back(row(p.prefix_size, p.a + ":" + p.b, p.estimate.snr));
    detail.push_back(row(p.prefix_size, p.a + ":" + p.b, p.estimate.delta, p.estimate.variance,
                         p.estimate.snr, p.estimate.n_boot));
  }
  out.csv("snr.csv", "prefix_size,pair,snr", rows);
  out.csv("snr_detail.csv", "prefix_size,pair,delta_nats,variance,snr,n_boot", detail);
  return pairs;
}

// ---------------------------------------------------------- width sweep

inline std::vector<ModelProfile> run_width_sweep(const ExperimentConfig& c, const OutputDir& out,
                                                 std::size_t jobs = 1) {
  if (c.widths.empty()) throw ConfigError("missing required field 'widths'");
  const ExperimentData data = prepare_data(c);
  const ModelSpec base = model_spec(c, c.width_model, data.pool);
  std::vector<std::pair<std::string, ModelSpec>> models;
  for (std::size_t w : c.widths) models.emplace_back(std::to_string(w), with_hidden_width(base, w));
  const auto profiles = profile_models(c, data, models, jobs);
  std::vector<std::string> rows, summary;
  for (const auto& p : profiles)
    for (const auto& pt : p.result.points) {
      for (std::size_t s = 0; s < pt.seed_nats.size(); ++s)
        rows.push_back(row(p.model, pt.prefix_size, s, pt.seed_nats[s], pt.seed_error[s]));
      summary.push_back(row(p.model, pt.prefix_size, pt.mean_nats, pt.std_nats, pt.mean_error, pt.std_error));
    }
  out.csv("width_sweep.csv", "width,prefix_size,seed,nats,error_rate", rows);
  out.csv("width_sweep_summary.csv", "width,prefix_size,mean_nats,std_nats,mean_error,std_error", summary);
  return profiles;
}

// ------------------------------------------------------------------ mdl

struct MdlRun {
  std::vector<DLEstimate> estimates;
  EvidenceTable table;
};

inline MdlRun run_mdl(const ExperimentConfig& c, const OutputDir& out, std::size_t jobs = 1) {
  const ExperimentData data = prepare_data(c);
  const Dataset& d = data.pool;
  const BlockSchedule schedule = block_schedule(c, d.size(), d.num_classes);
  TrainingRecipe recipe = c.recipe;
  recipe.full_dataset_size = d.size();
  const BlockSchedule coarse = schedule.coarsened();
  const bool with_coarse = c.coarse_schedule && !(coarse == schedule);

  MdlRun run;
  std::vector<std::string> dl_rows;
  for (const auto& m : c.models) {
    const ModelSpec spec = model_spec(c, m.name, d);
    // One task per (seed, schedule); ledgers are kept for the primary schedule.
    const std::size_t per_seed = with_coarse ? 2 : 1;
    const auto results = parallel_map(c.mdl_seeds.size() * per_seed, jobs, [&](std::size_t t) {
      return prequential_dl(spec, recipe, d, t % per_seed == 0 ? schedule : coarse,
                            c.mdl_seeds[t / per_seed]);
    });
    std::vector<double> fine, rough;
    for (std::size_t t = 0; t < results.size(); ++t) {
      const std::uint64_t seed = c.mdl_seeds[t / per_seed];
      const bool primary = t % per_seed == 0;
      (primary ? fine : rough).push_back(results[t].dl_nats);
      dl_rows.push_back(row(m.name, seed, primary ? "primary" : "coarse", results[t].dl_nats));
      if (!primary) continue;
      std::vector<std::string> rows;
      const auto& blocks = results[t].ledger.blocks;
      for (std::size_t b = 0; b < blocks.size(); ++b)
        for (std::size_t i = 0; i < blocks[b].nats.size(); ++i)
          rows.push_back(row(b, blocks[b].n_train, blocks[b].example_indices[i], blocks[b].nats[i]));
      out.csv("ledger_" + m.name + "_" + seed_tag(seed) + ".csv", "block,n_train,example_index,nats", rows);
    }
    run.estimates.push_back(summarize_dl(m.name, dataset_id(d), schedule, fine, rough));
  }
  out.csv("dl.csv", "model,seed,schedule,dl_nats", dl_rows);

  std::vector<std::string> est_rows;
  for (const auto& e : run.estimates)
    est_rows.push_back(row(e.model, e.dl_nats, e.seed_std, e.schedule_std, e.uncertainty,
                           std::log(static_cast<double>(d.num_classes)) * static_cast<double>(d.size())));
  out.csv("dl_summary.csv", "model,dl_nats,seed_std,schedule_std,uncertainty,uniform_nats", est_rows);

  if (run.estimates.size() >= 2) {
    run.table = evidence_table(run.estimates);
    std::string header = "model";
    for (const auto& m : run.table.models) header += "," + m;
    std::vector<std::string> rows, lng;
    for (std::size_t i = 0; i < run.table.models.size(); ++i) {
      std::string r = run.table.models[i];
      for (std::size_t j = 0; j < run.table.models.size(); ++j) {
        const auto& cell = run.table.cell(i, j);
        r += "," + num(cell.delta_nats) + " +- " + num(cell.uncertainty);
        lng.push_back(row(run.table.models[i], run.table.models[j], cell.delta_nats, cell.uncertainty,
                          log10_bayes_factor(cell.delta_nats)));
      }
      rows.push_back(r);
    }
    out.csv("evidence.csv", header, rows);
    out.csv("evidence_long.csv", "row,col,delta_nats,uncertainty,log10_bayes_factor", lng);
  }
  return run;
}

// ------------------------------------------------------- encode / decode

inline std::filesystem::path default_message_path(const OutputDir& out) {
  return out.path("labels.pqdl");
}

inline EncodeResult run_encode(const ExperimentConfig& c, const OutputDir& out,
                               const std::filesystem::path& message_path) {
  const ExperimentData data = prepare_data(c);
  const Dataset& d = data.pool;
  const ModelSpec spec = model_spec(c, c.encode_model, d);
  const BlockSchedule schedule = block_schedule(c, d.size(), d.num_classes);
  TrainingRecipe recipe = c.recipe;
  recipe.full_dataset_size = d.size();
  EncodeOptions opts;
  opts.precision = c.precision;
  opts.verify_determinism = c.verify_determinism;
  EncodeResult r = encode_dataset(d, spec, recipe, schedule, c.seeds.front(), opts);
  r.message.header["config_hash"] = config_hash(c);
  write_message(message_path.string(), r.message);
  out.csv("encode.csv", "model,seed,examples,bit_length,shannon_bits,dl_nats,dl_bits",
          {row(c.encode_model, c.seeds.front(), d.size(), r.message.bit_length(), r.shannon_bits,
               r.ledger.total_nats, r.ledger.total_nats / std::numbers::ln2)});
  return r;
}

/// Recovers the pool labels from a message; the inputs come from the config.
inline std::vector<std::size_t> run_decode(const ExperimentConfig& c, const OutputDir& out,
                                           const std::filesystem::path& message_path) {
  const ExperimentData data = prepare_data(c);
  const EncodedMessage m = read_message(message_path.string());
  const auto labels = decode_dataset(m, data.pool.inputs);
  std::vector<std::string> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) rows.push_back(row(data.pool.origin[i], labels[i]));
  out.csv("decoded_labels.csv", "example_index,label", rows);
  return labels;
}

}  // namespace pqdl
