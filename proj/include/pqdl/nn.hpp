#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "pqdl/error.hpp"
#include "pqdl/matrix.hpp"
#include "pqdl/rng.hpp"

namespace pqdl {

enum class Activation { none, relu, tanh };

struct Dense {
  std::size_t width = 0;
  Activation activation = Activation::relu;
  friend bool operator==(const Dense&, const Dense&) = default;
};

/// Inverted dropout; identity in eval mode.
struct Dropout {
  double rate = 0.0;
  friend bool operator==(const Dropout&, const Dropout&) = default;
};

/// k x k convolution, valid padding, HWC layout.
struct Conv {
  std::size_t kernel = 0;
  std::size_t channels = 0;
  std::size_t stride = 1;
  Activation activation = Activation::relu;
  friend bool operator==(const Conv&, const Conv&) = default;
};

struct Flatten {
  friend bool operator==(const Flatten&, const Flatten&) = default;
};

using Layer = std::variant<Dense, Dropout, Conv, Flatten>;

/// Per-example input geometry. Flat inputs have spatial == false and keep
/// their dimension in `channels`.
struct Shape {
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t channels = 1;
  bool spatial = false;

  static Shape flat(std::size_t dim) { return {1, 1, dim, false}; }
  static Shape image(std::size_t h, std::size_t w, std::size_t c) { return {h, w, c, true}; }
  std::size_t size() const noexcept { return height * width * channels; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Architecture description. A final Dense(num_classes, none) classifier is
/// implicit; an empty layer list is multinomial logistic regression.
struct ModelSpec {
  Shape input;
  std::size_t num_classes = 2;
  std::vector<Layer> layers;
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct LayerParams {
  Matrix weight;  // fan_in x fan_out (conv: k*k*c_in x c_out)
  Matrix bias;    // 1 x fan_out
  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct ModelParams {
  std::vector<LayerParams> layers;

  std::size_t count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  /// Weight then bias of every layer, in layer order. Optimizers and hashes
  /// walk parameters in exactly this order.
  std::vector<std::span<double>> blocks() {
    std::vector<std::span<double>> out;
    for (auto& l : layers) {
      out.push_back(l.weight.values());
      out.push_back(l.bias.values());
    }
    return out;
  }
  std::vector<std::span<const double>> blocks() const {
    std::vector<std::span<const double>> out;
    for (const auto& l : layers) {
      out.push_back(l.weight.values());
      out.push_back(l.bias.values());
    }
    return out;
  }

  /// Same shapes, all zeros.
  ModelParams zeros_like() const {
    ModelParams z;
    for (const auto& l : layers)
      z.layers.push_back({Matrix(l.weight.rows(), l.weight.cols()),
                          Matrix(l.bias.rows(), l.bias.cols())});
    return z;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct Batch {
  Matrix inputs;                    // batch x input dim
  std::vector<std::size_t> labels;  // class indices
};

enum class Mode { train, eval };

namespace detail {

struct Op {
  enum class Kind { dense, conv, dropout, flatten } kind;
  Shape in;
  Shape out;
  Activation activation = Activation::none;
  std::size_t param = 0;  // index into ModelParams::layers for dense/conv
  std::size_t kernel = 0;
  std::size_t stride = 1;
  double rate = 0.0;
};

struct Plan {
  std::vector<Op> ops;
  std::size_t param_layers = 0;
};

/// Validates the layer chain and lowers it to a list of shaped ops,
/// including the implicit classifier.
inline Plan compile(const ModelSpec& spec) {
  if (spec.num_classes < 2) throw SpecError("model needs at least 2 classes");
  if (spec.input.size() == 0) throw SpecError("model input has zero size");
  Plan plan;
  Shape cur = spec.input;
  auto add_dense = [&](std::size_t width, Activation act) {
    if (width == 0) throw SpecError("dense layer of width 0");
    Op op{Op::Kind::dense, cur, Shape::flat(width), act, plan.param_layers++, 0, 1, 0.0};
    plan.ops.push_back(op);
    cur = op.out;
  };
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& layer = spec.layers[i];
    const std::string where = "layer " + std::to_string(i) + ": ";
    if (const auto* d = std::get_if<Dense>(&layer)) {
      add_dense(d->width, d->activation);
    } else if (const auto* dr = std::get_if<Dropout>(&layer)) {
      if (!(dr->rate >= 0.0 && dr->rate < 1.0))
        throw SpecError(where + "dropout rate must lie in [0, 1)");
      plan.ops.push_back({Op::Kind::dropout, cur, cur, Activation::none, 0, 0, 1, dr->rate});
    } else if (const auto* c = std::get_if<Conv>(&layer)) {
      if (!cur.spatial) throw SpecError(where + "convolution needs a spatial input");
      if (c->kernel == 0 || c->channels == 0 || c->stride == 0)
        throw SpecError(where + "convolution kernel, channels and stride must be positive");
      if (c->kernel > cur.height || c->kernel > cur.width)
        throw SpecError(where + "kernel larger than its input");
      const std::size_t oh = (cur.height - c->kernel) / c->stride + 1;
      const std::size_t ow = (cur.width - c->kernel) / c->stride + 1;
      Op op{Op::Kind::conv, cur, Shape::image(oh, ow, c->channels), c->activation,
            plan.param_layers++, c->kernel, c->stride, 0.0};
      plan.ops.push_back(op);
      cur = op.out;
    } else {
      const Shape flat = Shape::flat(cur.size());
      plan.ops.push_back({Op::Kind::flatten, cur, flat, Activation::none, 0, 0, 1, 0.0});
      cur = flat;
    }
  }
  add_dense(spec.num_classes, Activation::none);
  return plan;
}

inline void activate(Matrix& m, Activation act) {
  if (act == Activation::relu) {
    for (double& v : m.values()) v = v > 0.0 ? v : 0.0;
  } else if (act == Activation::tanh) {
    for (double& v : m.values()) v = std::tanh(v);
  }
}

/// grad *= act'(pre) expressed through the post-activation output.
inline void activation_backward(Matrix& grad, const Matrix& out, Activation act) {
  auto g = grad.values();
  auto o = out.values();
  if (act == Activation::relu) {
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(o[i] > 0.0)) g[i] = 0.0;
  } else if (act == Activation::tanh) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - o[i] * o[i];
  }
}

/// Rows: one per (example, output position); columns: the k*k*c_in patch.
inline Matrix im2col(const Matrix& input, const Op& op) {
  const std::size_t batch = input.rows();
  const std::size_t k = op.kernel;
  const std::size_t cin = op.in.channels;
  const std::size_t positions = op.out.height * op.out.width;
  Matrix col(batch * positions, k * k * cin);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto x = input.row(b);
    for (std::size_t oy = 0; oy < op.out.height; ++oy) {
      for (std::size_t ox = 0; ox < op.out.width; ++ox) {
        double* dst = col.row(b * positions + oy * op.out.width + ox).data();
        for (std::size_t ky = 0; ky < k; ++ky) {
          const std::size_t iy = oy * op.stride + ky;
          const double* src = x.data() + (iy * op.in.width + ox * op.stride) * cin;
          for (std::size_t t = 0; t < k * cin; ++t) *dst++ = src[t];
        }
      }
    }
  }
  return col;
}

/// Scatter-add of patch gradients back onto the input layout.
inline Matrix col2im(const Matrix& col, const Op& op, std::size_t batch) {
  const std::size_t k = op.kernel;
  const std::size_t cin = op.in.channels;
  const std::size_t positions = op.out.height * op.out.width;
  Matrix grad(batch, op.in.size());
  for (std::size_t b = 0; b < batch; ++b) {
    auto g = grad.row(b);
    for (std::size_t oy = 0; oy < op.out.height; ++oy) {
      for (std::size_t ox = 0; ox < op.out.width; ++ox) {
        const double* src = col.row(b * positions + oy * op.out.width + ox).data();
        for (std::size_t ky = 0; ky < k; ++ky) {
          const std::size_t iy = oy * op.stride + ky;
          double* dst = g.data() + (iy * op.in.width + ox * op.stride) * cin;
          for (std::size_t t = 0; t < k * cin; ++t) dst[t] += *src++;
        }
      }
    }
  }
  return grad;
}

inline Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate,
                           std::uint64_t dropout_seed, std::size_t op_index) {
  Matrix mask(rows, cols);
  auto rng = Rng::stream(dropout_seed, Stream::dropout, {op_index});
  const double scale = 1.0 / (1.0 - rate);
  for (double& m : mask.values()) m = rng.uniform() < rate ? 0.0 : scale;
  return mask;
}

/// Everything backward() needs from the forward pass.
struct Trace {
  std::vector<Matrix> inputs;   // input of every op
  std::vector<Matrix> outputs;  // post-activation output of dense/conv ops
  std::vector<Matrix> aux;      // im2col matrices (conv) or masks (dropout)
  Matrix logits;
};

inline void check_batch(const ModelSpec& spec, const ModelParams& params, const Batch& batch,
                        const Plan& plan) {
  if (batch.inputs.cols() != spec.input.size())
    throw ShapeError("batch width " + std::to_string(batch.inputs.cols()) +
                     " does not match model input " + std::to_string(spec.input.size()));
  if (!batch.labels.empty() && batch.labels.size() != batch.inputs.rows())
    throw ShapeError("batch has " + std::to_string(batch.inputs.rows()) + " inputs but " +
                     std::to_string(batch.labels.size()) + " labels");
  if (params.layers.size() != plan.param_layers)
    throw ShapeError("parameter layer count does not match model");
  for (const auto& op : plan.ops) {
    if (op.kind != Op::Kind::dense && op.kind != Op::Kind::conv) continue;
    const auto& p = params.layers[op.param];
    const std::size_t fan_in =
        op.kind == Op::Kind::dense ? op.in.size() : op.kernel * op.kernel * op.in.channels;
    const std::size_t fan_out = op.kind == Op::Kind::dense ? op.out.size() : op.out.channels;
    if (p.weight.rows() != fan_in || p.weight.cols() != fan_out || p.bias.rows() != 1 ||
        p.bias.cols() != fan_out)
      throw ShapeError("parameter shapes do not match layer " + std::to_string(op.param));
  }
}

inline Trace run_forward(const ModelSpec& spec, const ModelParams& params, const Batch& batch,
                         Mode mode, std::uint64_t dropout_seed, bool keep_trace) {
  const Plan plan = compile(spec);
  check_batch(spec, params, batch, plan);
  Trace trace;
  const std::size_t n = batch.inputs.rows();
  Matrix cur = batch.inputs;
  for (std::size_t i = 0; i < plan.ops.size(); ++i) {
    const Op& op = plan.ops[i];
    Matrix next;
    Matrix aux;
    switch (op.kind) {
      case Op::Kind::dense: {
        const auto& p = params.layers[op.param];
        next = matmul(cur, p.weight);
        add_row_vector(next, p.bias);
        activate(next, op.activation);
        break;
      }
      case Op::Kind::conv: {
        const auto& p = params.layers[op.param];
        aux = im2col(cur, op);
        next = matmul(aux, p.weight);
        add_row_vector(next, p.bias);
        activate(next, op.activation);
        next.reshape(n, op.out.size());
        break;
      }
      case Op::Kind::dropout: {
        next = cur;
        if (mode == Mode::train && op.rate > 0.0) {
          aux = dropout_mask(n, cur.cols(), op.rate, dropout_seed, i);
          auto v = next.values();
          auto m = aux.values();
          for (std::size_t t = 0; t < v.size(); ++t) v[t] *= m[t];
        }
        break;
      }
      case Op::Kind::flatten:
        next = cur;
        break;
    }
    if (keep_trace) {
      trace.inputs.push_back(std::move(cur));
      trace.outputs.push_back(op.kind == Op::Kind::dense || op.kind == Op::Kind::conv
                                  ? next
                                  : Matrix());
      trace.aux.push_back(std::move(aux));
    }
    cur = std::move(next);
  }
  trace.logits = std::move(cur);
  return trace;
}

}  // namespace detail

/// Glorot-uniform weights, a = sqrt(6 / (fan_in + fan_out)), zero biases.
/// Layer l draws from Rng::stream(seed, Stream::init, {l}).
inline ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
  const detail::Plan plan = detail::compile(spec);
  ModelParams params;
  for (const auto& op : plan.ops) {
    using Kind = detail::Op::Kind;
    if (op.kind != Kind::dense && op.kind != Kind::conv) continue;
    std::size_t fan_in = op.in.size();
    std::size_t fan_out = op.out.size();
    std::size_t rows = fan_in;
    std::size_t cols = fan_out;
    if (op.kind == Kind::conv) {
      rows = op.kernel * op.kernel * op.in.channels;
      cols = op.out.channels;
      fan_in = rows;
      fan_out = op.kernel * op.kernel * op.out.channels;
    }
    LayerParams layer{Matrix(rows, cols), Matrix(1, cols)};
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    auto rng = Rng::stream(seed, Stream::init, {op.param});
    for (double& w : layer.weight.values()) w = rng.uniform(-a, a);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

/// Logits (batch x num_classes). In train mode every dropout op with a
/// positive rate draws its mask from Rng::stream(dropout_seed, dropout, {op}).
inline Matrix forward(const ModelSpec& spec, const ModelParams& params, const Batch& batch,
                      Mode mode = Mode::eval, std::uint64_t dropout_seed = 0) {
  return detail::run_forward(spec, params, batch, mode, dropout_seed, false).logits;
}

struct XentResult {
  double mean_loss = 0.0;
  Matrix probs;
  std::vector<double> losses;  // per example, nats
};

/// Row-wise softmax(logits / temperature) and the mean negative
/// log-likelihood of `labels` in nats.
inline XentResult softmax_xent(const Matrix& logits, std::span<const std::size_t> labels,
                               double temperature = 1.0) {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw std::invalid_argument("softmax_xent: temperature must be positive and finite");
  if (labels.size() != logits.rows())
    throw ShapeError("softmax_xent: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(logits.rows()) + " rows");
  const std::size_t k = logits.cols();
  XentResult r{0.0, Matrix(logits.rows(), k), std::vector<double>(logits.rows())};
  const double inv_t = 1.0 / temperature;
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (labels[i] >= k) throw ShapeError("softmax_xent: label out of range");
    const auto z = logits.row(i);
    auto p = r.probs.row(i);
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) m = std::max(m, z[c] * inv_t);
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      p[c] = std::exp(z[c] * inv_t - m);
      s += p[c];
    }
    const double log_s = std::log(s);
    for (std::size_t c = 0; c < k; ++c) p[c] = std::exp(z[c] * inv_t - m - log_s);
    // z_y / T - m <= 0 and log_s >= 0, so the loss is never negative.
    r.losses[i] = log_s - (z[labels[i]] * inv_t - m);
    total += r.losses[i];
  }
  r.mean_loss = logits.rows() == 0 ? 0.0 : total / static_cast<double>(logits.rows());
  return r;
}

struct GradResult {
  double mean_loss = 0.0;
  ModelParams grads;
};

/// Exact gradient of softmax_xent(forward(...), labels, temperature).mean_loss
/// with respect to every parameter. Uses the same dropout masks as the
/// forward pass with identical arguments.
inline GradResult backward(const ModelSpec& spec, const ModelParams& params, const Batch& batch,
                           double temperature = 1.0, Mode mode = Mode::train,
                           std::uint64_t dropout_seed = 0) {
  using detail::Op;
  if (batch.labels.size() != batch.inputs.rows())
    throw ShapeError("backward: batch needs one label per input row");
  const detail::Plan plan = detail::compile(spec);
  detail::Trace trace = detail::run_forward(spec, params, batch, mode, dropout_seed, true);
  const std::size_t n = batch.inputs.rows();
  XentResult xent = softmax_xent(trace.logits, batch.labels, temperature);

  GradResult out{xent.mean_loss, params.zeros_like()};
  if (n == 0) return out;

  // d mean_loss / d logits = (p - onehot) / (n * T)
  Matrix grad = std::move(xent.probs);
  for (std::size_t i = 0; i < n; ++i) grad(i, batch.labels[i]) -= 1.0;
  const double scale = 1.0 / (static_cast<double>(n) * temperature);
  for (double& g : grad.values()) g *= scale;

  for (std::size_t i = plan.ops.size(); i-- > 0;) {
    const Op& op = plan.ops[i];
    const bool need_input_grad = i > 0;
    switch (op.kind) {
      case Op::Kind::dense: {
        const auto& p = params.layers[op.param];
        detail::activation_backward(grad, trace.outputs[i], op.activation);
        out.grads.layers[op.param].weight = matmul_tn(trace.inputs[i], grad);
        out.grads.layers[op.param].bias = column_sums(grad);
        if (need_input_grad) grad = matmul_nt(grad, p.weight);
        break;
      }
      case Op::Kind::conv: {
        const auto& p = params.layers[op.param];
        detail::activation_backward(grad, trace.outputs[i], op.activation);
        grad.reshape(n * op.out.height * op.out.width, op.out.channels);
        const Matrix& col = trace.aux[i];
        out.grads.layers[op.param].weight = matmul_tn(col, grad);
        out.grads.layers[op.param].bias = column_sums(grad);
        if (need_input_grad) grad = detail::col2im(matmul_nt(grad, p.weight), op, n);
        break;
      }
      case Op::Kind::dropout: {
        const Matrix& mask = trace.aux[i];
        if (!mask.empty()) {
          auto g = grad.values();
          auto m = mask.values();
          for (std::size_t t = 0; t < g.size(); ++t) g[t] *= m[t];
        }
        break;
      }
      case Op::Kind::flatten:
        break;
    }
  }
  return out;
}

/// Row-wise argmax, ties resolved toward the lowest class index.
inline std::vector<std::size_t> argmax_rows(const Matrix& m) {
  std::vector<std::size_t> out(m.rows(), 0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    for (std::size_t c = 1; c < r.size(); ++c)
      if (r[c] > r[out[i]]) out[i] = c;
  }
  return out;
}

/// Copy of `spec` with every hidden Dense layer set to `width` units.
inline ModelSpec with_hidden_width(ModelSpec spec, std::size_t width) {
  for (auto& layer : spec.layers)
    if (auto* d = std::get_if<Dense>(&layer)) d->width = width;
  return spec;
}

}  // namespace pqdl
