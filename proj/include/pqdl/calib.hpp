#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "pqdl/data.hpp"
#include "pqdl/nn.hpp"

namespace pqdl {

/// Scalar softmax temperature, parameterized as T = exp(log_t) so that
/// positivity needs no projection.
struct Temperature {
  double log_t = 0.0;
  std::size_t steps = 0;

  double value() const noexcept { return std::exp(log_t); }
  friend bool operator==(const Temperature&, const Temperature&) = default;
};

struct CalibPolicy {
  std::size_t train_steps_per_calib_step = 10;
  std::size_t batch_size = 256;  // capped at the calibration-set size
  double lr = 0.01;
  std::size_t refine_steps = 200;

  void validate() const {
    if (train_steps_per_calib_step == 0 || batch_size == 0 || !(lr > 0.0))
      throw TrainingError("calibration policy values must be positive");
  }
};

inline Matrix calibrated_probs(const Matrix& logits, const Temperature& t) {
  Matrix p(logits.rows(), logits.cols());
  const double s = std::exp(-t.log_t);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto z = logits.row(i);
    auto q = p.row(i);
    double m = -std::numeric_limits<double>::infinity();
    for (double v : z) m = std::max(m, v * s);
    double sum = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) sum += (q[c] = std::exp(z[c] * s - m));
    for (double& v : q) v /= sum;
  }
  return p;
}

/// Mean calibrated cross-entropy as a function of u = log T, with its first
/// and second derivatives. With s = exp(-u):
///   loss_i = LSE(s z_i) - s z_iy
///   dloss_i/du = s (z_iy - E_p[z_i])
///   d2loss_i/du2 = -s (z_iy - E_p[z_i]) + s^2 Var_p[z_i]
struct CalibObjective {
  double loss = 0.0;
  double grad = 0.0;
  double curvature = 0.0;
};

inline CalibObjective calib_objective(const Matrix& logits, std::span<const std::size_t> labels,
                                      double log_t) {
  if (labels.size() != logits.rows()) throw ShapeError("calib_objective: label count mismatch");
  CalibObjective out;
  const std::size_t n = logits.rows();
  if (n == 0) return out;
  const double s = std::exp(-log_t);
  std::vector<double> p(logits.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const auto z = logits.row(i);
    double m = -std::numeric_limits<double>::infinity();
    for (double v : z) m = std::max(m, v * s);
    double sum = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) sum += (p[c] = std::exp(z[c] * s - m));
    double ez = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) ez += (p[c] /= sum) * z[c];
    double var = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) var += p[c] * (z[c] - ez) * (z[c] - ez);
    const double zy = z[labels[i]];
    out.loss += std::log(sum) - (s * zy - m);
    out.grad += s * (zy - ez);
    out.curvature += -s * (zy - ez) + s * s * var;
  }
  const double inv = 1.0 / static_cast<double>(n);
  out.loss *= inv;
  out.grad *= inv;
  out.curvature *= inv;
  return out;
}

/// One plain gradient-descent step on log T. Model parameters are not
/// inputs here, so calibration can never write them.
inline Temperature calib_step(const Temperature& t, const Matrix& logits,
                              std::span<const std::size_t> labels, double lr) {
  const CalibObjective obj = calib_objective(logits, labels, t.log_t);
  return {t.log_t - lr * obj.grad, t.steps + 1};
}

/// Full-batch refinement: up to `max_steps` gradient-descent steps on log T
/// at rate `lr`, starting from whichever of `start` and T = 1 has the lower
/// loss. A step that would not decrease the loss is halved until it does,
/// so the result never does worse than T = 1. The step budget is the only
/// brake on a calibration set the model already separates perfectly, where
/// the loss keeps falling as T approaches 0.
inline Temperature refine_temperature(const Temperature& start, const Matrix& logits,
                                      std::span<const std::size_t> labels,
                                      std::size_t max_steps = 200, double lr = 0.01) {
  Temperature t = start;
  if (logits.rows() == 0) return t;
  CalibObjective cur = calib_objective(logits, labels, t.log_t);
  if (t.log_t != 0.0) {
    const CalibObjective unit = calib_objective(logits, labels, 0.0);
    if (unit.loss <= cur.loss) {
      t.log_t = 0.0;
      cur = unit;
    }
  }
  for (std::size_t it = 0; it < max_steps; ++it) {
    if (cur.grad == 0.0) break;
    double step = -lr * cur.grad;
    bool improved = false;
    for (int halvings = 0; halvings < 40 && !improved; ++halvings, step *= 0.5) {
      const CalibObjective next = calib_objective(logits, labels, t.log_t + step);
      if (next.loss < cur.loss) {
        t.log_t += step;
        cur = next;
        improved = true;
      }
    }
    if (!improved) break;
    ++t.steps;
  }
  return t;
}

struct CalibratedEval {
  double nats_mean = 0.0;
  std::vector<double> nats;  // per example
  double error_rate = 0.0;
};

/// Eval-mode logits for a whole dataset, evaluated in fixed-size chunks.
inline Matrix dataset_logits(const ModelSpec& spec, const ModelParams& params,
                             const Dataset& data) {
  constexpr std::size_t kChunk = 512;
  Matrix logits(data.size(), spec.num_classes);
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t end = std::min(data.size(), start + kChunk);
    rows.resize(end - start);
    for (std::size_t i = start; i < end; ++i) rows[i - start] = i;
    const Matrix part = forward(spec, params, data.batch(rows), Mode::eval);
    std::copy(part.values().begin(), part.values().end(),
              logits.values().begin() + static_cast<std::ptrdiff_t>(start * spec.num_classes));
  }
  return logits;
}

inline CalibratedEval calibrated_xent(const Matrix& logits, std::span<const std::size_t> labels,
                                      const Temperature& t) {
  if (labels.empty()) throw DataError("calibrated_xent: empty dataset");
  const XentResult x = softmax_xent(logits, labels, t.value());
  CalibratedEval out{x.mean_loss, x.losses, 0.0};
  const auto pred = argmax_rows(logits);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) wrong += pred[i] != labels[i];
  out.error_rate = static_cast<double>(wrong) / static_cast<double>(labels.size());
  return out;
}

/// Full-batch eval-mode cross-entropy at temperature `t`, per-example losses
/// and error rate (argmax of the raw logits, lowest index on ties).
inline CalibratedEval calibrated_xent(const ModelSpec& spec, const ModelParams& params,
                                      const Temperature& t, const Dataset& data) {
  if (data.size() == 0) throw DataError("calibrated_xent: empty dataset");
  return calibrated_xent(dataset_logits(spec, params, data), data.labels, t);
}

}  // namespace pqdl
