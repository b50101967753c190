#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "pqdl/error.hpp"
#include "pqdl/nn.hpp"

namespace pqdl {

enum class OptimizerKind { adam, momentum_sgd_cosine, rmsprop_cosine };

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::adam;
  std::vector<double> learning_rates;
  std::size_t epochs = 50;
  double momentum = 0.9;
  double epsilon = 1e-8;
  std::size_t batch_size = 256;
  double beta1 = 0.9;       // adam
  double beta2 = 0.999;     // adam
  double rms_decay = 0.9;   // rmsprop

  /// Fixed learning rates {1e-4, 3e-4, 1e-3}.
  static OptimizerSpec adam() {
    OptimizerSpec s;
    s.kind = OptimizerKind::adam;
    s.learning_rates = {1e-4, 3e-4, 1e-3};
    s.epsilon = 1e-8;
    return s;
  }
  /// Heavy-ball momentum 0.9, cosine decay to 0, {1e-4, 3e-4, ..., 1e-1}.
  static OptimizerSpec momentum_sgd() {
    OptimizerSpec s;
    s.kind = OptimizerKind::momentum_sgd_cosine;
    s.learning_rates = {1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1};
    s.epsilon = 1e-4;
    return s;
  }
  /// RMSProp with momentum 0.9 and epsilon 1, cosine decay, {0.03, 0.1, 0.3}.
  static OptimizerSpec rmsprop() {
    OptimizerSpec s;
    s.kind = OptimizerKind::rmsprop_cosine;
    s.learning_rates = {0.03, 0.1, 0.3};
    s.epsilon = 1.0;
    return s;
  }

  void validate() const {
    if (learning_rates.empty()) throw TrainingError("optimizer needs at least one learning rate");
    for (double lr : learning_rates)
      if (!(lr > 0.0) || !std::isfinite(lr))
        throw TrainingError("learning rates must be positive and finite");
    if (batch_size == 0) throw TrainingError("batch size must be positive");
  }

  bool cosine() const noexcept { return kind != OptimizerKind::adam; }
};

/// Per-parameter buffers, flattened in ModelParams::blocks() order.
struct OptimState {
  std::size_t step = 0;
  std::vector<double> first;   // adam m / sgd velocity / rmsprop momentum
  std::vector<double> second;  // adam v / rmsprop mean square
};

/// lr0 * (1 + cos(pi * step / total)) / 2; reaches 0 at step == total.
inline double cosine_lr(double lr0, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) return lr0;
  if (step >= total_steps) return 0.0;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

/// One in-place update of `params` from `grads` at learning rate `lr`.
/// Throws TrainingError on a non-finite gradient; params are untouched then.
inline void optimizer_step(const OptimizerSpec& spec, OptimState& state, ModelParams& params,
                           const ModelParams& grads, double lr) {
  auto pblocks = params.blocks();
  const auto gblocks = grads.blocks();
  if (pblocks.size() != gblocks.size()) throw ShapeError("optimizer_step: gradient layout mismatch");
  const std::size_t n = params.count();
  for (std::size_t b = 0; b < pblocks.size(); ++b) {
    if (pblocks[b].size() != gblocks[b].size())
      throw ShapeError("optimizer_step: gradient block size mismatch");
    for (double g : gblocks[b])
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient");
  }
  if (state.first.size() != n) state.first.assign(n, 0.0);
  if (spec.kind != OptimizerKind::momentum_sgd_cosine && state.second.size() != n)
    state.second.assign(n, 0.0);
  ++state.step;

  double* m = state.first.data();
  double* v = state.second.data();
  switch (spec.kind) {
    case OptimizerKind::adam: {
      const double t = static_cast<double>(state.step);
      const double c1 = 1.0 - std::pow(spec.beta1, t);
      const double c2 = 1.0 - std::pow(spec.beta2, t);
      for (std::size_t b = 0; b < pblocks.size(); ++b) {
        for (std::size_t i = 0; i < pblocks[b].size(); ++i, ++m, ++v) {
          const double g = gblocks[b][i];
          *m = spec.beta1 * *m + (1.0 - spec.beta1) * g;
          *v = spec.beta2 * *v + (1.0 - spec.beta2) * g * g;
          pblocks[b][i] -= lr * (*m / c1) / (std::sqrt(*v / c2) + spec.epsilon);
        }
      }
      break;
    }
    case OptimizerKind::momentum_sgd_cosine: {
      for (std::size_t b = 0; b < pblocks.size(); ++b) {
        for (std::size_t i = 0; i < pblocks[b].size(); ++i, ++m) {
          *m = spec.momentum * *m + gblocks[b][i];
          pblocks[b][i] -= lr * *m;
        }
      }
      break;
    }
    case OptimizerKind::rmsprop_cosine: {
      // TensorFlow's momentum RMSProp: ms += (1-rho)(g^2 - ms);
      // mom = mu * mom + lr * g / sqrt(ms + eps); p -= mom.
      for (std::size_t b = 0; b < pblocks.size(); ++b) {
        for (std::size_t i = 0; i < pblocks[b].size(); ++i, ++m, ++v) {
          const double g = gblocks[b][i];
          *v = spec.rms_decay * *v + (1.0 - spec.rms_decay) * g * g;
          *m = spec.momentum * *m + lr * g / std::sqrt(*v + spec.epsilon);
          pblocks[b][i] -= *m;
        }
      }
      break;
    }
  }
}

inline std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::momentum_sgd_cosine: return "momentum_sgd_cosine";
    case OptimizerKind::rmsprop_cosine: return "rmsprop_cosine";
  }
  return "?";
}

}  // namespace pqdl
