#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "pqdl/calib.hpp"
#include "pqdl/data.hpp"
#include "pqdl/hash.hpp"
#include "pqdl/nn.hpp"
#include "pqdl/optim.hpp"

namespace pqdl {

/// An epoch is the number of steps needed to pass once over the full-sized
/// dataset, whatever the size of the subset actually trained on.
struct EpochConvention {
  std::size_t full_dataset_size = 0;

  std::size_t steps_per_epoch(std::size_t batch_size) const {
    if (batch_size == 0) throw TrainingError("batch size must be positive");
    return (full_dataset_size + batch_size - 1) / batch_size;
  }
};

struct HistoryRecord {
  std::size_t step = 0;
  double train_nats = 0.0;      // mean minibatch loss since the previous record
  double calib_nats_raw = 0.0;  // T = 1
  double calib_nats_cal = 0.0;  // current temperature
  double calib_err = 0.0;
  double learning_rate = 0.0;
};

struct TrainRun {
  ModelParams params;
  Temperature temperature;
  std::vector<HistoryRecord> history;
  double learning_rate = 0.0;  // initial learning rate of this run
  std::size_t gradient_steps = 0;
  double calib_nats = std::numeric_limits<double>::quiet_NaN();  // after refinement
};

/// Instrumentation: counts how often each source example (by origin index)
/// fed a weight gradient.
struct TrainProbe {
  std::vector<std::size_t> gradient_uses;
  std::size_t calib_steps = 0;

  void record(const Dataset& d, std::span<const std::size_t> rows) {
    for (std::size_t r : rows) {
      const std::size_t o = d.origin.empty() ? r : d.origin[r];
      if (o >= gradient_uses.size()) gradient_uses.resize(o + 1, 0);
      ++gradient_uses[o];
    }
  }
};

struct TrainOptions {
  TrainProbe* probe = nullptr;
  /// Applied to the gradient before every optimizer step (tests use it to
  /// freeze a model).
  std::function<void(ModelParams&)> gradient_filter;
  /// Hard cap on gradient steps; 0 means no cap.
  std::size_t max_steps = 0;
};

namespace detail {

/// Endless stream of fixed-size minibatches: consecutive passes over the
/// rows, each pass freshly shuffled from Rng::stream(seed, stream, {pass}).
/// A batch that crosses a pass boundary continues into the next pass.
class BatchStream {
 public:
  BatchStream(std::size_t n, std::size_t batch, std::uint64_t seed, Stream stream)
      : n_(n), batch_(std::min(batch, n)), seed_(seed), stream_(stream) {}

  std::vector<std::size_t> next() {
    std::vector<std::size_t> rows;
    rows.reserve(batch_);
    while (rows.size() < batch_) {
      if (cursor_ == order_.size()) reshuffle();
      rows.push_back(order_[cursor_++]);
    }
    return rows;
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), 0);
    auto rng = Rng::stream(seed_, stream_, {pass_++});
    rng.shuffle(std::span<std::size_t>(order_));
    cursor_ = 0;
  }

  std::size_t n_;
  std::size_t batch_;
  std::uint64_t seed_;
  Stream stream_;
  std::uint64_t pass_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

inline void check_train_inputs(const ModelSpec& spec, const Dataset& train,
                               const Dataset& calib) {
  if (train.size() == 0) throw TrainingError("empty training set");
  if (calib.size() == 0) throw TrainingError("empty calibration set");
  if (train.inputs.cols() != spec.input.size() || calib.inputs.cols() != spec.input.size())
    throw ShapeError("dataset width does not match model input");
}

/// Shared body of train() and train_auto_anneal(). `on_epoch` is called at
/// each epoch boundary with the current state and returns false to stop.
template <class LrFn, class EpochFn>
TrainRun run_training(const ModelSpec& spec, const OptimizerSpec& opt, double lr0,
                      const Dataset& train, const Dataset& calib, std::size_t steps_per_epoch,
                      std::size_t total_steps, std::uint64_t seed, const CalibPolicy& policy,
                      const TrainOptions& options, LrFn&& lr_at, EpochFn&& on_epoch) {
  check_train_inputs(spec, train, calib);
  policy.validate();
  TrainRun run;
  run.params = init_params(spec, seed);
  run.learning_rate = lr0;
  OptimState state;
  BatchStream batches(train.size(), opt.batch_size, seed, Stream::shuffle);
  BatchStream calib_batches(calib.size(), policy.batch_size, seed, Stream::calibration);

  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  for (std::size_t step = 0; step < total_steps; ++step) {
    if (options.max_steps != 0 && step >= options.max_steps) break;
    const double lr = lr_at(step);
    const auto rows = batches.next();
    if (options.probe) options.probe->record(train, rows);
    const std::uint64_t dropout_seed = Rng::stream(seed, Stream::dropout, {step}).next();
    GradResult g = backward(spec, run.params, train.batch(rows), 1.0, Mode::train, dropout_seed);
    if (options.gradient_filter) options.gradient_filter(g.grads);
    optimizer_step(opt, state, run.params, g.grads, lr);
    ++run.gradient_steps;
    loss_sum += g.mean_loss;
    ++loss_count;

    if ((step + 1) % policy.train_steps_per_calib_step == 0) {
      const auto crow = calib_batches.next();
      const Batch cb = calib.batch(crow);
      const Matrix logits = forward(spec, run.params, cb, Mode::eval);
      run.temperature = calib_step(run.temperature, logits, cb.labels, policy.lr);
      if (options.probe) ++options.probe->calib_steps;
    }

    const bool epoch_end = (step + 1) % steps_per_epoch == 0;
    if (epoch_end || step + 1 == total_steps) {
      const Matrix logits = dataset_logits(spec, run.params, calib);
      HistoryRecord rec;
      rec.step = step + 1;
      rec.train_nats = loss_sum / static_cast<double>(loss_count);
      rec.calib_nats_raw = calibrated_xent(logits, calib.labels, Temperature{}).nats_mean;
      const CalibratedEval cal = calibrated_xent(logits, calib.labels, run.temperature);
      rec.calib_nats_cal = cal.nats_mean;
      rec.calib_err = cal.error_rate;
      rec.learning_rate = lr;
      run.history.push_back(rec);
      loss_sum = 0.0;
      loss_count = 0;
      if (epoch_end && !on_epoch(run, logits)) break;
    }
  }
  return run;
}

}  // namespace detail

/// Trains `spec` from its seeded initialization for epochs * steps_per_epoch
/// minibatch steps at temperature 1, interleaving one temperature step on a
/// calibration minibatch every `policy.train_steps_per_calib_step` steps.
/// Weight gradients only ever see `train_set`.
inline TrainRun train(const ModelSpec& spec, const OptimizerSpec& opt, double lr0,
                      const Dataset& train_set, const Dataset& calib_set,
                      const EpochConvention& epochs, std::uint64_t seed,
                      const CalibPolicy& policy, const TrainOptions& options = {}) {
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw TrainingError("learning rate must be finite");
  const std::size_t spe = epochs.steps_per_epoch(opt.batch_size);
  const std::size_t total = opt.epochs * spe;
  auto lr_at = [&](std::size_t step) {
    return opt.cosine() ? cosine_lr(lr0, step, total) : lr0;
  };
  return detail::run_training(spec, opt, lr0, train_set, calib_set, spe, total, seed, policy,
                              options, lr_at, [](const TrainRun&, const Matrix&) { return true; });
}

/// Refines the run's temperature on the full calibration set and records the
/// resulting calibrated cross-entropy in `run.calib_nats`.
inline void finalize_calibration(const ModelSpec& spec, TrainRun& run, const Dataset& calib_set,
                                 const CalibPolicy& policy) {
  const Matrix logits = dataset_logits(spec, run.params, calib_set);
  run.temperature = refine_temperature(run.temperature, logits, calib_set.labels,
                                       policy.refine_steps, policy.lr);
  run.calib_nats = calibrated_xent(logits, calib_set.labels, run.temperature).nats_mean;
}

struct SweepResult {
  double best_lr = 0.0;
  TrainRun run;
  std::vector<double> candidate_nats;  // refined calibration loss per candidate
};

/// One run per candidate learning rate with identical seeds; keeps the run
/// with the lowest refined calibration loss. Ties go to the smaller rate,
/// then to the earlier candidate.
inline SweepResult sweep_lr(const ModelSpec& spec, const OptimizerSpec& opt,
                            const Dataset& train_set, const Dataset& calib_set,
                            const EpochConvention& epochs, std::uint64_t seed,
                            const CalibPolicy& policy, const TrainOptions& options = {}) {
  opt.validate();
  SweepResult best;
  bool have = false;
  for (double lr : opt.learning_rates) {
    TrainRun run = train(spec, opt, lr, train_set, calib_set, epochs, seed, policy, options);
    finalize_calibration(spec, run, calib_set, policy);
    best.candidate_nats.push_back(run.calib_nats);
    const bool better = !have || run.calib_nats < best.run.calib_nats ||
                        (run.calib_nats == best.run.calib_nats && lr < best.best_lr);
    if (better) {
      best.best_lr = lr;
      best.run = std::move(run);
      have = true;
    }
  }
  return best;
}

struct AnnealPolicy {
  std::size_t patience = 3;
  double drop_factor = 10.0;
  double floor_ratio = 1e-3;
  std::size_t max_steps = 0;  // 0: no cap
};

struct AnnealRun {
  TrainRun run;
  std::size_t drops = 0;
  double final_lr = 0.0;
  bool reached_floor = false;
};

/// Constant learning rate, evaluated once per epoch by the fully calibrated
/// cross-entropy on the calibration set. After `patience` consecutive
/// evaluations without improvement over the best seen (the untrained model
/// counts as the first), the rate is divided by `drop_factor`; training
/// stops once it has fallen to `floor_ratio` of its initial value.
inline AnnealRun train_auto_anneal(const ModelSpec& spec, const OptimizerSpec& opt,
                                   double initial_lr, const Dataset& train_set,
                                   const Dataset& calib_set, const EpochConvention& epochs,
                                   std::uint64_t seed, const CalibPolicy& policy,
                                   const AnnealPolicy& anneal, TrainOptions options = {}) {
  if (!(initial_lr > 0.0)) throw TrainingError("initial learning rate must be positive");
  if (anneal.patience == 0 || !(anneal.drop_factor > 1.0) ||
      !(anneal.floor_ratio > 0.0 && anneal.floor_ratio < 1.0))
    throw TrainingError("invalid annealing policy");
  detail::check_train_inputs(spec, train_set, calib_set);
  const std::size_t spe = epochs.steps_per_epoch(opt.batch_size);
  options.max_steps = anneal.max_steps;

  // Refined from T = 1 each time, so the score depends on the weights only.
  auto calibrated_loss = [&](const Matrix& logits) {
    const Temperature refined =
        refine_temperature(Temperature{}, logits, calib_set.labels, policy.refine_steps, policy.lr);
    return calibrated_xent(logits, calib_set.labels, refined).nats_mean;
  };

  AnnealRun out;
  double lr = initial_lr;
  std::size_t stale = 0;
  double best = calibrated_loss(dataset_logits(spec, init_params(spec, seed), calib_set));
  auto on_epoch = [&](const TrainRun&, const Matrix& logits) {
    const double loss = calibrated_loss(logits);
    if (loss < best - 1e-12 * std::abs(best)) {
      best = loss;
      stale = 0;
    } else if (++stale >= anneal.patience) {
      lr /= anneal.drop_factor;
      ++out.drops;
      stale = 0;
      if (std::pow(anneal.drop_factor, static_cast<double>(out.drops)) * anneal.floor_ratio >=
          1.0 - 1e-9) {
        out.reached_floor = true;
        return false;
      }
    }
    return true;
  };
  const std::size_t unbounded = std::numeric_limits<std::size_t>::max() - 1;
  out.run = detail::run_training(spec, opt, initial_lr, train_set, calib_set, spe,
                                 anneal.max_steps ? anneal.max_steps : unbounded, seed, policy,
                                 options, [&](std::size_t) { return lr; }, on_epoch);
  finalize_calibration(spec, out.run, calib_set, policy);
  out.final_lr = lr;
  return out;
}

inline std::uint64_t params_hash(const ModelParams& p) {
  Fnv1a h;
  for (auto block : p.blocks()) h.f64s(block);
  return h.value();
}

/// The complete, deterministic fitting procedure applied to one subset:
/// train/calibration split, learning-rate sweep, temperature refinement.
struct TrainingRecipe {
  OptimizerSpec optimizer = OptimizerSpec::adam();
  CalibPolicy calibration;
  double calib_fraction = 0.10;
  std::size_t full_dataset_size = 0;
};

struct RecipeFit {
  SweepResult sweep;
  std::size_t train_size = 0;
  std::size_t calib_size = 0;
};

/// The split is keyed on (seed, subset size) so sender and receiver derive
/// the same partition from the transmitted prefix alone.
inline RecipeFit fit_recipe(const ModelSpec& spec, const TrainingRecipe& recipe,
                            const Dataset& subset, std::uint64_t seed,
                            const TrainOptions& options = {}) {
  const TrainCalibSplit split = split_train_calib(subset, {recipe.calib_fraction, seed});
  RecipeFit fit;
  fit.train_size = split.train.size();
  fit.calib_size = split.calib.size();
  const EpochConvention conv{recipe.full_dataset_size ? recipe.full_dataset_size : subset.size()};
  fit.sweep = sweep_lr(spec, recipe.optimizer, split.train, split.calib, conv, seed,
                       recipe.calibration, options);
  return fit;
}

}  // namespace pqdl
