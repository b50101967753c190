#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "pqdl/calib.hpp"
#include "pqdl/data.hpp"
#include "pqdl/error.hpp"
#include "pqdl/hash.hpp"
#include "pqdl/jobs.hpp"
#include "pqdl/train.hpp"

namespace pqdl {

/// Mixing weight of the uniform distribution added to every predictive
/// distribution before coding: p' = (1 - K eps) p + eps.
inline constexpr double kProbabilityFloor = 0x1p-16;

/// Block boundaries n_0 < n_1 < ... < n_B = N. The first n_0 labels are coded
/// under the uniform distribution; block b (b >= 1) holds transmission
/// positions [n_{b-1}, n_b) and is coded by a model fit on the first n_{b-1}.
struct BlockSchedule {
  std::vector<std::size_t> boundaries;

  /// n_0 = first, then doubling (times `factor`) while below N, then N.
  static BlockSchedule geometric(std::size_t first, std::size_t total, double factor = 2.0) {
    if (first == 0 || total == 0) throw DataError("geometric schedule needs positive sizes");
    if (!(factor > 1.0)) throw DataError("geometric schedule factor must exceed 1");
    BlockSchedule s;
    double n = static_cast<double>(std::min(first, total));
    while (static_cast<std::size_t>(n) < total) {
      const auto b = static_cast<std::size_t>(n);
      if (s.boundaries.empty() || b > s.boundaries.back()) s.boundaries.push_back(b);
      n *= factor;
    }
    s.boundaries.push_back(total);
    return s;
  }

  /// Every other interior boundary dropped (first and last kept).
  BlockSchedule coarsened() const {
    BlockSchedule c;
    for (std::size_t i = 0; i < boundaries.size(); ++i)
      if (i % 2 == 0 || i + 1 == boundaries.size()) c.boundaries.push_back(boundaries[i]);
    if (c.boundaries.size() >= 2 && c.boundaries[c.boundaries.size() - 2] == c.boundaries.back())
      c.boundaries.pop_back();
    return c;
  }

  std::size_t total() const { return boundaries.empty() ? 0 : boundaries.back(); }
  std::size_t blocks() const { return boundaries.size(); }

  void validate(std::size_t n) const {
    if (n == 0) return;
    if (boundaries.empty()) throw DataError("empty block schedule");
    for (std::size_t i = 0; i < boundaries.size(); ++i) {
      if (boundaries[i] == 0) throw DataError("schedule boundaries must be positive");
      if (i > 0 && boundaries[i] <= boundaries[i - 1])
        throw DataError("schedule boundaries must strictly increase");
    }
    if (boundaries.back() != n)
      throw DataError("schedule ends at " + std::to_string(boundaries.back()) +
                      " but the dataset has " + std::to_string(n) + " examples");
    if (boundaries.size() > 1 && boundaries.front() < 2)
      throw DataError("the first block must hold at least 2 examples to train on");
  }

  friend bool operator==(const BlockSchedule&, const BlockSchedule&) = default;
};

struct BlockRecord {
  std::size_t n_train = 0;                    // prefix size the coding model saw
  std::vector<std::size_t> example_indices;   // dataset rows, transmission order
  std::vector<double> nats;                   // -ln p'(y) per example
  double total = 0.0;
  std::uint64_t model_hash = 0;               // params + temperature; 0 for uniform
  double learning_rate = 0.0;
  double temperature = 1.0;
};

struct CodeLedger {
  std::vector<BlockRecord> blocks;
  double total_nats = 0.0;  // compensated sum of every per-example entry, in order
};

struct BlockPrediction {
  Matrix probs;  // floored predictive distributions, one row per block example
  std::uint64_t model_hash = 0;
  double learning_rate = 0.0;
  double temperature = 1.0;
};

inline void apply_probability_floor(Matrix& probs, double eps = kProbabilityFloor) {
  const double k = static_cast<double>(probs.cols());
  if (!(k * eps < 1.0)) throw CodecError("too many classes for the probability floor");
  for (double& p : probs.values()) p = (1.0 - k * eps) * p + eps;
}

inline std::uint64_t model_hash(const ModelParams& params, const Temperature& t) {
  return Fnv1a().u64(params_hash(params)).f64(t.log_t).value();
}

/// Trains the full recipe on `prefix` and predicts the coding distributions
/// for `block_inputs`.
inline BlockPrediction predict_block(const ModelSpec& spec, const TrainingRecipe& recipe,
                                     const Dataset& prefix, const Matrix& block_inputs,
                                     std::uint64_t seed) {
  const RecipeFit fit = fit_recipe(spec, recipe, prefix, seed);
  const TrainRun& run = fit.sweep.run;
  Batch b{block_inputs, {}};
  BlockPrediction out;
  out.probs = calibrated_probs(forward(spec, run.params, b, Mode::eval), run.temperature);
  apply_probability_floor(out.probs);
  out.model_hash = model_hash(run.params, run.temperature);
  out.learning_rate = fit.sweep.best_lr;
  out.temperature = run.temperature.value();
  return out;
}

/// Walks the prequential protocol over a dataset whose labels are revealed
/// block by block. `code_block(b, rows, prediction)` receives the dataset
/// rows of block b in transmission order and the coding distributions and
/// must return their labels: an encoder looks them up, a decoder reads them
/// from the bitstream. Training only ever sees labels already returned.
template <class CodeBlock>
void walk_prequential(const ModelSpec& spec, const TrainingRecipe& recipe, const Matrix& inputs,
                      const Shape& shape, std::size_t num_classes, const BlockSchedule& schedule,
                      std::uint64_t seed, CodeBlock&& code_block) {
  const std::size_t n = inputs.rows();
  schedule.validate(n);
  if (n == 0) return;
  const std::vector<std::size_t> order = transmission_order(n, seed);
  TrainingRecipe block_recipe = recipe;
  if (block_recipe.full_dataset_size == 0) block_recipe.full_dataset_size = n;

  Dataset known;
  known.inputs = inputs;
  known.labels.assign(n, 0);
  known.num_classes = num_classes;
  known.shape = shape;
  known.origin.resize(n);
  std::iota(known.origin.begin(), known.origin.end(), 0);

  std::size_t done = 0;
  for (std::size_t b = 0; b < schedule.boundaries.size(); ++b) {
    const std::size_t end = schedule.boundaries[b];
    const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(done),
                                        order.begin() + static_cast<std::ptrdiff_t>(end));
    BlockPrediction pred;
    if (b == 0) {
      pred.probs = Matrix(rows.size(), num_classes, 1.0 / static_cast<double>(num_classes));
    } else {
      const Dataset prefix = known.subset(std::span(order).first(done));
      Matrix block_inputs(rows.size(), inputs.cols());
      for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(inputs.row(rows[i]).begin(), inputs.cols(), block_inputs.row(i).begin());
      pred = predict_block(spec, block_recipe, prefix, block_inputs, seed);
    }
    const std::vector<std::size_t> labels = code_block(b, rows, pred);
    if (labels.size() != rows.size()) throw CodecError("block coder returned wrong label count");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (labels[i] >= num_classes) throw CodecError("decoded label out of range");
      known.labels[rows[i]] = labels[i];
    }
    done = end;
  }
}

/// Neumaier-compensated running sum: fixed order, error independent of the
/// number of terms to first order.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

struct PrequentialResult {
  double dl_nats = 0.0;
  CodeLedger ledger;
};

/// Prequential description length of the labels of `dataset` (inputs are
/// common knowledge), in nats.
inline PrequentialResult prequential_dl(const ModelSpec& spec, const TrainingRecipe& recipe,
                                        const Dataset& dataset, const BlockSchedule& schedule,
                                        std::uint64_t seed) {
  dataset.validate();
  const double uniform_nats = std::log(static_cast<double>(dataset.num_classes));
  PrequentialResult out;
  CompensatedSum grand;
  walk_prequential(spec, recipe, dataset.inputs, dataset.shape, dataset.num_classes, schedule,
                   seed,
                   [&](std::size_t b, const std::vector<std::size_t>& rows,
                       const BlockPrediction& pred) {
                     BlockRecord rec;
                     rec.n_train = b == 0 ? 0 : schedule.boundaries[b - 1];
                     rec.example_indices = rows;
                     rec.model_hash = pred.model_hash;
                     rec.learning_rate = pred.learning_rate;
                     rec.temperature = pred.temperature;
                     std::vector<std::size_t> labels;
                     CompensatedSum block;
                     for (std::size_t i = 0; i < rows.size(); ++i) {
                       const std::size_t y = dataset.labels[rows[i]];
                       const double nats = b == 0 ? uniform_nats : -std::log(pred.probs(i, y));
                       if (!std::isfinite(nats) || !(nats > 0.0))
                         throw TrainingError("non-finite or non-positive code length");
                       rec.nats.push_back(nats);
                       block.add(nats);
                       grand.add(nats);
                       labels.push_back(y);
                     }
                     rec.total = block.value();
                     out.ledger.blocks.push_back(std::move(rec));
                     return labels;
                   });
  out.dl_nats = grand.value();
  out.ledger.total_nats = out.dl_nats;
  return out;
}

/// Learning curve implied by a ledger: (n_{b-1}, mean nats of block b) for
/// every model-coded block, extended flat to N.
inline std::vector<std::pair<std::size_t, double>> ledger_curve(const CodeLedger& ledger) {
  std::vector<std::pair<std::size_t, double>> curve;
  std::size_t n_end = 0;
  for (const auto& blk : ledger.blocks) {
    n_end = blk.n_train + blk.nats.size();
    if (blk.n_train == 0) continue;
    curve.emplace_back(blk.n_train, blk.total / static_cast<double>(blk.nats.size()));
  }
  if (!curve.empty() && curve.back().first < n_end) curve.emplace_back(n_end, curve.back().second);
  return curve;
}

/// Trapezoid approximation of the description length from a learning curve
/// of per-example calibrated generalization loss: the first n_0 labels cost
/// ln K each and the area under the curve covers [n_0, n_last].
inline double auc_dl(const std::vector<std::pair<std::size_t, double>>& curve,
                     std::size_t num_classes) {
  if (curve.empty()) throw DataError("auc_dl: empty curve");
  if (num_classes < 2) throw DataError("auc_dl: need at least 2 classes");
  for (std::size_t i = 1; i < curve.size(); ++i)
    if (curve[i].first <= curve[i - 1].first)
      throw DataError("auc_dl: curve sizes must strictly increase");
  double dl = static_cast<double>(curve.front().first) * std::log(static_cast<double>(num_classes));
  for (std::size_t i = 1; i < curve.size(); ++i)
    dl += 0.5 * (curve[i - 1].second + curve[i].second) *
          static_cast<double>(curve[i].first - curve[i - 1].first);
  return dl;
}

/// Keeps every other interior point of a curve (endpoints retained).
inline std::vector<std::pair<std::size_t, double>> halve_resolution(
    const std::vector<std::pair<std::size_t, double>>& curve) {
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t i = 0; i < curve.size(); ++i)
    if (i % 2 == 0 || i + 1 == curve.size()) out.push_back(curve[i]);
  return out;
}

struct DLEstimate {
  std::string model;
  std::string dataset_id;
  BlockSchedule schedule;
  double dl_nats = 0.0;                     // mean over seeds, primary schedule
  std::vector<double> replicates;           // per seed, primary schedule
  std::vector<double> coarse_replicates;    // per seed, coarsened schedule
  double seed_std = 0.0;
  double schedule_std = 0.0;
  double uncertainty = 0.0;                 // seed_std and schedule_std in quadrature
};

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Sample standard deviation (n - 1); 0 for fewer than two values.
inline double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

/// Aggregates per-seed description lengths on the primary and the coarsened
/// schedule into a DLEstimate.
inline DLEstimate summarize_dl(std::string model, std::string dataset_id, BlockSchedule schedule,
                               std::vector<double> fine, std::vector<double> coarse) {
  DLEstimate e;
  e.model = std::move(model);
  e.dataset_id = std::move(dataset_id);
  e.schedule = std::move(schedule);
  e.replicates = std::move(fine);
  e.coarse_replicates = std::move(coarse);
  e.dl_nats = mean_of(e.replicates);
  e.seed_std = stddev_of(e.replicates);
  e.schedule_std = e.coarse_replicates.empty()
                       ? 0.0
                       : stddev_of({e.dl_nats, mean_of(e.coarse_replicates)});
  e.uncertainty = std::hypot(e.seed_std, e.schedule_std);
  return e;
}

inline std::string dataset_id(const Dataset& d) {
  Fnv1a h;
  h.str(d.provenance).u64(d.size()).u64(d.num_classes).f64s(d.inputs.values());
  for (std::size_t y : d.labels) h.u64(y);
  return hex64(h.value());
}

/// Per-seed prequential runs on `schedule` and on its coarsened variant.
inline DLEstimate estimate_dl(const std::string& model, const ModelSpec& spec,
                              const TrainingRecipe& recipe, const Dataset& dataset,
                              const BlockSchedule& schedule,
                              const std::vector<std::uint64_t>& seeds, bool with_coarse = true,
                              std::size_t jobs = 1) {
  const BlockSchedule coarse = schedule.coarsened();
  const bool coarse_differs = with_coarse && !(coarse == schedule);
  const std::size_t per_seed = coarse_differs ? 2 : 1;
  const auto dls = parallel_map(seeds.size() * per_seed, jobs, [&](std::size_t task) {
    const auto& sched = task % per_seed == 0 ? schedule : coarse;
    return prequential_dl(spec, recipe, dataset, sched, seeds[task / per_seed]).dl_nats;
  });
  std::vector<double> fine;
  std::vector<double> rough;
  for (std::size_t i = 0; i < dls.size(); ++i) (i % per_seed == 0 ? fine : rough).push_back(dls[i]);
  return summarize_dl(model, dataset_id(dataset), schedule, std::move(fine), std::move(rough));
}

struct EvidenceCell {
  double delta_nats = 0.0;   // DL(row) - DL(col)
  double uncertainty = 0.0;
};

struct EvidenceTable {
  std::vector<std::string> models;
  std::vector<std::vector<EvidenceCell>> cells;

  const EvidenceCell& cell(std::size_t row, std::size_t col) const { return cells.at(row).at(col); }
};

/// Description lengths snapped to multiples of 2^-24 nats before
/// differencing. Every difference of two snapped values below 2^29 nats is
/// then exact, so antisymmetry and telescoping hold bit-for-bit.
inline double snap_nats(double nats) { return std::ldexp(std::nearbyint(std::ldexp(nats, 24)), -24); }

inline EvidenceTable evidence_table(const std::vector<DLEstimate>& estimates) {
  if (estimates.size() < 2) throw DataError("evidence table needs at least two estimates");
  for (const auto& e : estimates) {
    if (e.dataset_id != estimates.front().dataset_id)
      throw DataError("estimates come from different datasets");
    if (!(e.schedule == estimates.front().schedule))
      throw DataError("estimates use different block schedules");
  }
  EvidenceTable t;
  const std::size_t m = estimates.size();
  t.cells.assign(m, std::vector<EvidenceCell>(m));
  for (const auto& e : estimates) t.models.push_back(e.model);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      t.cells[i][j] = {snap_nats(estimates[i].dl_nats) - snap_nats(estimates[j].dl_nats),
                       i == j ? 0.0 : std::hypot(estimates[i].uncertainty, estimates[j].uncertainty)};
  return t;
}

/// Decimal orders of magnitude of the evidence ratio exp(delta_nats),
/// computed without exponentiating.
inline double log10_bayes_factor(double delta_nats) { return delta_nats / std::numbers::ln10; }

}  // namespace pqdl
