#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "pqdl/calib.hpp"
#include "pqdl/data.hpp"
#include "pqdl/jobs.hpp"
#include "pqdl/prequential.hpp"
#include "pqdl/rng.hpp"
#include "pqdl/train.hpp"

namespace pqdl {

/// Per-(seed, example) calibrated losses of one model on one evaluation set.
struct EvalMatrix {
  std::size_t seeds = 0;
  std::size_t examples = 0;
  std::vector<double> losses;  // row-major, seeds x examples

  EvalMatrix() = default;
  EvalMatrix(std::size_t s, std::size_t e, double fill = 0.0)
      : seeds(s), examples(e), losses(s * e, fill) {}

  double& at(std::size_t s, std::size_t e) { return losses[s * examples + e]; }
  double at(std::size_t s, std::size_t e) const { return losses[s * examples + e]; }
};

enum class Resampling { joint, examples_only };

struct SnrEstimate {
  double delta = 0.0;     // mean of loss_A - loss_B, nats
  double variance = 0.0;  // variance of bootstrap replicates of delta
  double snr = 0.0;       // sqrt(delta^2 / variance); 0/0 := 0
  std::size_t n_boot = 0;
};

inline constexpr std::size_t kDefaultBootstrapSamples = 1000;

/// Bootstrap signal-to-noise ratio of the gap between two models evaluated
/// on the same examples. Each replicate resamples example columns with
/// replacement and, in joint mode, seed rows too.
inline SnrEstimate bootstrap_snr(const EvalMatrix& a, const EvalMatrix& b,
                                 std::size_t n_boot = kDefaultBootstrapSamples,
                                 std::uint64_t seed = 0,
                                 Resampling mode = Resampling::joint) {
  if (a.seeds != b.seeds || a.examples != b.examples)
    throw DataError("bootstrap_snr: evaluation matrices differ in shape");
  if (a.seeds == 0 || a.examples == 0) throw DataError("bootstrap_snr: empty evaluation matrix");
  if (n_boot == 0) throw DataError("bootstrap_snr: need at least one bootstrap sample");
  const std::size_t s = a.seeds;
  const std::size_t e = a.examples;
  std::vector<double> diff(s * e);
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = a.losses[i] - b.losses[i];

  SnrEstimate out;
  out.n_boot = n_boot;
  double total = 0.0;
  for (double d : diff) total += d;
  out.delta = total / static_cast<double>(s * e);

  auto rng = Rng::stream(seed, Stream::bootstrap);
  std::vector<double> reps(n_boot);
  std::vector<std::size_t> row_weight(s);
  std::vector<std::size_t> cols(e);
  for (std::size_t r = 0; r < n_boot; ++r) {
    std::fill(row_weight.begin(), row_weight.end(), 0);
    if (mode == Resampling::joint) {
      for (std::size_t i = 0; i < s; ++i) ++row_weight[rng.below(s)];
    } else {
      std::fill(row_weight.begin(), row_weight.end(), 1);
    }
    for (auto& c : cols) c = rng.below(e);
    double sum = 0.0;
    for (std::size_t row = 0; row < s; ++row) {
      if (row_weight[row] == 0) continue;
      const double* d = diff.data() + row * e;
      double rs = 0.0;
      for (std::size_t c : cols) rs += d[c];
      sum += static_cast<double>(row_weight[row]) * rs;
    }
    reps[r] = sum / static_cast<double>(s * e);
  }
  out.variance = stddev_of(reps);
  out.variance *= out.variance;
  const double d2 = out.delta * out.delta;
  if (d2 == 0.0)
    out.snr = 0.0;
  else if (out.variance == 0.0)
    out.snr = std::numeric_limits<double>::infinity();
  else
    out.snr = std::sqrt(d2 / out.variance);
  return out;
}

struct ProfilePoint {
  std::size_t prefix_size = 0;
  std::vector<double> seed_nats;   // mean calibrated eval loss per seed
  std::vector<double> seed_error;  // eval error rate per seed
  std::vector<double> seed_lr;     // chosen learning rate per seed
  double mean_nats = 0.0;
  double std_nats = 0.0;
  double mean_error = 0.0;
  double std_error = 0.0;
};

struct ProfileResult {
  std::vector<ProfilePoint> points;
  std::vector<EvalMatrix> eval;  // one per prefix size
};

/// Throws DataError when any evaluation example also occurs in the pool.
inline void assert_disjoint(const Dataset& pool, const Dataset& eval_set) {
  const std::set<std::size_t> seen(pool.origin.begin(), pool.origin.end());
  for (std::size_t o : eval_set.origin)
    if (seen.count(o)) throw DataError("evaluation example " + std::to_string(o) + " leaks into training data");
}

/// Learning curve: for each prefix size and seed, fit the recipe on the
/// prefix and evaluate calibrated cross-entropy on `eval_set`.
inline ProfileResult profile(const ModelSpec& spec, const TrainingRecipe& recipe,
                             const Dataset& pool, const PrefixChain& chain,
                             const Dataset& eval_set, const std::vector<std::uint64_t>& seeds,
                             std::size_t jobs = 1) {
  if (seeds.empty()) throw DataError("profile needs at least one seed");
  assert_disjoint(pool, eval_set);
  TrainingRecipe r = recipe;
  if (r.full_dataset_size == 0) r.full_dataset_size = pool.size();
  const std::size_t sizes = chain.sizes.size();
  const auto results = parallel_map(sizes * seeds.size(), jobs, [&](std::size_t task) {
    const std::size_t n = chain.sizes[task / seeds.size()];
    const std::uint64_t seed = seeds[task % seeds.size()];
    const Dataset subset = pool.subset(chain.subset(n));
    const RecipeFit fit = fit_recipe(spec, r, subset, seed);
    return std::pair{calibrated_xent(spec, fit.sweep.run.params, fit.sweep.run.temperature, eval_set),
                     fit.sweep.best_lr};
  });
  ProfileResult out;
  for (std::size_t si = 0; si < sizes; ++si) {
    ProfilePoint p;
    p.prefix_size = chain.sizes[si];
    EvalMatrix m(seeds.size(), eval_set.size());
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      const auto& [ev, lr] = results[si * seeds.size() + k];
      p.seed_nats.push_back(ev.nats_mean);
      p.seed_error.push_back(ev.error_rate);
      p.seed_lr.push_back(lr);
      std::copy(ev.nats.begin(), ev.nats.end(), m.losses.begin() + static_cast<std::ptrdiff_t>(k * m.examples));
    }
    p.mean_nats = mean_of(p.seed_nats);
    p.std_nats = stddev_of(p.seed_nats);
    p.mean_error = mean_of(p.seed_error);
    p.std_error = stddev_of(p.seed_error);
    out.points.push_back(std::move(p));
    out.eval.push_back(std::move(m));
  }
  return out;
}

/// Average ranks (1-based), ties sharing the mean rank.
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) r[idx[t]] = avg;
    i = j + 1;
  }
  return r;
}

/// Spearman rank correlation (Pearson correlation of average ranks).
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DataError("spearman: need two equal-length samples");
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double mx = mean_of(rx);
  const double my = mean_of(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace pqdl
