/*
 * Copyright 2026 The confshap Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "confshap/dataset.hpp"
#include "confshap/error.hpp"
#include "confshap/parallel.hpp"
#include "confshap/random.hpp"

namespace confshap {

// Scores and labels with optional nonnegative per-record weights (empty
// means unit weights) and an optional precomputed ascending-score order.
struct WeightedSample {
  std::span<const double> scores;
  std::span<const std::uint8_t> labels;
  std::span<const double> weights;
  std::span<const std::uint32_t> order;
};

using MetricFunction = std::function<double(const WeightedSample&)>;

// The site-performance functional. Implementations throw UndefinedMetric
// when the sample does not determine a value.
struct Metric {
  std::string name;
  MetricFunction evaluate;
};

// Weighted Mann-Whitney statistic: the probability that a random positive
// outscores a random negative, ties counting one half. With integer weights
// every intermediate sum is exact, so the result is bit-identical to
// counting pairs on the record-replicated sample.
inline double auc(const WeightedSample& s) {
  const std::size_t n = s.scores.size();
  if (s.labels.size() != n || (!s.weights.empty() && s.weights.size() != n) ||
      (!s.order.empty() && s.order.size() != n)) {
    throw std::invalid_argument("auc: mismatched input lengths");
  }
  std::vector<std::uint32_t> local;
  std::span<const std::uint32_t> order = s.order;
  if (order.empty()) {
    local.resize(n);
    std::iota(local.begin(), local.end(), 0U);
    std::stable_sort(local.begin(), local.end(), [&](std::uint32_t a, std::uint32_t b) {
      return s.scores[a] < s.scores[b];
    });
    order = local;
  }
  double pos_total = 0.0;
  double neg_below = 0.0;
  double twice_numerator = 0.0;
  std::size_t i = 0;
  while (i < n) {
    const double tied_score = s.scores[order[i]];
    double pos = 0.0, neg = 0.0;
    for (; i < n && s.scores[order[i]] == tied_score; ++i) {
      const std::uint32_t r = order[i];
      const double w = s.weights.empty() ? 1.0 : s.weights[r];
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw std::invalid_argument("auc: weights must be finite and nonnegative");
      }
      (s.labels[r] ? pos : neg) += w;
    }
    twice_numerator += 2.0 * pos * neg_below + pos * neg;
    neg_below += neg;
    pos_total += pos;
  }
  if (!(pos_total > 0.0) || !(neg_below > 0.0)) {
    throw UndefinedMetric("AUC undefined: sample lacks a positive or a negative");
  }
  return twice_numerator / (2.0 * pos_total * neg_below);
}

inline double auc(std::span<const ScoredRecord> records,
                  std::span<const double> weights = {}) {
  std::vector<double> scores(records.size());
  std::vector<std::uint8_t> labels(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    scores[i] = records[i].score;
    labels[i] = static_cast<std::uint8_t>(records[i].label);
  }
  return auc(WeightedSample{scores, labels, weights, {}});
}

inline Metric auc_metric() {
  return Metric{"auc", [](const WeightedSample& s) { return auc(s); }};
}

inline double evaluate(const Metric& metric, const ScoredDataset& data,
                       std::span<const double> weights = {}) {
  return metric.evaluate(
      WeightedSample{data.scores(), data.labels(), weights, data.score_order()});
}

struct MetricResult {
  double value = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;

  bool operator==(const MetricResult&) const = default;
};

namespace detail {

// Linear-interpolated quantile of sorted values (Hyndman-Fan type 7).
inline double quantile_sorted(std::span<const double> sorted, double q) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline constexpr std::uint64_t kBootstrapStream = hash_string("bootstrap");

}  // namespace detail

inline constexpr int kDefaultBootstrapReplicates = 1000;

// Nonparametric percentile bootstrap (2.5% / 97.5%) over records. Replicate
// r resamples with its own substream of `seed`, so the result does not
// depend on `threads`. Replicates where the metric is undefined are
// discarded. The interval is widened to contain the point value if needed.
inline MetricResult bootstrap_ci(const WeightedSample& sample, const Metric& metric,
                                 int replicates, std::uint64_t seed,
                                 unsigned threads = 1) {
  if (replicates < 100) {
    throw ConfigError("bootstrap needs at least 100 replicates");
  }
  const std::size_t n = sample.scores.size();
  MetricResult result;
  result.value = metric.evaluate(sample);
  for (std::size_t i = 0; i < n; ++i) {
    (sample.labels[i] ? result.n_pos : result.n_neg) += 1;
  }

  std::vector<std::uint32_t> local_order;
  WeightedSample base = sample;
  if (base.order.empty()) {
    local_order.resize(n);
    std::iota(local_order.begin(), local_order.end(), 0U);
    std::stable_sort(local_order.begin(), local_order.end(),
                     [&](std::uint32_t a, std::uint32_t b) {
                       return sample.scores[a] < sample.scores[b];
                     });
    base.order = local_order;
  }

  std::vector<double> values(static_cast<std::size_t>(replicates));
  parallel_for(values.size(), threads, [&](std::size_t r) {
    RandomStream rng(derive_seed(seed, {detail::kBootstrapStream, r}));
    std::vector<double> counts(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) counts[rng.uniform_index(n)] += 1.0;
    if (!sample.weights.empty()) {
      for (std::size_t k = 0; k < n; ++k) counts[k] *= sample.weights[k];
    }
    WeightedSample replicate = base;
    replicate.weights = counts;
    try {
      values[r] = metric.evaluate(replicate);
    } catch (const UndefinedMetric&) {
      values[r] = std::numeric_limits<double>::quiet_NaN();
    }
  });
  std::erase_if(values, [](double v) { return std::isnan(v); });
  if (values.empty()) {
    throw UndefinedMetric("metric undefined on every bootstrap replicate");
  }
  std::sort(values.begin(), values.end());
  result.ci_low = std::min(detail::quantile_sorted(values, 0.025), result.value);
  result.ci_high = std::max(detail::quantile_sorted(values, 0.975), result.value);
  return result;
}

inline MetricResult bootstrap_ci(const ScoredDataset& data, const Metric& metric,
                                 int replicates, std::uint64_t seed,
                                 unsigned threads = 1) {
  return bootstrap_ci(
      WeightedSample{data.scores(), data.labels(), {}, data.score_order()}, metric,
      replicates, seed, threads);
}

inline MetricResult bootstrap_ci(std::span<const ScoredRecord> records,
                                 const Metric& metric, int replicates,
                                 std::uint64_t seed, unsigned threads = 1) {
  std::vector<double> scores(records.size());
  std::vector<std::uint8_t> labels(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    scores[i] = records[i].score;
    labels[i] = static_cast<std::uint8_t>(records[i].label);
  }
  return bootstrap_ci(WeightedSample{scores, labels, {}, {}}, metric, replicates, seed,
                      threads);
}

// Point value only, with a degenerate interval. Used when bootstrapping is
// disabled.
inline MetricResult point_metric(const ScoredDataset& data, const Metric& metric) {
  MetricResult r;
  r.value = evaluate(metric, data);
  r.ci_low = r.ci_high = r.value;
  r.n_pos = data.positives();
  r.n_neg = data.negatives();
  return r;
}

}  // namespace confshap
