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

// Shapley attribution of a cross-site performance disparity to site factors.
//
// A walk over one ordering of the factors starts from the raw external
// performance p_0 and matches one more factor per step, p_i being the metric
// on the resample matched on the first i factors. Factor k at position i is
// credited p_i - p_{i-1}: positive when matching it recovers performance.
// The credits of one walk telescope to p_K - p_0, so the per-factor means
// (the Shapley values) sum to the mean fully matched lift, and
//   explained + unexplained == reference - external
// holds by construction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "confshap/dataset.hpp"
#include "confshap/error.hpp"
#include "confshap/matching.hpp"
#include "confshap/metric.hpp"
#include "confshap/parallel.hpp"
#include "confshap/random.hpp"

namespace confshap {

struct StoppingRule {
  double se_tolerance = 0.005;
  std::size_t max_iterations = 2000;
  std::size_t min_iterations = 30;

  void validate() const {
    if (!(se_tolerance > 0.0)) throw ConfigError("stopping tolerance must be > 0");
    if (max_iterations == 0) throw ConfigError("max-iterations must be >= 1");
    if (min_iterations > max_iterations) {
      throw ConfigError("min-iterations must not exceed max-iterations");
    }
  }
};

enum class ResampleSeeding {
  // Fresh resamples for every sampled permutation (the default).
  per_permutation,
  // One fixed resample per distinct prefix, shared by every permutation that
  // passes through it (common random numbers; matches exact_attribute).
  per_prefix,
};

struct AttributionOptions {
  StoppingRule stopping;
  std::uint64_t seed = 0;
  std::size_t min_stratum = kDefaultMinStratum;
  std::size_t resample_reps = 1;
  int bootstrap_replicates = kDefaultBootstrapReplicates;  // 0 disables the CI
  unsigned threads = 0;
  ResampleSeeding seeding = ResampleSeeding::per_permutation;
  // Walk every one of the K! orderings once instead of sampling.
  bool enumerate_permutations = false;
  double max_skip_fraction = 0.5;
  Metric metric = auc_metric();
};

struct FactorAttribution {
  std::string name;
  double phi = 0.0;
  double se = 0.0;
  std::size_t n_permutations = 0;

  double ci_low() const { return phi - 1.96 * se; }
  double ci_high() const { return phi + 1.96 * se; }

  bool operator==(const FactorAttribution&) const = default;
};

struct AttributionReport {
  std::string method;
  std::string reference_site;
  std::string external_site;
  MetricResult reference_performance;
  MetricResult external_performance;
  double baseline_performance = 0.0;
  double matched_performance = 0.0;
  std::vector<FactorAttribution> factors;
  std::vector<std::string> held_matched;
  double explained = 0.0;
  double unexplained = 0.0;
  double total_disparity = 0.0;
  std::size_t sampled_permutations = 0;
  std::size_t skipped_permutations = 0;
  std::string termination;
  std::uint64_t seed = 0;
  std::vector<std::string> support_failures;
  nlohmann::json config = nlohmann::json::object();

  const FactorAttribution& factor(std::string_view name) const {
    for (const auto& f : factors) {
      if (f.name == name) return f;
    }
    throw ConfigError("report has no factor '" + std::string(name) + "'");
  }
};

inline nlohmann::json to_json(const AttributionOptions& o) {
  return {
      {"seed", o.seed},
      {"stopping",
       {{"tolerance", o.stopping.se_tolerance},
        {"max_iterations", o.stopping.max_iterations},
        {"min_iterations", o.stopping.min_iterations}}},
      {"min_stratum", o.min_stratum},
      {"resample_reps", o.resample_reps},
      {"bootstrap_replicates", o.bootstrap_replicates},
      {"seeding", o.seeding == ResampleSeeding::per_prefix ? "per-prefix" : "per-permutation"},
      {"enumerate_permutations", o.enumerate_permutations},
      {"max_skip_fraction", o.max_skip_fraction},
      {"metric", o.metric.name},
  };
}

namespace detail {

inline constexpr std::uint64_t kPermutationStream = hash_string("permutation");
inline constexpr std::uint64_t kResampleStream = hash_string("resample");
inline constexpr std::uint64_t kPreambleStream = hash_string("preamble");

struct Player {
  std::string name;
  std::vector<std::size_t> atoms;
};

// Shared, read-only state of one attribution run.
struct WalkContext {
  const Matcher& matcher;
  const Metric& metric;
  std::vector<Player> players;
  std::vector<std::uint32_t> start;
  std::uint64_t start_history = kHistoryRoot;
  double baseline = 0.0;
  std::size_t reps = 1;
};

struct WalkResult {
  std::vector<double> increments;  // indexed by player
  std::optional<StratumShortfall> shortfall;
};

// Extends every replicate chain by one player and returns the mean metric,
// or the shortfall that stopped it.
inline std::optional<double> extend(const WalkContext& ctx, const Player& player,
                                    std::vector<std::vector<std::uint32_t>>& chains,
                                    std::uint64_t& history, std::uint64_t base_seed,
                                    Matcher::Scratch& scratch,
                                    std::optional<StratumShortfall>& shortfall) {
  double sum = 0.0;
  std::uint64_t next_history = history;
  for (std::size_t rep = 0; rep < chains.size(); ++rep) {
    std::uint64_t h = history;
    if (auto fail = ctx.matcher.apply_chain(player.atoms, chains[rep], h,
                                            replicate_seed(base_seed, rep), scratch)) {
      shortfall = std::move(fail);
      return std::nullopt;
    }
    next_history = h;
    try {
      sum += ctx.matcher.evaluate(ctx.metric, chains[rep], scratch);
    } catch (const UndefinedMetric&) {
      shortfall = single_class_shortfall(player.name);
      return std::nullopt;
    }
  }
  history = next_history;
  return sum / static_cast<double>(chains.size());
}

inline WalkResult walk(const WalkContext& ctx, std::span<const std::size_t> order,
                       std::uint64_t base_seed, Matcher::Scratch& scratch) {
  WalkResult out;
  std::vector<std::vector<std::uint32_t>> chains(ctx.reps, ctx.start);
  std::uint64_t history = ctx.start_history;
  double previous = ctx.baseline;
  out.increments.assign(ctx.players.size(), 0.0);
  for (std::size_t k : order) {
    auto value = extend(ctx, ctx.players[k], chains, history, base_seed, scratch,
                        out.shortfall);
    if (!value) return out;
    out.increments[k] = *value - previous;
    previous = *value;
  }
  return out;
}

// Welford accumulator. Identical inputs yield exactly that input as mean.
struct RunningMean {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  double standard_error() const {
    if (n < 2) return 0.0;
    return std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n));
  }
};

struct Tally {
  std::vector<RunningMean> stats;
  std::size_t sampled = 0;
  std::size_t skipped = 0;
  std::map<std::string, std::size_t> failures;
  std::string termination;

  explicit Tally(std::size_t players) : stats(players) {}

  void add(const WalkResult& r) {
    ++sampled;
    if (r.shortfall) {
      ++skipped;
      ++failures[r.shortfall->describe()];
      return;
    }
    for (std::size_t k = 0; k < stats.size(); ++k) stats[k].add(r.increments[k]);
  }
  std::size_t retained() const { return sampled - skipped; }
  double max_se() const {
    double m = 0.0;
    for (const auto& s : stats) m = std::max(m, s.standard_error());
    return m;
  }
};

inline std::vector<std::vector<std::size_t>> all_orderings(std::size_t k) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  do {
    out.push_back(order);
  } while (std::next_permutation(order.begin(), order.end()));
  return out;
}

inline Tally run_sampled(const WalkContext& ctx, const AttributionOptions& options) {
  const std::size_t k = ctx.players.size();
  Tally tally(k);
  std::vector<std::vector<std::size_t>> orderings;
  std::size_t limit = options.stopping.max_iterations;
  if (options.enumerate_permutations) {
    if (k > 8) throw ConfigError("permutation enumeration supports at most 8 factors");
    orderings = all_orderings(k);
    limit = orderings.size();
  }
  const std::size_t min_retained = std::max<std::size_t>(options.stopping.min_iterations, 2);
  constexpr std::size_t kBatch = 64;

  tally.termination = options.enumerate_permutations ? "exhaustive" : "max-iterations";
  while (tally.sampled < limit) {
    const std::size_t first = tally.sampled;
    const std::size_t count = std::min(kBatch, limit - first);
    std::vector<WalkResult> results(count);
    parallel_for(count, options.threads, [&](std::size_t i) {
      const std::size_t p = first + i;
      std::vector<std::size_t> order;
      if (options.enumerate_permutations) {
        order = orderings[p];
      } else {
        order.resize(k);
        std::iota(order.begin(), order.end(), std::size_t{0});
        RandomStream rng(derive_seed(options.seed, {kPermutationStream, p}));
        rng.shuffle(std::span<std::size_t>(order));
      }
      const std::uint64_t base = options.seeding == ResampleSeeding::per_prefix
                                     ? options.seed
                                     : derive_seed(options.seed, {kResampleStream, p});
      Matcher::Scratch scratch;
      results[i] = walk(ctx, order, base, scratch);
    });
    // Fold in submission order so the stopping point is schedule-independent.
    for (const auto& r : results) {
      tally.add(r);
      if (!options.enumerate_permutations && tally.retained() >= min_retained &&
          tally.max_se() < options.stopping.se_tolerance) {
        tally.termination = "tolerance";
        return tally;
      }
    }
  }
  return tally;
}

inline void check_feasible(const Tally& tally, double max_skip_fraction) {
  if (tally.retained() > 0 &&
      static_cast<double>(tally.skipped) <=
          max_skip_fraction * static_cast<double>(tally.sampled)) {
    return;
  }
  std::vector<std::string> strata;
  for (const auto& [what, count] : tally.failures) {
    strata.push_back(what + " [" + std::to_string(count) + " permutation(s)]");
  }
  throw AttributionInfeasible(
      "attribution infeasible: " + std::to_string(tally.skipped) + " of " +
          std::to_string(tally.sampled) +
          " permutations lacked stratum support (raise data size or lower min-stratum)",
      std::move(strata));
}

inline std::vector<Player> players_for(const Matcher& matcher,
                                       std::span<const std::string> names) {
  std::vector<Player> players;
  for (const auto& name : names) {
    const std::string one[] = {name};
    players.push_back({name, matcher.atoms_for(one)});
  }
  return players;
}

inline std::vector<std::string> all_factor_names(const ScoredDataset& d) {
  std::vector<std::string> names;
  for (const auto& s : d.specs()) names.push_back(s.name);
  return names;
}

inline void validate_options(const AttributionOptions& o) {
  o.stopping.validate();
  if (o.resample_reps == 0) throw ConfigError("resample-reps must be at least 1");
  if (o.bootstrap_replicates != 0 && o.bootstrap_replicates < 100) {
    throw ConfigError("bootstrap replicates must be 0 (disabled) or at least 100");
  }
  if (!o.metric.evaluate) throw ConfigError("metric function is empty");
}

inline MetricResult site_performance(const ScoredDataset& d, const AttributionOptions& o,
                                     std::string_view tag) {
  if (o.bootstrap_replicates == 0) return point_metric(d, o.metric);
  return bootstrap_ci(d, o.metric, o.bootstrap_replicates,
                      derive_seed(o.seed, {hash_string(tag)}), o.threads);
}

inline AttributionReport finish_report(std::string method, const ScoredDataset& reference,
                                       const ScoredDataset& external,
                                       const WalkContext& ctx, const Tally& tally,
                                       const AttributionOptions& options, bool with_se) {
  AttributionReport r;
  r.method = std::move(method);
  r.reference_site = reference.site();
  r.external_site = external.site();
  r.reference_performance = site_performance(reference, options, "reference-ci");
  r.external_performance = site_performance(external, options, "external-ci");
  r.total_disparity = r.reference_performance.value - r.external_performance.value;
  r.baseline_performance = ctx.baseline;
  for (std::size_t k = 0; k < ctx.players.size(); ++k) {
    const auto& s = tally.stats[k];
    r.factors.push_back(
        {ctx.players[k].name, s.mean, with_se ? s.standard_error() : 0.0, s.n});
    r.explained += s.mean;
  }
  r.unexplained = r.total_disparity - r.explained;
  r.matched_performance = r.baseline_performance + r.explained;
  r.sampled_permutations = tally.sampled;
  r.skipped_permutations = tally.skipped;
  r.termination = tally.termination;
  r.seed = options.seed;
  for (const auto& [what, count] : tally.failures) {
    r.support_failures.push_back(what + " [" + std::to_string(count) + " permutation(s)]");
  }
  r.config = to_json(options);
  return r;
}

}  // namespace detail

// Monte Carlo permutation estimate of each factor's Shapley contribution.
// `factors` names the players (empty: every factor of the datasets).
inline AttributionReport attribute(const ScoredDataset& reference,
                                   const ScoredDataset& external,
                                   std::vector<std::string> factors,
                                   const AttributionOptions& options) {
  detail::validate_options(options);
  if (factors.empty()) factors = detail::all_factor_names(external);
  if (factors.empty()) throw ConfigError("at least one factor is required");
  Matcher matcher(reference, external, options.min_stratum);
  detail::WalkContext ctx{matcher, options.metric, detail::players_for(matcher, factors),
                          matcher.identity(), kHistoryRoot, 0.0, options.resample_reps};
  Matcher::Scratch scratch;
  ctx.baseline = matcher.evaluate(options.metric, ctx.start, scratch);
  auto tally = detail::run_sampled(ctx, options);
  detail::check_feasible(tally, options.max_skip_fraction);
  return detail::finish_report(
      options.enumerate_permutations ? "enumerated" : "monte-carlo", reference, external,
      ctx, tally, options, true);
}

// Exact Shapley values: the mean credit over all K! orderings (K <= 8),
// with one fixed resample per distinct ordered prefix. Each prefix is
// evaluated once by a depth-first walk of the prefix tree.
inline AttributionReport exact_attribute(const ScoredDataset& reference,
                                         const ScoredDataset& external,
                                         std::vector<std::string> factors,
                                         const AttributionOptions& options) {
  detail::validate_options(options);
  if (factors.empty()) factors = detail::all_factor_names(external);
  if (factors.empty()) throw ConfigError("at least one factor is required");
  if (factors.size() > 8) {
    throw ConfigError("exact attribution supports at most 8 factors, got " +
                      std::to_string(factors.size()));
  }
  Matcher matcher(reference, external, options.min_stratum);
  detail::WalkContext ctx{matcher, options.metric, detail::players_for(matcher, factors),
                          matcher.identity(), kHistoryRoot, 0.0, options.resample_reps};
  {
    Matcher::Scratch scratch;
    ctx.baseline = matcher.evaluate(options.metric, ctx.start, scratch);
  }
  const std::size_t k = ctx.players.size();
  const std::uint64_t radix = k + 1;

  struct Node {
    std::optional<double> value;
    std::optional<StratumShortfall> shortfall;
  };
  using Table = std::unordered_map<std::uint64_t, Node>;

  // One subtree per first player.
  std::vector<Table> tables(k);
  parallel_for(k, options.threads, [&](std::size_t first) {
    Matcher::Scratch scratch;
    Table& table = tables[first];
    std::vector<bool> used(k, false);
    auto dfs = [&](auto&& self, std::size_t player, std::uint64_t parent_key,
                   std::vector<std::vector<std::uint32_t>> chains,
                   std::uint64_t history) -> void {
      const std::uint64_t key = parent_key * radix + player + 1;
      Node node;
      node.value = detail::extend(ctx, ctx.players[player], chains, history, options.seed,
                                  scratch, node.shortfall);
      const bool ok = node.value.has_value();
      table.emplace(key, std::move(node));
      if (!ok) return;
      used[player] = true;
      for (std::size_t q = 0; q < k; ++q) {
        if (!used[q]) self(self, q, key, chains, history);
      }
      used[player] = false;
    };
    dfs(dfs, first, 0,
        std::vector<std::vector<std::uint32_t>>(ctx.reps, ctx.start), ctx.start_history);
  });

  detail::Tally tally(k);
  for (const auto& order : detail::all_orderings(k)) {
    detail::WalkResult r;
    r.increments.assign(k, 0.0);
    std::uint64_t key = 0;
    double previous = ctx.baseline;
    for (std::size_t player : order) {
      key = key * radix + player + 1;
      const Table& table = tables[order.front()];
      auto it = table.find(key);
      if (it == table.end() || !it->second.value) {
        // A missing key means an ancestor already failed; report that one.
        std::uint64_t probe = key;
        while (it == table.end() && probe > 0) {
          probe /= radix;
          it = table.find(probe);
        }
        r.shortfall = it != table.end() && it->second.shortfall
                          ? it->second.shortfall
                          : std::optional<StratumShortfall>(single_class_shortfall(""));
        break;
      }
      r.increments[player] = *it->second.value - previous;
      previous = *it->second.value;
    }
    tally.add(r);
  }
  tally.termination = "exhaustive";
  detail::check_feasible(tally, options.max_skip_fraction);
  return detail::finish_report("exact", reference, external, ctx, tally, options, false);
}

// Splits a group factor's contribution among its members. Every other
// factor in `factors` is matched first with one fixed resample (in declared
// order); the members are then the players, starting from that level.
inline AttributionReport drill_down(const ScoredDataset& reference,
                                    const ScoredDataset& external,
                                    std::vector<std::string> factors,
                                    const std::string& group,
                                    const AttributionOptions& options) {
  detail::validate_options(options);
  const FactorSpec& spec = external.spec(group);
  if (spec.kind != FactorKind::group) {
    throw ConfigError("factor '" + group + "' is not a group factor");
  }
  if (factors.empty()) factors = detail::all_factor_names(external);
  Matcher matcher(reference, external, options.min_stratum);

  std::vector<std::string> held;
  for (const auto& f : factors) {
    if (f != group) held.push_back(f);
  }
  std::vector<std::string> members;
  for (const auto& m : spec.members) members.push_back(group + "/" + m);

  detail::WalkContext ctx{matcher, options.metric, detail::players_for(matcher, members),
                          matcher.identity(), kHistoryRoot, 0.0, options.resample_reps};
  Matcher::Scratch scratch;
  if (auto fail = matcher.apply_chain(
          matcher.atoms_for(held), ctx.start, ctx.start_history,
          derive_seed(options.seed, {detail::kPreambleStream}), scratch)) {
    throw AttributionInfeasible("cannot hold other factors matched for drill-down",
                                {fail->describe()});
  }
  try {
    ctx.baseline = matcher.evaluate(options.metric, ctx.start, scratch);
  } catch (const UndefinedMetric&) {
    throw AttributionInfeasible("held-matched resample is single-class",
                                {single_class_shortfall("preamble").describe()});
  }
  auto tally = detail::run_sampled(ctx, options);
  detail::check_feasible(tally, options.max_skip_fraction);
  auto report =
      detail::finish_report("drill-down", reference, external, ctx, tally, options, true);
  report.held_matched = std::move(held);
  report.config["drill_down"] = group;
  return report;
}

}  // namespace confshap
