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

// Distribution matching: resample the external dataset with replacement so
// that, factor by factor, its marginal equals the reference marginal.
//
// Matching is sequential. Each factor of a prefix (each member flag, for a
// group) is one step: the current resample is stratified on that factor and
// redrawn with stratum counts fixed by largest-remainder rounding of the
// reference proportions. Later steps may disturb earlier marginals; the
// joint distribution is never matched.
//
// Step j draws from the stream derive_seed(seed, {h_j}), where h_j hashes the
// atom history up to and including step j. Two prefixes that share their
// first j atoms therefore share their first j resamples, which makes
// prefix chains evaluable incrementally.
//
// The working multiset holds positions in the external dataset's canonical
// order, so a resample depends on record contents and not on row order.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "confshap/dataset.hpp"
#include "confshap/error.hpp"
#include "confshap/metric.hpp"
#include "confshap/random.hpp"

namespace confshap {

inline constexpr std::size_t kDefaultMinStratum = 5;

struct StratumShortfall {
  std::string factor;
  std::string stratum;
  std::size_t available = 0;
  std::size_t required = 0;
  double reference_proportion = 0.0;

  std::string describe() const {
    return factor + "=" + stratum + ": " + std::to_string(available) +
           " external row(s) available, " + std::to_string(required) +
           " required (reference proportion " + format_real(reference_proportion) + ")";
  }

  bool operator==(const StratumShortfall&) const = default;
};

inline constexpr std::uint64_t kHistoryRoot = hash_string("prefix");

inline std::uint64_t extend_history(std::uint64_t history, const Atom& atom) {
  return hash_combine(hash_combine(history, atom.factor),
                      atom.member == Atom::npos ? 0 : atom.member + 1);
}

// Base seed of resample replicate `rep`; replicate 0 uses the seed itself.
inline std::uint64_t replicate_seed(std::uint64_t seed, std::size_t rep) {
  return rep == 0 ? seed : derive_seed(seed, {hash_string("replicate"), rep});
}

// Precomputed matching state for one (reference, external) pair. Immutable
// after construction; `apply` is safe to call concurrently with distinct
// scratch buffers.
class Matcher {
 public:
  struct Scratch {
    std::vector<std::uint32_t> bucket_size;
    std::vector<std::uint32_t> bucket_start;
    std::vector<std::uint32_t> sorted;
    std::vector<std::uint32_t> stamp;
    std::vector<std::uint32_t> out;
    std::vector<double> counts;
    std::uint32_t epoch = 0;
  };

  struct AtomPlan {
    std::vector<std::uint32_t> target;
    std::vector<std::size_t> reference_count;
    std::vector<std::size_t> external_count;
    std::vector<double> reference_proportion;
    std::vector<bool> required;
    bool identity = false;
  };

  Matcher(const ScoredDataset& reference, const ScoredDataset& external,
          std::size_t min_stratum)
      : reference_(reference), external_(external), min_stratum_(min_stratum) {
    if (reference.specs() != external.specs()) {
      throw ConfigError("reference and external datasets must share one factor spec list");
    }
    const std::size_t n = external.size();
    const std::size_t n_ref = reference.size();
    const auto canon = external.canonical_order();
    canon_codes_.resize(external.atoms().size());
    plans_.resize(external.atoms().size());
    for (std::size_t a = 0; a < external.atoms().size(); ++a) {
      const std::size_t card = external.atoms()[a].cardinality;
      auto ext_codes = external.codes(a);
      auto& cc = canon_codes_[a];
      cc.resize(n);
      for (std::size_t p = 0; p < n; ++p) cc[p] = ext_codes[canon[p]];

      AtomPlan& plan = plans_[a];
      plan.reference_count.assign(card, 0);
      plan.external_count.assign(card, 0);
      for (std::uint32_t c : reference.codes(a)) ++plan.reference_count[c];
      for (std::uint32_t c : ext_codes) ++plan.external_count[c];
      plan.target = largest_remainder(plan.reference_count, n_ref, n);
      plan.reference_proportion.resize(card);
      plan.required.resize(card);
      for (std::size_t v = 0; v < card; ++v) {
        plan.reference_proportion[v] =
            static_cast<double>(plan.reference_count[v]) / static_cast<double>(n_ref);
        // proportion >= 1/|external|, in exact integer arithmetic
        plan.required[v] = plan.reference_count[v] > 0 &&
                           static_cast<unsigned __int128>(plan.reference_count[v]) * n >= n_ref;
      }
      plan.identity = std::equal(plan.target.begin(), plan.target.end(),
                                 plan.external_count.begin(),
                                 [](std::uint32_t t, std::size_t c) { return t == c; });
    }
  }

  const ScoredDataset& reference() const { return reference_; }
  const ScoredDataset& external() const { return external_; }
  std::size_t size() const { return external_.size(); }
  std::size_t min_stratum() const { return min_stratum_; }
  const AtomPlan& plan(std::size_t atom) const { return plans_.at(atom); }

  std::vector<std::uint32_t> identity() const {
    std::vector<std::uint32_t> m(size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<std::uint32_t>(i);
    return m;
  }

  // Resolves factor names (or "group/member" atom names) to atom indices,
  // expanding groups into their members in declared order.
  std::vector<std::size_t> atoms_for(std::span<const std::string> names) const {
    std::vector<std::size_t> out;
    for (const auto& name : names) {
      if (auto f = external_.factor_index(name)) {
        for (std::size_t a : external_.atoms_of_factor(*f)) out.push_back(a);
        continue;
      }
      bool found = false;
      for (std::size_t a = 0; a < external_.atoms().size(); ++a) {
        if (external_.atoms()[a].label == name) {
          out.push_back(a);
          found = true;
          break;
        }
      }
      if (!found) throw ConfigError("unknown factor '" + name + "'");
    }
    return out;
  }

  // One sequential matching step on `multiset` (canonical positions).
  // Leaves the multiset untouched and returns the shortfall when a required
  // stratum has too few distinct rows.
  std::optional<StratumShortfall> apply(std::size_t atom,
                                        std::vector<std::uint32_t>& multiset,
                                        std::uint64_t step_seed, Scratch& s) const {
    const AtomPlan& plan = plans_[atom];
    if (plan.identity) return std::nullopt;
    const auto& codes = canon_codes_[atom];
    const std::size_t card = plan.target.size();

    s.bucket_size.assign(card, 0);
    for (std::uint32_t p : multiset) ++s.bucket_size[codes[p]];
    s.bucket_start.resize(card);
    std::uint32_t offset = 0;
    for (std::size_t v = 0; v < card; ++v) {
      s.bucket_start[v] = offset;
      offset += s.bucket_size[v];
    }
    s.sorted.resize(multiset.size());
    {
      std::vector<std::uint32_t>& cursor = s.out;
      cursor.assign(s.bucket_start.begin(), s.bucket_start.end());
      for (std::uint32_t p : multiset) s.sorted[cursor[codes[p]]++] = p;
    }

    if (s.stamp.size() != size()) {
      s.stamp.assign(size(), 0);
      s.epoch = 0;
    }
    for (std::size_t v = 0; v < card; ++v) {
      if (plan.target[v] == 0 && !plan.required[v]) continue;
      if (++s.epoch == 0) {
        std::fill(s.stamp.begin(), s.stamp.end(), 0);
        s.epoch = 1;
      }
      std::size_t distinct = 0;
      const std::uint32_t begin = s.bucket_start[v];
      for (std::uint32_t k = begin; k < begin + s.bucket_size[v]; ++k) {
        auto& st = s.stamp[s.sorted[k]];
        if (st != s.epoch) {
          st = s.epoch;
          ++distinct;
        }
      }
      const std::size_t need = plan.required[v] ? std::max<std::size_t>(min_stratum_, 1) : 1;
      if (distinct < need) {
        const auto& a = external_.atoms()[atom];
        return StratumShortfall{a.label,
                                stratum_label(external_.specs()[a.factor], a, v),
                                distinct, need, plan.reference_proportion[v]};
      }
    }

    RandomStream rng(step_seed);
    s.out.clear();
    s.out.reserve(multiset.size());
    for (std::size_t v = 0; v < card; ++v) {
      const std::uint32_t begin = s.bucket_start[v];
      const std::uint32_t bucket = s.bucket_size[v];
      for (std::uint32_t k = 0; k < plan.target[v]; ++k) {
        s.out.push_back(s.sorted[begin + rng.uniform_index(bucket)]);
      }
    }
    multiset.swap(s.out);
    return std::nullopt;
  }

  // Applies a whole atom chain starting from `multiset` / `history`.
  std::optional<StratumShortfall> apply_chain(std::span<const std::size_t> atoms,
                                              std::vector<std::uint32_t>& multiset,
                                              std::uint64_t& history,
                                              std::uint64_t base_seed,
                                              Scratch& s) const {
    for (std::size_t a : atoms) {
      history = extend_history(history, external_.atoms()[a]);
      if (auto fail = apply(a, multiset, derive_seed(base_seed, {history}), s)) {
        return fail;
      }
    }
    return std::nullopt;
  }

  // Per-row multiplicities of a multiset, indexed like the external records.
  void row_counts(std::span<const std::uint32_t> multiset, std::vector<double>& counts) const {
    const auto canon = external_.canonical_order();
    counts.assign(size(), 0.0);
    for (std::uint32_t p : multiset) counts[canon[p]] += 1.0;
  }

  double evaluate(const Metric& metric, std::span<const std::uint32_t> multiset,
                  Scratch& s) const {
    row_counts(multiset, s.counts);
    return confshap::evaluate(metric, external_, s.counts);
  }

  static std::vector<std::uint32_t> largest_remainder(
      std::span<const std::size_t> reference_count, std::size_t n_ref, std::size_t n) {
    using wide = unsigned __int128;
    std::vector<std::uint32_t> target(reference_count.size());
    std::vector<std::pair<std::uint64_t, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t v = 0; v < reference_count.size(); ++v) {
      const wide num = static_cast<wide>(reference_count[v]) * n;
      target[v] = static_cast<std::uint32_t>(num / n_ref);
      assigned += target[v];
      remainders.emplace_back(static_cast<std::uint64_t>(num % n_ref), v);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++target[remainders[k].second];
    return target;
  }

 private:
  ScoredDataset reference_;
  ScoredDataset external_;
  std::size_t min_stratum_;
  std::vector<std::vector<std::uint32_t>> canon_codes_;
  std::vector<AtomPlan> plans_;
};

// ---------------------------------------------------------------------------

struct ResampledDataset {
  ScoredDataset source;
  std::vector<std::uint32_t> indices;  // row indices into source.records()
  std::vector<std::string> prefix;

  std::vector<double> row_counts() const {
    std::vector<double> c(source.size(), 0.0);
    for (std::uint32_t i : indices) c[i] += 1.0;
    return c;
  }
};

struct MatchOutcome {
  std::optional<ResampledDataset> resample;
  std::optional<StratumShortfall> shortfall;

  bool ok() const { return resample.has_value(); }
};

inline MatchOutcome match_prefix(const ScoredDataset& reference,
                                 const ScoredDataset& external,
                                 std::span<const std::string> prefix, std::uint64_t seed,
                                 std::size_t min_stratum = kDefaultMinStratum) {
  Matcher matcher(reference, external, min_stratum);
  const auto atoms = matcher.atoms_for(prefix);
  Matcher::Scratch scratch;
  auto multiset = matcher.identity();
  std::uint64_t history = kHistoryRoot;
  if (auto fail = matcher.apply_chain(atoms, multiset, history, seed, scratch)) {
    return {std::nullopt, std::move(fail)};
  }
  ResampledDataset out{external, {}, {prefix.begin(), prefix.end()}};
  const auto canon = external.canonical_order();
  out.indices.reserve(multiset.size());
  for (std::uint32_t p : multiset) out.indices.push_back(canon[p]);
  return {std::move(out), std::nullopt};
}

struct PerformanceOutcome {
  std::optional<double> value;
  std::optional<StratumShortfall> shortfall;

  bool ok() const { return value.has_value(); }
};

inline StratumShortfall single_class_shortfall(const std::string& where) {
  return StratumShortfall{where, "single-class resample", 0, 1, 0.0};
}

// Metric on the matched external resample, averaged over `resample_reps`
// independent resamples. A resample that loses a label class counts as
// insufficient support.
inline PerformanceOutcome matched_performance(const Matcher& matcher,
                                              std::span<const std::string> prefix,
                                              std::uint64_t seed, const Metric& metric,
                                              std::size_t resample_reps = 1) {
  if (resample_reps == 0) throw ConfigError("resample-reps must be at least 1");
  const auto atoms = matcher.atoms_for(prefix);
  Matcher::Scratch scratch;
  double sum = 0.0;
  for (std::size_t rep = 0; rep < resample_reps; ++rep) {
    auto multiset = matcher.identity();
    std::uint64_t history = kHistoryRoot;
    if (auto fail = matcher.apply_chain(atoms, multiset, history,
                                        replicate_seed(seed, rep), scratch)) {
      return {std::nullopt, std::move(fail)};
    }
    try {
      sum += matcher.evaluate(metric, multiset, scratch);
    } catch (const UndefinedMetric&) {
      return {std::nullopt, single_class_shortfall(prefix.empty() ? "" : prefix.back())};
    }
  }
  return {sum / static_cast<double>(resample_reps), std::nullopt};
}

inline PerformanceOutcome matched_performance(
    const ScoredDataset& reference, const ScoredDataset& external,
    std::span<const std::string> prefix, std::uint64_t seed,
    std::size_t min_stratum = kDefaultMinStratum, const Metric& metric = auc_metric(),
    std::size_t resample_reps = 1) {
  Matcher matcher(reference, external, min_stratum);
  return matched_performance(matcher, prefix, seed, metric, resample_reps);
}

// ---------------------------------------------------------------------------
// Plans: the raw stratum weight tables of a prefix, for diagnostics.

struct StratumWeight {
  std::string stratum;
  double reference_proportion = 0.0;
  double external_proportion = 0.0;
  // reference / external proportion; 0 where the external stratum is empty
  // (such strata are also listed in the support report).
  double weight = 0.0;
  std::size_t external_count = 0;
  std::size_t target_count = 0;
};

struct AtomWeights {
  std::string atom;
  bool identity = false;
  std::vector<StratumWeight> strata;
};

struct ResamplePlan {
  std::vector<std::string> prefix;
  std::vector<AtomWeights> weights;
  std::vector<StratumShortfall> support_report;
};

inline ResamplePlan plan_prefix(const Matcher& matcher, std::span<const std::string> prefix) {
  ResamplePlan plan;
  plan.prefix.assign(prefix.begin(), prefix.end());
  const auto& ext = matcher.external();
  const double n = static_cast<double>(ext.size());
  for (std::size_t a : matcher.atoms_for(prefix)) {
    const auto& atom = ext.atoms()[a];
    const auto& spec = ext.specs()[atom.factor];
    const auto& p = matcher.plan(a);
    AtomWeights w{atom.label, p.identity, {}};
    for (std::size_t v = 0; v < p.target.size(); ++v) {
      if (p.reference_count[v] == 0 && p.external_count[v] == 0) continue;
      StratumWeight sw;
      sw.stratum = stratum_label(spec, atom, v);
      sw.reference_proportion = p.reference_proportion[v];
      sw.external_proportion = static_cast<double>(p.external_count[v]) / n;
      sw.weight = p.external_count[v] ? sw.reference_proportion / sw.external_proportion : 0.0;
      sw.external_count = p.external_count[v];
      sw.target_count = p.target[v];
      const std::size_t need =
          p.required[v] ? std::max<std::size_t>(matcher.min_stratum(), 1)
                        : (p.target[v] > 0 ? 1 : 0);
      if (p.external_count[v] < need) {
        plan.support_report.push_back(StratumShortfall{
            atom.label, sw.stratum, p.external_count[v], need, sw.reference_proportion});
      }
      w.strata.push_back(std::move(sw));
    }
    plan.weights.push_back(std::move(w));
  }
  return plan;
}

inline ResamplePlan plan_prefix(const ScoredDataset& reference, const ScoredDataset& external,
                                std::span<const std::string> prefix,
                                std::size_t min_stratum = kDefaultMinStratum) {
  return plan_prefix(Matcher(reference, external, min_stratum), prefix);
}

}  // namespace confshap
