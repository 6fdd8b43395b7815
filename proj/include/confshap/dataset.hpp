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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "confshap/error.hpp"
#include "confshap/table_io.hpp"

namespace confshap {

enum class FactorKind { categorical, continuous_binned, group };

inline std::string_view to_string(FactorKind kind) {
  switch (kind) {
    case FactorKind::categorical:
      return "categorical";
    case FactorKind::continuous_binned:
      return "continuous";
    case FactorKind::group:
      return "group";
  }
  return "?";
}

inline FactorKind parse_factor_kind(std::string_view s) {
  if (s == "categorical") return FactorKind::categorical;
  if (s == "continuous" || s == "continuous-binned" || s == "binned") {
    return FactorKind::continuous_binned;
  }
  if (s == "group") return FactorKind::group;
  throw ConfigError("unknown factor kind '" + std::string(s) + "'");
}

inline constexpr std::string_view kMissingToken = "<missing>";

// Declaration of one Shapley player (a site factor).
//
// Categorical factors stratify on `vocabulary`; continuous factors on the
// bins delimited by `bin_edges` (unbounded outer bins, plus an optional
// trailing bin for missing values); group factors are a set of binary
// flags (`members`), each matched as its own Bernoulli marginal.
struct FactorSpec {
  std::string name;
  FactorKind kind = FactorKind::categorical;
  std::vector<double> bin_edges;
  std::vector<std::string> vocabulary;
  std::vector<std::string> members;
  bool missing_bin = false;

  static FactorSpec categorical(std::string name,
                                std::vector<std::string> vocabulary = {}) {
    FactorSpec s;
    s.name = std::move(name);
    s.kind = FactorKind::categorical;
    s.vocabulary = std::move(vocabulary);
    return s;
  }

  static FactorSpec binned(std::string name, std::vector<double> edges) {
    FactorSpec s;
    s.name = std::move(name);
    s.kind = FactorKind::continuous_binned;
    s.bin_edges = std::move(edges);
    return s;
  }

  static FactorSpec group(std::string name, std::vector<std::string> members) {
    FactorSpec s;
    s.name = std::move(name);
    s.kind = FactorKind::group;
    s.vocabulary = members;
    s.members = std::move(members);
    return s;
  }

  std::size_t bin_count() const {
    return bin_edges.size() + 1 + (missing_bin ? 1 : 0);
  }

  // Number of edges <= value, i.e. values equal to an edge fall in the upper
  // bin.
  std::size_t bin_of(double value) const {
    return static_cast<std::size_t>(
        std::upper_bound(bin_edges.begin(), bin_edges.end(), value) -
        bin_edges.begin());
  }

  std::size_t missing_bin_index() const { return bin_edges.size() + 1; }

  std::optional<std::size_t> category_code(std::string_view token) const {
    for (std::size_t i = 0; i < vocabulary.size(); ++i) {
      if (vocabulary[i] == token) return i;
    }
    return std::nullopt;
  }

  std::optional<std::size_t> member_index(std::string_view member) const {
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (members[i] == member) return i;
    }
    return std::nullopt;
  }

  void validate() const {
    if (name.empty()) throw ConfigError("factor name must not be empty");
    switch (kind) {
      case FactorKind::categorical: {
        std::set<std::string> seen(vocabulary.begin(), vocabulary.end());
        if (seen.size() != vocabulary.size()) {
          throw ConfigError("factor '" + name + "': duplicate vocabulary token");
        }
        break;
      }
      case FactorKind::continuous_binned:
        for (std::size_t i = 0; i < bin_edges.size(); ++i) {
          if (!std::isfinite(bin_edges[i])) {
            throw ConfigError("factor '" + name + "': non-finite bin edge");
          }
          if (i > 0 && !(bin_edges[i] > bin_edges[i - 1])) {
            throw ConfigError("factor '" + name +
                              "': bin edges must be strictly increasing");
          }
        }
        break;
      case FactorKind::group: {
        if (members.empty() || members.size() > 64) {
          throw ConfigError("group factor '" + name +
                            "' needs between 1 and 64 members");
        }
        std::set<std::string> seen(members.begin(), members.end());
        if (seen.size() != members.size()) {
          throw ConfigError("group factor '" + name + "': duplicate member");
        }
        break;
      }
    }
  }

  bool operator==(const FactorSpec&) const = default;
};

inline void validate_spec_list(std::span<const FactorSpec> specs) {
  std::set<std::string> names;
  for (const auto& s : specs) {
    s.validate();
    if (!names.insert(s.name).second) {
      throw ConfigError("duplicate factor name '" + s.name + "'");
    }
  }
}

// A realization of one factor: a category token, a bin index, or the set
// of flagged group members.
class FactorValue {
 public:
  FactorValue() = default;

  static FactorValue category(std::string token) {
    FactorValue v;
    v.value_ = std::move(token);
    return v;
  }
  static FactorValue bin(std::size_t index) {
    FactorValue v;
    v.value_ = index;
    return v;
  }
  static FactorValue flags(std::set<std::string> members) {
    FactorValue v;
    v.value_ = std::move(members);
    return v;
  }

  bool is_category() const { return value_.index() == 0; }
  bool is_bin() const { return value_.index() == 1; }
  bool is_flags() const { return value_.index() == 2; }

  const std::string& category() const { return std::get<0>(value_); }
  std::size_t bin() const { return std::get<1>(value_); }
  const std::set<std::string>& flags() const { return std::get<2>(value_); }

  bool operator==(const FactorValue&) const = default;

 private:
  std::variant<std::string, std::size_t, std::set<std::string>> value_;
};

struct ScoredRecord {
  double score = 0.0;
  int label = 0;
  std::map<std::string, FactorValue> factors;

  bool operator==(const ScoredRecord&) const = default;
};

// One matching dimension: a categorical/binned factor, or a single member
// flag of a group factor.
struct Atom {
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::size_t factor = 0;
  std::size_t member = npos;
  std::size_t cardinality = 0;
  std::string label;
};

inline std::vector<Atom> atoms_of(std::span<const FactorSpec> specs) {
  std::vector<Atom> atoms;
  for (std::size_t f = 0; f < specs.size(); ++f) {
    const auto& s = specs[f];
    switch (s.kind) {
      case FactorKind::categorical:
        atoms.push_back({f, Atom::npos, s.vocabulary.size(), s.name});
        break;
      case FactorKind::continuous_binned:
        atoms.push_back({f, Atom::npos, s.bin_count(), s.name});
        break;
      case FactorKind::group:
        for (std::size_t m = 0; m < s.members.size(); ++m) {
          atoms.push_back({f, m, 2, s.name + "/" + s.members[m]});
        }
        break;
    }
  }
  return atoms;
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Human-readable name of stratum `code` of an atom.
inline std::string stratum_label(const FactorSpec& spec, const Atom& atom,
                                 std::size_t code) {
  if (atom.member != Atom::npos) return code ? "present" : "absent";
  if (spec.kind == FactorKind::categorical) return spec.vocabulary.at(code);
  if (spec.missing_bin && code == spec.missing_bin_index()) {
    return std::string(kMissingToken);
  }
  const auto& e = spec.bin_edges;
  std::string lo = code == 0 ? "-inf" : format_real(e[code - 1]);
  std::string hi = code >= e.size() ? "inf" : format_real(e[code]);
  return "[" + lo + ", " + hi + ")";
}

// Immutable, validated scored dataset for one site. Copies share state.
//
// Besides the record list, the dataset keeps columnar views used by the
// hot paths: scores, labels, per-atom stratum codes, the ascending-score
// order, and a canonical order that depends only on record contents (not on
// input row order).
class ScoredDataset {
 public:
  ScoredDataset(std::string site, std::vector<FactorSpec> specs,
                std::vector<ScoredRecord> records) {
    validate_spec_list(specs);
    auto st = std::make_shared<State>();
    st->site = std::move(site);
    st->specs = std::move(specs);
    st->records = std::move(records);
    build(*st);
    state_ = std::move(st);
  }

  const std::string& site() const { return state_->site; }
  const std::vector<FactorSpec>& specs() const { return state_->specs; }
  const std::vector<ScoredRecord>& records() const { return state_->records; }
  std::size_t size() const { return state_->records.size(); }

  std::span<const double> scores() const { return state_->scores; }
  std::span<const std::uint8_t> labels() const { return state_->labels; }
  std::size_t positives() const { return state_->n_pos; }
  std::size_t negatives() const { return state_->n_neg; }

  const std::vector<Atom>& atoms() const { return state_->atoms; }
  std::span<const std::uint32_t> codes(std::size_t atom) const {
    return state_->codes.at(atom);
  }
  std::span<const std::uint32_t> score_order() const {
    return state_->score_order;
  }
  std::span<const std::uint32_t> canonical_order() const {
    return state_->canonical_order;
  }

  std::optional<std::size_t> factor_index(std::string_view name) const {
    for (std::size_t i = 0; i < state_->specs.size(); ++i) {
      if (state_->specs[i].name == name) return i;
    }
    return std::nullopt;
  }

  const FactorSpec& spec(std::string_view name) const {
    auto idx = factor_index(name);
    if (!idx) throw ConfigError("unknown factor '" + std::string(name) + "'");
    return state_->specs[*idx];
  }

  // Atom indices of factor `f`, in declared member order.
  std::vector<std::size_t> atoms_of_factor(std::size_t f) const {
    std::vector<std::size_t> out;
    for (std::size_t a = 0; a < state_->atoms.size(); ++a) {
      if (state_->atoms[a].factor == f) out.push_back(a);
    }
    return out;
  }

 private:
  struct State {
    std::string site;
    std::vector<FactorSpec> specs;
    std::vector<ScoredRecord> records;
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    std::vector<Atom> atoms;
    std::vector<std::vector<std::uint32_t>> codes;
    std::vector<std::uint32_t> score_order;
    std::vector<std::uint32_t> canonical_order;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
  };

  static void build(State& st) {
    const std::size_t n = st.records.size();
    if (n == 0) throw DataError("dataset '" + st.site + "' has no records");
    if (n > std::numeric_limits<std::uint32_t>::max()) {
      throw DataError("dataset '" + st.site + "' is too large");
    }
    st.atoms = atoms_of(st.specs);
    st.codes.assign(st.atoms.size(), std::vector<std::uint32_t>(n));
    st.scores.resize(n);
    st.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& r = st.records[i];
      const std::string where = " at record " + std::to_string(i + 1);
      if (!std::isfinite(r.score) || r.score < 0.0 || r.score > 1.0) {
        throw DataError("score out of [0,1]" + where);
      }
      if (r.label != 0 && r.label != 1) throw DataError("label not in {0,1}" + where);
      st.scores[i] = r.score;
      st.labels[i] = static_cast<std::uint8_t>(r.label);
      (r.label ? st.n_pos : st.n_neg) += 1;
      if (r.factors.size() != st.specs.size()) {
        for (const auto& [name, _] : r.factors) {
          bool known = std::any_of(st.specs.begin(), st.specs.end(),
                                   [&](const FactorSpec& s) { return s.name == name; });
          if (!known) throw DataError("undeclared factor '" + name + "'" + where);
        }
      }
      for (std::size_t a = 0; a < st.atoms.size(); ++a) {
        const auto& atom = st.atoms[a];
        const auto& spec = st.specs[atom.factor];
        auto it = r.factors.find(spec.name);
        if (it == r.factors.end()) {
          throw DataError("missing value for factor '" + spec.name + "'" + where);
        }
        st.codes[a][i] = code_of(spec, atom, it->second, where);
      }
    }
    if (st.n_pos == 0 || st.n_neg == 0) {
      throw DataError("dataset '" + st.site +
                      "' needs both label classes (AUC undefined)");
    }

    st.score_order.resize(n);
    std::iota(st.score_order.begin(), st.score_order.end(), 0U);
    std::stable_sort(st.score_order.begin(), st.score_order.end(),
                     [&](std::uint32_t a, std::uint32_t b) {
                       return st.scores[a] < st.scores[b];
                     });

    st.canonical_order.resize(n);
    std::iota(st.canonical_order.begin(), st.canonical_order.end(), 0U);
    std::sort(st.canonical_order.begin(), st.canonical_order.end(),
              [&](std::uint32_t a, std::uint32_t b) {
                if (st.scores[a] != st.scores[b]) return st.scores[a] < st.scores[b];
                if (st.labels[a] != st.labels[b]) return st.labels[a] < st.labels[b];
                for (const auto& col : st.codes) {
                  if (col[a] != col[b]) return col[a] < col[b];
                }
                return a < b;
              });
  }

  static std::uint32_t code_of(const FactorSpec& spec, const Atom& atom,
                               const FactorValue& v, const std::string& where) {
    switch (spec.kind) {
      case FactorKind::categorical: {
        if (!v.is_category()) {
          throw DataError("factor '" + spec.name + "' expects a category" + where);
        }
        auto code = spec.category_code(v.category());
        if (!code) {
          throw DataError("token '" + v.category() + "' not in vocabulary of '" +
                          spec.name + "'" + where);
        }
        return static_cast<std::uint32_t>(*code);
      }
      case FactorKind::continuous_binned:
        if (!v.is_bin()) {
          throw DataError("factor '" + spec.name + "' expects a bin index" + where);
        }
        if (v.bin() >= spec.bin_count()) {
          throw DataError("bin index out of range for '" + spec.name + "'" + where);
        }
        return static_cast<std::uint32_t>(v.bin());
      case FactorKind::group: {
        if (!v.is_flags()) {
          throw DataError("factor '" + spec.name + "' expects a flag set" + where);
        }
        for (const auto& tok : v.flags()) {
          if (!spec.member_index(tok)) {
            throw DataError("flag '" + tok + "' not a member of '" + spec.name +
                            "'" + where);
          }
        }
        return v.flags().count(spec.members[atom.member]) ? 1U : 0U;
      }
    }
    return 0;
  }

  std::shared_ptr<const State> state_;
};

// ---------------------------------------------------------------------------
// Ingestion

enum class MissingPolicy { drop_row, own_category };

inline MissingPolicy parse_missing_policy(std::string_view s) {
  if (s == "drop-row" || s == "drop_row") return MissingPolicy::drop_row;
  if (s == "own-category" || s == "own_category") return MissingPolicy::own_category;
  throw ConfigError("unknown missing-policy '" + std::string(s) + "'");
}

inline std::string_view to_string(MissingPolicy p) {
  return p == MissingPolicy::drop_row ? "drop-row" : "own-category";
}

inline bool is_missing_cell(const std::optional<std::string>& cell) {
  if (!cell) return true;
  const std::string& s = *cell;
  return s.empty() || s == "NA" || s == "N/A" || s == "null" || s == "NULL";
}

// Column mapping from factors to input columns. Factors not listed map to a
// column of their own name; group members default to "<factor>.<member>".
struct ColumnMapping {
  std::string score = "score";
  std::string label = "label";
  std::map<std::string, std::vector<std::string>> factor_columns;

  std::vector<std::string> columns_for(const FactorSpec& spec) const {
    auto it = factor_columns.find(spec.name);
    if (it != factor_columns.end()) {
      if (spec.kind == FactorKind::group && it->second.size() != spec.members.size()) {
        throw ConfigError("group factor '" + spec.name + "' maps " +
                          std::to_string(it->second.size()) + " columns for " +
                          std::to_string(spec.members.size()) + " members");
      }
      if (spec.kind != FactorKind::group && it->second.size() != 1) {
        throw ConfigError("factor '" + spec.name + "' must map exactly one column");
      }
      return it->second;
    }
    if (spec.kind != FactorKind::group) return {spec.name};
    std::vector<std::string> cols;
    for (const auto& m : spec.members) cols.push_back(spec.name + "." + m);
    return cols;
  }
};

namespace detail {

inline std::optional<double> parse_real(const std::string& s) {
  if (s.empty()) return std::nullopt;
  const char* begin = s.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  while (*end == ' ' || *end == '\t') ++end;
  if (end == begin || *end != '\0') return std::nullopt;
  return v;
}

inline std::optional<int> parse_flag(const std::string& s) {
  if (s == "1" || s == "true" || s == "True" || s == "TRUE") return 1;
  if (s == "0" || s == "false" || s == "False" || s == "FALSE") return 0;
  if (auto v = parse_real(s)) {
    if (*v == 1.0) return 1;
    if (*v == 0.0) return 0;
  }
  return std::nullopt;
}

inline std::size_t require_column(const RawTable& table, const std::string& name) {
  auto idx = table.find(name);
  if (!idx) throw DataError("unknown column '" + name + "'");
  return *idx;
}

}  // namespace detail

// Fills in what a spec list leaves open, consistently across several tables:
// empty categorical vocabularies become the sorted union of observed tokens,
// and under own-category the "<missing>" token / missing bin is added.
// Idempotent.
inline std::vector<FactorSpec> resolve_specs(
    std::vector<FactorSpec> specs, const ColumnMapping& mapping,
    std::span<const RawTable* const> tables, MissingPolicy policy) {
  for (auto& spec : specs) {
    if (spec.kind == FactorKind::categorical) {
      if (spec.vocabulary.empty()) {
        std::set<std::string> tokens;
        const auto col = mapping.columns_for(spec).front();
        for (const RawTable* t : tables) {
          const std::size_t c = detail::require_column(*t, col);
          for (const auto& row : t->rows) {
            if (!is_missing_cell(row[c])) tokens.insert(*row[c]);
          }
        }
        tokens.erase(std::string(kMissingToken));
        spec.vocabulary.assign(tokens.begin(), tokens.end());
      }
      if (policy == MissingPolicy::own_category && !spec.category_code(kMissingToken)) {
        spec.vocabulary.emplace_back(kMissingToken);
      }
    } else if (spec.kind == FactorKind::continuous_binned) {
      if (policy == MissingPolicy::own_category) spec.missing_bin = true;
    }
  }
  validate_spec_list(specs);
  return specs;
}

struct IngestResult {
  ScoredDataset dataset;
  std::vector<std::string> diagnostics;
  std::size_t rows_read = 0;
  std::size_t rows_rejected = 0;
};

// Builds a validated dataset from a raw table. Rows that violate the
// score/label invariants, or carry unparseable factor values, are rejected
// with row-numbered diagnostics (rows are 1-based, header excluded).
// Missing factor values drop the row or map to the "<missing>" stratum per
// `policy`; for group flags, own-category reads a missing flag as absent.
inline IngestResult ingest(const RawTable& table, std::string site,
                           const ColumnMapping& mapping,
                           std::vector<FactorSpec> specs, MissingPolicy policy) {
  const RawTable* self[] = {&table};
  specs = resolve_specs(std::move(specs), mapping, self, policy);

  const std::size_t score_col = detail::require_column(table, mapping.score);
  const std::size_t label_col = detail::require_column(table, mapping.label);
  std::vector<std::vector<std::size_t>> factor_cols;
  for (const auto& spec : specs) {
    std::vector<std::size_t> cols;
    for (const auto& c : mapping.columns_for(spec)) {
      cols.push_back(detail::require_column(table, c));
    }
    factor_cols.push_back(std::move(cols));
  }

  std::vector<std::string> diagnostics;
  std::vector<ScoredRecord> records;
  records.reserve(table.rows.size());
  std::size_t dropped_missing = 0;
  std::size_t pos = 0, neg = 0;

  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string at = " at row " + std::to_string(r + 1);
    ScoredRecord rec;

    const auto& score_cell = row[score_col];
    if (is_missing_cell(score_cell)) {
      diagnostics.push_back("score missing" + at);
      continue;
    }
    auto score = detail::parse_real(*score_cell);
    if (!score) {
      diagnostics.push_back("score not numeric" + at);
      continue;
    }
    if (!std::isfinite(*score) || *score < 0.0 || *score > 1.0) {
      diagnostics.push_back("score out of [0,1]" + at);
      continue;
    }
    rec.score = *score;

    const auto& label_cell = row[label_col];
    std::optional<int> label;
    if (!is_missing_cell(label_cell)) label = detail::parse_flag(*label_cell);
    if (!label) {
      diagnostics.push_back("label not in {0,1}" + at);
      continue;
    }
    rec.label = *label;

    bool keep = true;
    bool missing = false;
    for (std::size_t f = 0; f < specs.size() && keep; ++f) {
      const auto& spec = specs[f];
      const auto& cols = factor_cols[f];
      switch (spec.kind) {
        case FactorKind::categorical: {
          const auto& cell = row[cols[0]];
          std::string token;
          if (is_missing_cell(cell)) {
            if (policy == MissingPolicy::drop_row) {
              missing = true;
              keep = false;
              break;
            }
            token = std::string(kMissingToken);
          } else {
            token = *cell;
          }
          if (!spec.category_code(token)) {
            diagnostics.push_back("factor '" + spec.name + "' value '" + token +
                                  "' not in vocabulary" + at);
            keep = false;
            break;
          }
          rec.factors.emplace(spec.name, FactorValue::category(std::move(token)));
          break;
        }
        case FactorKind::continuous_binned: {
          const auto& cell = row[cols[0]];
          if (is_missing_cell(cell)) {
            if (policy == MissingPolicy::drop_row) {
              missing = true;
              keep = false;
              break;
            }
            rec.factors.emplace(spec.name, FactorValue::bin(spec.missing_bin_index()));
            break;
          }
          auto v = detail::parse_real(*cell);
          if (!v || !std::isfinite(*v)) {
            diagnostics.push_back("factor '" + spec.name + "' not a finite number" + at);
            keep = false;
            break;
          }
          rec.factors.emplace(spec.name, FactorValue::bin(spec.bin_of(*v)));
          break;
        }
        case FactorKind::group: {
          std::set<std::string> flags;
          for (std::size_t m = 0; m < spec.members.size() && keep; ++m) {
            const auto& cell = row[cols[m]];
            if (is_missing_cell(cell)) {
              if (policy == MissingPolicy::drop_row) {
                missing = true;
                keep = false;
              }
              continue;
            }
            auto flag = detail::parse_flag(*cell);
            if (!flag) {
              diagnostics.push_back("flag '" + spec.members[m] + "' of '" + spec.name +
                                    "' not 0/1" + at);
              keep = false;
            } else if (*flag) {
              flags.insert(spec.members[m]);
            }
          }
          if (keep) rec.factors.emplace(spec.name, FactorValue::flags(std::move(flags)));
          break;
        }
      }
    }
    if (!keep) {
      if (missing) ++dropped_missing;
      continue;
    }
    (rec.label ? pos : neg) += 1;
    records.push_back(std::move(rec));
  }
  if (dropped_missing > 0) {
    diagnostics.push_back(std::to_string(dropped_missing) +
                          " row(s) dropped for missing factor values");
  }
  const std::size_t rejected = table.rows.size() - records.size();
  if (records.empty()) {
    throw DataError("no rows survived validation in site '" + site + "'", diagnostics);
  }
  if (pos == 0 || neg == 0) {
    throw DataError("label column of site '" + site + "' has a single class",
                    diagnostics);
  }
  IngestResult out{ScoredDataset(std::move(site), std::move(specs), std::move(records)),
                   std::move(diagnostics), table.rows.size(), rejected};
  return out;
}

inline IngestResult ingest(const std::filesystem::path& path, std::string site,
                           const ColumnMapping& mapping, std::vector<FactorSpec> specs,
                           MissingPolicy policy) {
  return ingest(read_table(path), std::move(site), mapping, std::move(specs), policy);
}

// ---------------------------------------------------------------------------
// Binning

// Equal-frequency bins anchored on the reference values: edge k sits at the
// midpoint between the order statistics straddling quantile k/bin_count.
// Edges that do not split the reference sample are dropped, with a warning.
inline FactorSpec bin_continuous(std::span<const double> reference_values,
                                 std::string factor, std::size_t bin_count,
                                 std::vector<std::string>* warnings = nullptr) {
  if (bin_count < 2) {
    throw ConfigError("factor '" + factor + "': bin count must be at least 2");
  }
  std::vector<double> x;
  x.reserve(reference_values.size());
  for (double v : reference_values) {
    if (std::isfinite(v)) x.push_back(v);
  }
  if (x.empty()) {
    throw DataError("factor '" + factor + "': no finite reference values to bin");
  }
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size();
  std::vector<double> edges;
  for (std::size_t k = 1; k < bin_count; ++k) {
    std::size_t m = (2 * k * n + bin_count) / (2 * bin_count);
    m = std::clamp<std::size_t>(m, 1, n - 1 == 0 ? 1 : n - 1);
    if (m >= n) break;
    const double lo = x[m - 1], hi = x[m];
    const double e = lo == hi ? hi : lo + (hi - lo) / 2;
    if (!(e > x.front()) || e > x.back()) continue;
    if (!edges.empty() && !(e > edges.back())) continue;
    edges.push_back(e);
  }
  if (edges.size() + 1 < bin_count && warnings) {
    warnings->push_back("factor '" + factor + "': only " +
                        std::to_string(edges.size() + 1) + " bin(s) from " +
                        std::to_string(bin_count) +
                        " requested (too few distinct reference values)");
  }
  return FactorSpec::binned(std::move(factor), std::move(edges));
}

inline FactorSpec bin_continuous(const RawTable& reference, const std::string& column,
                                 std::string factor, std::size_t bin_count,
                                 std::vector<std::string>* warnings = nullptr) {
  const std::size_t c = detail::require_column(reference, column);
  std::vector<double> values;
  values.reserve(reference.rows.size());
  for (const auto& row : reference.rows) {
    if (is_missing_cell(row[c])) continue;
    if (auto v = detail::parse_real(*row[c])) values.push_back(*v);
  }
  return bin_continuous(values, std::move(factor), bin_count, warnings);
}

// ---------------------------------------------------------------------------
// Marginals

struct DistributionEntry {
  std::string value;
  double proportion = 0.0;
  std::size_t count = 0;
};

using DistributionTable = std::vector<DistributionEntry>;

// Observed marginal of one factor. Group factors yield one Bernoulli
// proportion (fraction flagged) per member; other kinds yield a
// distribution over the observed strata in code order.
inline DistributionTable marginal(const ScoredDataset& dataset, std::string_view factor) {
  auto f = dataset.factor_index(factor);
  if (!f) throw ConfigError("unknown factor '" + std::string(factor) + "'");
  const auto& spec = dataset.specs()[*f];
  const double n = static_cast<double>(dataset.size());
  DistributionTable table;
  for (std::size_t a : dataset.atoms_of_factor(*f)) {
    const auto& atom = dataset.atoms()[a];
    std::vector<std::size_t> counts(atom.cardinality, 0);
    for (std::uint32_t c : dataset.codes(a)) ++counts[c];
    if (atom.member != Atom::npos) {
      table.push_back({spec.members[atom.member], counts[1] / n, counts[1]});
      continue;
    }
    for (std::size_t v = 0; v < counts.size(); ++v) {
      if (counts[v] == 0) continue;
      table.push_back({stratum_label(spec, atom, v), counts[v] / n, counts[v]});
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Canonical emission

inline ColumnMapping canonical_mapping(std::span<const FactorSpec> specs) {
  ColumnMapping m;
  for (const auto& s : specs) m.factor_columns[s.name] = m.columns_for(s);
  return m;
}

namespace detail {

// A real value that bins back to `bin` under `spec`.
inline std::string bin_representative(const FactorSpec& spec, std::size_t bin) {
  if (spec.missing_bin && bin == spec.missing_bin_index()) return "";
  const auto& e = spec.bin_edges;
  if (e.empty()) return "0";
  if (bin == 0) {
    return format_real(std::nextafter(e[0], -std::numeric_limits<double>::infinity()));
  }
  return format_real(e[bin - 1]);
}

}  // namespace detail

// Writes the canonical CSV form (score, label, one column per factor, one
// 0/1 column per group member). Scores use 17 significant digits so that
// re-ingesting with `canonical_mapping(dataset.specs())` reproduces the
// records bit-exactly.
inline void write_csv(const ScoredDataset& dataset, std::ostream& out) {
  const auto mapping = canonical_mapping(dataset.specs());
  out << "score,label";
  for (const auto& spec : dataset.specs()) {
    for (const auto& col : mapping.columns_for(spec)) {
      out << ',';
      write_csv_field(out, col);
    }
  }
  out << '\n';
  for (const auto& rec : dataset.records()) {
    out << format_real(rec.score) << ',' << rec.label;
    for (const auto& spec : dataset.specs()) {
      const auto& v = rec.factors.at(spec.name);
      switch (spec.kind) {
        case FactorKind::categorical:
          out << ',';
          write_csv_field(out, v.category());
          break;
        case FactorKind::continuous_binned:
          out << ',' << detail::bin_representative(spec, v.bin());
          break;
        case FactorKind::group:
          for (const auto& m : spec.members) out << ',' << (v.flags().count(m) ? 1 : 0);
          break;
      }
    }
    out << '\n';
  }
}

inline void write_csv(const ScoredDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  write_csv(dataset, out);
}

}  // namespace confshap
