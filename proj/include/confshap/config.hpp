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

// Run configuration (JSON, schema "confshap.config/1"; see
// docs/config-schema.md) and the dataset preparation it drives.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "confshap/dataset.hpp"
#include "confshap/error.hpp"
#include "confshap/shapley.hpp"

namespace confshap {

inline constexpr std::string_view kConfigSchema = "confshap.config/1";
inline constexpr std::size_t kDefaultBinCount = 10;

struct DatasetSource {
  std::filesystem::path path;
  std::string site;
};

struct FactorDecl {
  FactorSpec spec;
  std::vector<std::string> columns;  // empty: default column names
  std::size_t bins = kDefaultBinCount;
  bool explicit_edges = false;
};

struct OutputOptions {
  std::filesystem::path dir = ".";
  std::string stem = "report";
  bool json = true;
  bool csv = true;
  bool svg = false;
};

struct RunConfig {
  DatasetSource reference;
  DatasetSource external;
  std::string score_column = "score";
  std::string label_column = "label";
  std::vector<FactorDecl> factors;
  MissingPolicy missing_policy = MissingPolicy::drop_row;
  AttributionOptions attribution;
  bool has_seed = false;
  std::optional<std::string> drill_down;
  OutputOptions output;

  ColumnMapping mapping() const {
    ColumnMapping m;
    m.score = score_column;
    m.label = label_column;
    for (const auto& f : factors) {
      if (!f.columns.empty()) m.factor_columns[f.spec.name] = f.columns;
    }
    return m;
  }

  std::vector<std::string> factor_names() const {
    std::vector<std::string> names;
    for (const auto& f : factors) names.push_back(f.spec.name);
    return names;
  }

  // Checks that need the fully overridden config (e.g. the seed may come
  // from the command line).
  void validate() const {
    if (!has_seed) throw ConfigError("seed is required");
    if (factors.empty()) throw ConfigError("factors: at least one factor is required");
    attribution.stopping.validate();
    if (attribution.resample_reps == 0) throw ConfigError("resample_reps must be at least 1");
    if (attribution.bootstrap_replicates != 0 && attribution.bootstrap_replicates < 100) {
      throw ConfigError("bootstrap_replicates must be 0 or at least 100");
    }
  }
};

namespace detail {

template <typename T>
T config_get(const nlohmann::json& j, const char* key, const std::string& where, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

inline DatasetSource parse_source(const nlohmann::json& j, const char* key,
                                  const std::filesystem::path& base) {
  if (!j.contains(key) || !j.at(key).is_object()) {
    throw ConfigError(std::string(key) + ": dataset entry with a path is required");
  }
  const auto& s = j.at(key);
  if (!s.contains("path")) throw ConfigError(std::string(key) + ".path is required");
  DatasetSource src;
  src.path = config_get<std::string>(s, "path", key, "");
  if (src.path.is_relative()) src.path = base / src.path;
  src.site = config_get<std::string>(s, "site", key, key);
  return src;
}

}  // namespace detail

// Relative dataset and output paths resolve against `base_dir`.
inline RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  using detail::config_get;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (j.contains("schema") && j.at("schema") != kConfigSchema) {
    throw ConfigError("schema: expected '" + std::string(kConfigSchema) + "'");
  }
  RunConfig c;
  c.reference = detail::parse_source(j, "reference", base_dir);
  c.external = detail::parse_source(j, "external", base_dir);
  if (j.contains("columns")) {
    c.score_column = config_get<std::string>(j.at("columns"), "score", "columns", "score");
    c.label_column = config_get<std::string>(j.at("columns"), "label", "columns", "label");
  }
  if (!j.contains("factors") || !j.at("factors").is_array()) {
    throw ConfigError("factors: array of factor declarations is required");
  }
  for (std::size_t i = 0; i < j.at("factors").size(); ++i) {
    const auto& fj = j.at("factors")[i];
    const std::string where = "factors[" + std::to_string(i) + "]";
    FactorDecl d;
    d.spec.name = config_get<std::string>(fj, "name", where, "");
    if (d.spec.name.empty()) throw ConfigError(where + ".name is required");
    d.spec.kind = parse_factor_kind(config_get<std::string>(fj, "kind", where, "categorical"));
    switch (d.spec.kind) {
      case FactorKind::categorical:
        d.spec.vocabulary =
            config_get<std::vector<std::string>>(fj, "vocabulary", where, {});
        if (fj.contains("column")) d.columns = {config_get<std::string>(fj, "column", where, "")};
        break;
      case FactorKind::continuous_binned:
        if (fj.contains("edges")) {
          d.spec.bin_edges = config_get<std::vector<double>>(fj, "edges", where, {});
          d.explicit_edges = true;
        }
        d.bins = config_get<std::size_t>(fj, "bins", where, kDefaultBinCount);
        if (!d.explicit_edges && d.bins < 2) throw ConfigError(where + ".bins must be >= 2");
        if (fj.contains("column")) d.columns = {config_get<std::string>(fj, "column", where, "")};
        break;
      case FactorKind::group:
        d.spec.members = config_get<std::vector<std::string>>(fj, "members", where, {});
        d.spec.vocabulary = d.spec.members;
        if (d.spec.members.empty()) throw ConfigError(where + ".members is required for a group");
        d.columns = config_get<std::vector<std::string>>(fj, "columns", where, {});
        if (!d.columns.empty() && d.columns.size() != d.spec.members.size()) {
          throw ConfigError(where + ".columns must list one column per member");
        }
        break;
    }
    c.factors.push_back(std::move(d));
  }
  {
    std::vector<FactorSpec> specs;
    for (const auto& f : c.factors) specs.push_back(f.spec);
    validate_spec_list(specs);
  }
  c.missing_policy =
      parse_missing_policy(config_get<std::string>(j, "missing_policy", "config", "drop-row"));

  auto& a = c.attribution;
  if (j.contains("stopping")) {
    const auto& s = j.at("stopping");
    a.stopping.se_tolerance = config_get<double>(s, "tolerance", "stopping", a.stopping.se_tolerance);
    a.stopping.max_iterations =
        config_get<std::size_t>(s, "max_iterations", "stopping", a.stopping.max_iterations);
    a.stopping.min_iterations =
        config_get<std::size_t>(s, "min_iterations", "stopping", a.stopping.min_iterations);
  }
  a.min_stratum = config_get<std::size_t>(j, "min_stratum", "config", a.min_stratum);
  a.resample_reps = config_get<std::size_t>(j, "resample_reps", "config", a.resample_reps);
  a.bootstrap_replicates =
      config_get<int>(j, "bootstrap_replicates", "config", a.bootstrap_replicates);
  a.threads = config_get<unsigned>(j, "threads", "config", a.threads);
  const auto seeding = config_get<std::string>(j, "seeding", "config", "per-permutation");
  if (seeding == "per-prefix") {
    a.seeding = ResampleSeeding::per_prefix;
  } else if (seeding != "per-permutation") {
    throw ConfigError("seeding: expected 'per-permutation' or 'per-prefix'");
  }
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned() && !j.at("seed").is_number_integer()) {
      throw ConfigError("seed: must be a nonnegative integer");
    }
    a.seed = j.at("seed").get<std::uint64_t>();
    c.has_seed = true;
  }
  if (j.contains("drill_down") && !j.at("drill_down").is_null()) {
    c.drill_down = config_get<std::string>(j, "drill_down", "config", "");
  }
  if (j.contains("output")) {
    const auto& o = j.at("output");
    c.output.dir = config_get<std::string>(o, "dir", "output", ".");
    c.output.stem = config_get<std::string>(o, "stem", "output", "report");
    if (o.contains("formats")) {
      auto formats = config_get<std::vector<std::string>>(o, "formats", "output", {});
      c.output.json = c.output.csv = c.output.svg = false;
      for (const auto& f : formats) {
        if (f == "json") c.output.json = true;
        else if (f == "csv") c.output.csv = true;
        else if (f == "svg") c.output.svg = true;
        else if (f == "all") c.output.json = c.output.csv = c.output.svg = true;
        else throw ConfigError("output.formats: unknown format '" + f + "'");
      }
    }
  }
  if (c.output.dir.is_relative()) c.output.dir = base_dir / c.output.dir;
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json factors = nlohmann::json::array();
  for (const auto& f : c.factors) {
    nlohmann::json fj = {{"name", f.spec.name}, {"kind", std::string(to_string(f.spec.kind))}};
    switch (f.spec.kind) {
      case FactorKind::categorical:
        fj["vocabulary"] = f.spec.vocabulary;
        if (!f.columns.empty()) fj["column"] = f.columns.front();
        break;
      case FactorKind::continuous_binned:
        if (f.explicit_edges) fj["edges"] = f.spec.bin_edges;
        else fj["bins"] = f.bins;
        if (!f.columns.empty()) fj["column"] = f.columns.front();
        break;
      case FactorKind::group:
        fj["members"] = f.spec.members;
        if (!f.columns.empty()) fj["columns"] = f.columns;
        break;
    }
    factors.push_back(std::move(fj));
  }
  nlohmann::json formats = nlohmann::json::array();
  if (c.output.json) formats.push_back("json");
  if (c.output.csv) formats.push_back("csv");
  if (c.output.svg) formats.push_back("svg");
  nlohmann::json j = {
      {"schema", kConfigSchema},
      {"reference", {{"path", c.reference.path.string()}, {"site", c.reference.site}}},
      {"external", {{"path", c.external.path.string()}, {"site", c.external.site}}},
      {"columns", {{"score", c.score_column}, {"label", c.label_column}}},
      {"factors", factors},
      {"missing_policy", std::string(to_string(c.missing_policy))},
      {"stopping",
       {{"tolerance", c.attribution.stopping.se_tolerance},
        {"max_iterations", c.attribution.stopping.max_iterations},
        {"min_iterations", c.attribution.stopping.min_iterations}}},
      {"min_stratum", c.attribution.min_stratum},
      {"resample_reps", c.attribution.resample_reps},
      {"bootstrap_replicates", c.attribution.bootstrap_replicates},
      {"threads", c.attribution.threads},
      {"seeding", c.attribution.seeding == ResampleSeeding::per_prefix ? "per-prefix"
                                                                      : "per-permutation"},
      {"output", {{"dir", c.output.dir.string()}, {"stem", c.output.stem}, {"formats", formats}}},
  };
  if (c.has_seed) j["seed"] = c.attribution.seed;
  if (c.drill_down) j["drill_down"] = *c.drill_down;
  return j;
}

struct PreparedData {
  ScoredDataset reference;
  ScoredDataset external;
  std::vector<FactorSpec> specs;
  std::vector<std::string> diagnostics;
};

// Reads both sites, bins continuous factors on the reference site, fixes
// shared vocabularies, and validates both datasets against one spec list.
inline PreparedData prepare_datasets(const RunConfig& config) {
  const RawTable ref_table = read_table(config.reference.path);
  const RawTable ext_table = read_table(config.external.path);
  const ColumnMapping mapping = config.mapping();
  std::vector<std::string> diagnostics;

  std::vector<FactorSpec> specs;
  for (const auto& f : config.factors) {
    if (f.spec.kind == FactorKind::continuous_binned && !f.explicit_edges) {
      specs.push_back(bin_continuous(ref_table, mapping.columns_for(f.spec).front(),
                                     f.spec.name, f.bins, &diagnostics));
    } else {
      specs.push_back(f.spec);
    }
  }
  const RawTable* tables[] = {&ref_table, &ext_table};
  specs = resolve_specs(std::move(specs), mapping, tables, config.missing_policy);

  auto ref = ingest(ref_table, config.reference.site, mapping, specs, config.missing_policy);
  auto ext = ingest(ext_table, config.external.site, mapping, specs, config.missing_policy);
  for (const auto& d : ref.diagnostics) diagnostics.push_back(config.reference.site + ": " + d);
  for (const auto& d : ext.diagnostics) diagnostics.push_back(config.external.site + ": " + d);
  return {std::move(ref.dataset), std::move(ext.dataset), std::move(specs),
          std::move(diagnostics)};
}

}  // namespace confshap
