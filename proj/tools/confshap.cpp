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

// confshap command-line tool: attribute, exact, auc, synth, report.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 configuration error,
// 3 data validation error, 4 attribution infeasible.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "confshap/confshap.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitInfeasible = 4;

struct RunFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> tolerance;
  std::optional<std::size_t> max_iters;
  std::optional<std::size_t> min_stratum;
  std::optional<unsigned> threads;
  std::optional<std::string> format;
  std::optional<std::string> out_dir;
  std::optional<std::string> drill_down;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("config", f.config_path, "run configuration (JSON)")->required();
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--tolerance", f.tolerance, "stop once every factor's SE is below this");
  cmd->add_option("--max-iters", f.max_iters, "permutation budget");
  cmd->add_option("--min-stratum", f.min_stratum, "minimum external rows per required stratum");
  cmd->add_option("--threads", f.threads, "worker threads (0: hardware concurrency)");
  cmd->add_option("--format", f.format, "output formats")
      ->check(CLI::IsMember({"json", "csv", "svg", "all"}));
  cmd->add_option("--out-dir", f.out_dir, "output directory");
}

confshap::RunConfig resolve_config(const RunFlags& f) {
  auto c = confshap::load_run_config(f.config_path);
  if (f.seed) {
    c.attribution.seed = *f.seed;
    c.has_seed = true;
  }
  if (f.tolerance) c.attribution.stopping.se_tolerance = *f.tolerance;
  if (f.max_iters) c.attribution.stopping.max_iterations = *f.max_iters;
  if (f.max_iters && c.attribution.stopping.min_iterations > *f.max_iters) {
    c.attribution.stopping.min_iterations = *f.max_iters;
  }
  if (f.min_stratum) c.attribution.min_stratum = *f.min_stratum;
  if (f.threads) c.attribution.threads = *f.threads;
  if (f.format) {
    const bool all = *f.format == "all";
    c.output.json = all || *f.format == "json";
    c.output.csv = all || *f.format == "csv";
    c.output.svg = all || *f.format == "svg";
  }
  if (f.out_dir) c.output.dir = *f.out_dir;
  if (f.drill_down) c.drill_down = *f.drill_down;
  c.validate();
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw confshap::DataError("cannot write '" + path.string() + "'");
  out << text;
}

class RunLog {
 public:
  void line(const std::string& s) { text_ << s << '\n'; }
  void write(const fs::path& path) const { write_text(path, text_.str()); }

 private:
  std::ostringstream text_;
};

void log_support(RunLog& log, const confshap::PreparedData& data,
                 const confshap::RunConfig& c) {
  const auto names = c.factor_names();
  const auto plan = confshap::plan_prefix(data.reference, data.external, names,
                                          c.attribution.min_stratum);
  for (const auto& s : plan.support_report) log.line("support: " + s.describe());
}

void log_report(RunLog& log, const confshap::AttributionReport& r) {
  log.line("method: " + r.method);
  log.line("termination: " + r.termination);
  log.line("permutations: sampled " + std::to_string(r.sampled_permutations) + ", skipped " +
           std::to_string(r.skipped_permutations));
  for (const auto& s : r.support_failures) log.line("skipped permutation: " + s);
  char buf[160];
  std::snprintf(buf, sizeof buf, "efficiency residual: %.3e",
                r.explained + r.unexplained - r.total_disparity);
  log.line(buf);
}

int emit_report(confshap::AttributionReport report, const confshap::RunConfig& c,
                const std::string& stem, RunLog& log) {
  report.config = json{{"run", confshap::to_json(c)}, {"engine", report.config}};
  fs::create_directories(c.output.dir);
  const fs::path base = c.output.dir / stem;
  log_report(log, report);
  std::vector<fs::path> written;
  if (c.output.json) {
    write_text(base.string() + ".json", confshap::to_json(report).dump(2) + "\n");
    written.emplace_back(base.string() + ".json");
  }
  if (c.output.csv) {
    std::ostringstream csv;
    confshap::write_csv_summary(report, csv);
    write_text(base.string() + ".csv", csv.str());
    written.emplace_back(base.string() + ".csv");
  }
  const confshap::DisparitySummary summary = confshap::summarize(report);
  if (c.output.svg) {
    std::vector<std::string> notes;
    write_text(base.string() + ".svg",
               confshap::render_svg(std::span<const confshap::DisparitySummary>(&summary, 1),
                                    &notes));
    for (const auto& n : notes) log.line("svg: " + n);
    written.emplace_back(base.string() + ".svg");
  }
  log.write(base.string() + ".log");
  std::cout << confshap::render_table(std::span<const confshap::DisparitySummary>(&summary, 1));
  for (const auto& p : written) std::cout << "wrote " << p.string() << '\n';
  std::cout << "wrote " << base.string() << ".log\n";
  return 0;
}

int cmd_attribute(const RunFlags& f, bool exact) {
  const auto c = resolve_config(f);
  RunLog log;
  log.line("config: " + f.config_path);
  log.line("seed: " + std::to_string(c.attribution.seed));
  auto data = confshap::prepare_datasets(c);
  for (const auto& d : data.diagnostics) log.line("ingest: " + d);
  log.line("rows: " + data.reference.site() + " " + std::to_string(data.reference.size()) +
           ", " + data.external.site() + " " + std::to_string(data.external.size()));
  log_support(log, data, c);

  const std::string stem = c.output.stem + (exact ? "-exact" : "");
  try {
    confshap::AttributionReport report;
    if (exact) {
      report = confshap::exact_attribute(data.reference, data.external, c.factor_names(),
                                         c.attribution);
    } else if (c.drill_down) {
      report = confshap::drill_down(data.reference, data.external, c.factor_names(),
                                    *c.drill_down, c.attribution);
    } else {
      report = confshap::attribute(data.reference, data.external, c.factor_names(),
                                   c.attribution);
    }
    return emit_report(std::move(report), c, stem, log);
  } catch (const confshap::AttributionInfeasible& e) {
    log.line(std::string("infeasible: ") + e.what());
    for (const auto& s : e.offending_strata()) log.line("offending stratum: " + s);
    fs::create_directories(c.output.dir);
    log.write((c.output.dir / stem).string() + ".log");
    throw;
  }
}

struct AucFlags {
  std::string data;
  std::string score = "score";
  std::string label = "label";
  int replicates = confshap::kDefaultBootstrapReplicates;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

int cmd_auc(const AucFlags& f) {
  if (f.replicates != 0 && f.replicates < 100) {
    throw confshap::ConfigError("--replicates must be 0 or at least 100");
  }
  confshap::ColumnMapping mapping;
  mapping.score = f.score;
  mapping.label = f.label;
  auto result = confshap::ingest(confshap::read_table(f.data), fs::path(f.data).stem().string(),
                                 mapping, {}, confshap::MissingPolicy::drop_row);
  for (const auto& d : result.diagnostics) std::cerr << "warning: " << d << '\n';
  const auto metric = confshap::auc_metric();
  const auto m = f.replicates == 0
                     ? confshap::point_metric(result.dataset, metric)
                     : confshap::bootstrap_ci(result.dataset, metric, f.replicates, f.seed,
                                              confshap::resolve_threads(f.threads));
  json out = confshap::to_json(m);
  out["metric"] = metric.name;
  out["replicates"] = f.replicates;
  out["seed"] = f.seed;
  out["rows_read"] = result.rows_read;
  out["rows_rejected"] = result.rows_rejected;
  std::cout << out.dump(2) << '\n';
  return 0;
}

struct SynthFlags {
  std::string scenario;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

json synth_run_config(const confshap::SynthScenario& s) {
  json factors = json::array();
  for (const auto& spec : s.observed_specs()) {
    json fj = {{"name", spec.name}, {"kind", std::string(confshap::to_string(spec.kind))}};
    if (spec.kind == confshap::FactorKind::group) fj["members"] = spec.members;
    else fj["vocabulary"] = spec.vocabulary;
    factors.push_back(std::move(fj));
  }
  return {{"schema", confshap::kConfigSchema},
          {"reference", {{"path", "reference.csv"}, {"site", s.reference_site}}},
          {"external", {{"path", "external.csv"}, {"site", s.external_site}}},
          {"columns", {{"score", "score"}, {"label", "label"}}},
          {"factors", factors},
          {"seed", s.seed},
          {"output", {{"dir", "out"}, {"stem", s.name}, {"formats", {"json", "csv", "svg"}}}}};
}

int cmd_synth(const SynthFlags& f) {
  auto scenario = confshap::load_scenario(f.scenario);
  if (f.seed) scenario.seed = *f.seed;
  const auto pair = confshap::generate(scenario);
  const fs::path dir = f.out_dir;
  fs::create_directories(dir);
  confshap::write_csv(pair.reference, dir / "reference.csv");
  confshap::write_csv(pair.external, dir / "external.csv");
  write_text(dir / "config.json", synth_run_config(scenario).dump(2) + "\n");
  write_text(dir / "scenario.json", confshap::to_json(scenario).dump(2) + "\n");
  std::cout << "wrote " << (dir / "reference.csv").string() << ", "
            << (dir / "external.csv").string() << ", " << (dir / "config.json").string();
  if (scenario.observed_names().size() <= 6) {
    const auto gt = confshap::ground_truth_phi(scenario);
    json phi = json::object();
    for (const auto& [n, v] : gt.phi) phi[n] = v;
    const json out = {{"scenario", scenario.name},
                      {"seed", scenario.seed},
                      {"reference_auc", gt.reference_auc},
                      {"external_auc", gt.external_auc},
                      {"matched_auc", gt.matched_auc},
                      {"total_disparity", gt.total_disparity},
                      {"unexplained", gt.unexplained},
                      {"phi", phi}};
    write_text(dir / "ground_truth.json", out.dump(2) + "\n");
    std::cout << ", " << (dir / "ground_truth.json").string();
  }
  std::cout << '\n';
  return 0;
}

struct ReportFlags {
  std::vector<std::string> reports;
  std::optional<std::string> svg;
};

int cmd_report(const ReportFlags& f) {
  std::vector<confshap::DisparitySummary> summaries;
  for (const auto& p : f.reports) summaries.push_back(confshap::load_summary(p));
  std::cout << confshap::render_table(summaries);
  if (f.svg) {
    std::vector<std::string> notes;
    write_text(*f.svg, confshap::render_svg(summaries, &notes));
    for (const auto& n : notes) std::cerr << "note: " << n << '\n';
    std::cout << "wrote " << *f.svg << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shapley attribution of cross-site performance disparity"};
  app.require_subcommand(1);

  RunFlags attribute_flags;
  auto* attribute = app.add_subcommand("attribute", "Monte Carlo attribution from a run config");
  add_run_flags(attribute, attribute_flags);
  attribute->add_option("--drill-down", attribute_flags.drill_down,
                        "split this group factor among its members");

  RunFlags exact_flags;
  auto* exact = app.add_subcommand("exact", "exact attribution over every ordering (K <= 8)");
  add_run_flags(exact, exact_flags);

  AucFlags auc_flags;
  auto* auc = app.add_subcommand("auc", "AUC with a bootstrap interval for one dataset");
  auc->add_option("data", auc_flags.data, "CSV or JSONL file")->required();
  auc->add_option("--score-column", auc_flags.score, "score column");
  auc->add_option("--label-column", auc_flags.label, "label column");
  auc->add_option("--replicates", auc_flags.replicates, "bootstrap replicates (0: none)");
  auc->add_option("--seed", auc_flags.seed, "bootstrap seed");
  auc->add_option("--threads", auc_flags.threads, "worker threads (0: hardware concurrency)");

  SynthFlags synth_flags;
  auto* synth = app.add_subcommand("synth", "generate a synthetic site pair from a scenario");
  synth->add_option("scenario", synth_flags.scenario, "scenario file (JSON)")->required();
  synth->add_option("out-dir", synth_flags.out_dir, "output directory")->required();
  synth->add_option("--seed", synth_flags.seed, "override the scenario seed");

  ReportFlags report_flags;
  auto* report = app.add_subcommand("report", "summarize report files");
  report->add_option("reports", report_flags.reports, "report JSON files")->required();
  report->add_option("--svg", report_flags.svg, "write a stacked-bar chart");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*attribute) return cmd_attribute(attribute_flags, false);
    if (*exact) return cmd_attribute(exact_flags, true);
    if (*auc) return cmd_auc(auc_flags);
    if (*synth) return cmd_synth(synth_flags);
    if (*report) return cmd_report(report_flags);
  } catch (const confshap::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const confshap::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    for (const auto& d : e.diagnostics()) std::cerr << "  " << d << '\n';
    return kExitData;
  } catch (const confshap::UndefinedMetric& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const confshap::AttributionInfeasible& e) {
    std::cerr << "attribution infeasible: " << e.what() << '\n';
    for (const auto& s : e.offending_strata()) std::cerr << "  " << s << '\n';
    return kExitInfeasible;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitOther;
  }
  return kExitOther;
}
