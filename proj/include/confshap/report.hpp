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

// Report serialization (JSON, Table-2-shaped CSV row), explained-fraction
// summaries across reports, and the stacked-bar SVG.
//
// JSON schema "confshap.report/1": see docs/report-schema.md.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "confshap/error.hpp"
#include "confshap/metric.hpp"
#include "confshap/shapley.hpp"

namespace confshap {

inline constexpr std::string_view kReportSchema = "confshap.report/1";

// Totals below this magnitude have no meaningful explained fraction.
inline constexpr double kMinFractionTotal = 1e-3;

inline std::string evaluation_label(std::string_view reference_site,
                                    std::string_view external_site) {
  return std::string(reference_site) + " on " + std::string(external_site);
}

inline nlohmann::json to_json(const MetricResult& m) {
  return {{"value", m.value}, {"ci_low", m.ci_low}, {"ci_high", m.ci_high},
          {"n_pos", m.n_pos}, {"n_neg", m.n_neg}};
}

inline nlohmann::json to_json(const AttributionReport& r) {
  nlohmann::json factors = nlohmann::json::array();
  for (const auto& f : r.factors) {
    factors.push_back({{"name", f.name},
                       {"phi", f.phi},
                       {"se", f.se},
                       {"ci_low", f.ci_low()},
                       {"ci_high", f.ci_high()},
                       {"n_permutations", f.n_permutations}});
  }
  return {
      {"schema", kReportSchema},
      {"method", r.method},
      {"label", evaluation_label(r.reference_site, r.external_site)},
      {"reference_site", r.reference_site},
      {"external_site", r.external_site},
      {"reference_performance", to_json(r.reference_performance)},
      {"external_performance", to_json(r.external_performance)},
      {"baseline_performance", r.baseline_performance},
      {"matched_performance", r.matched_performance},
      {"factors", factors},
      {"held_matched", r.held_matched},
      {"explained", r.explained},
      {"unexplained", r.unexplained},
      {"total_disparity", r.total_disparity},
      {"sampled_permutations", r.sampled_permutations},
      {"skipped_permutations", r.skipped_permutations},
      {"termination", r.termination},
      {"seed", r.seed},
      {"support_failures", r.support_failures},
      {"config", r.config},
  };
}

inline MetricResult metric_result_from_json(const nlohmann::json& j) {
  MetricResult m;
  m.value = j.at("value").get<double>();
  m.ci_low = j.value("ci_low", m.value);
  m.ci_high = j.value("ci_high", m.value);
  m.n_pos = j.value("n_pos", std::size_t{0});
  m.n_neg = j.value("n_neg", std::size_t{0});
  return m;
}

// Inverse of to_json(AttributionReport). Round-trips every field.
inline AttributionReport report_from_json(const nlohmann::json& j) {
  try {
    if (j.contains("schema") && j.at("schema").get<std::string>() != kReportSchema) {
      throw DataError("unsupported report schema '" + j.at("schema").get<std::string>() + "'");
    }
    AttributionReport r;
    r.method = j.value("method", "");
    r.reference_site = j.value("reference_site", "");
    r.external_site = j.value("external_site", "");
    r.reference_performance = metric_result_from_json(j.at("reference_performance"));
    r.external_performance = metric_result_from_json(j.at("external_performance"));
    r.baseline_performance = j.value("baseline_performance", r.external_performance.value);
    for (const auto& f : j.at("factors")) {
      r.factors.push_back({f.at("name").get<std::string>(), f.at("phi").get<double>(),
                           f.value("se", 0.0), f.value("n_permutations", std::size_t{0})});
    }
    r.held_matched = j.value("held_matched", std::vector<std::string>{});
    r.explained = j.at("explained").get<double>();
    r.unexplained = j.at("unexplained").get<double>();
    r.total_disparity = j.at("total_disparity").get<double>();
    r.matched_performance = j.value("matched_performance", r.baseline_performance + r.explained);
    r.sampled_permutations = j.value("sampled_permutations", std::size_t{0});
    r.skipped_permutations = j.value("skipped_permutations", std::size_t{0});
    r.termination = j.value("termination", "");
    r.seed = j.value("seed", std::uint64_t{0});
    r.support_failures = j.value("support_failures", std::vector<std::string>{});
    r.config = j.value("config", nlohmann::json::object());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

// The Table-2-shaped CSV: one header, one row per report.
inline void write_csv_summary(std::span<const AttributionReport> reports, std::ostream& out) {
  if (reports.empty()) return;
  out << "evaluation";
  for (const auto& f : reports.front().factors) {
    out << ',';
    write_csv_field(out, f.name);
  }
  out << ",Unexplained,Total\n";
  char buf[64];
  for (const auto& r : reports) {
    write_csv_field(out, evaluation_label(r.reference_site, r.external_site));
    for (const auto& f : r.factors) {
      std::snprintf(buf, sizeof buf, ",%.12f", f.phi);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.12f,%.12f\n", r.unexplained, r.total_disparity);
    out << buf;
  }
}

inline void write_csv_summary(const AttributionReport& report, std::ostream& out) {
  write_csv_summary(std::span<const AttributionReport>(&report, 1), out);
}

// ---------------------------------------------------------------------------
// Cross-report summaries

// What the summary table and the bar chart need from a report. Levels are
// absent for reports that carry contributions only.
struct DisparitySummary {
  std::string label;
  std::vector<std::pair<std::string, double>> phi;
  double explained = 0.0;
  double unexplained = 0.0;
  double total = 0.0;
  std::optional<double> external_level;
  std::optional<double> reference_level;

  // (total - unexplained) / total; none when |total| < 1e-3.
  std::optional<double> explained_fraction() const {
    if (!(std::abs(total) >= kMinFractionTotal)) return std::nullopt;
    return (total - unexplained) / total;
  }
};

inline DisparitySummary summarize(const AttributionReport& r) {
  DisparitySummary s;
  s.label = evaluation_label(r.reference_site, r.external_site);
  for (const auto& f : r.factors) s.phi.emplace_back(f.name, f.phi);
  s.explained = r.explained;
  s.unexplained = r.unexplained;
  s.total = r.total_disparity;
  s.external_level = r.external_performance.value;
  s.reference_level = r.reference_performance.value;
  return s;
}

// Accepts a full report or a contributions-only record with `factors`
// (name, phi), `unexplained`, and `total_disparity`; `label` and the
// performance objects are optional.
inline DisparitySummary summary_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object()) throw DataError("malformed report: not a JSON object");
    if (j.contains("schema") && j.at("schema").get<std::string>() != kReportSchema) {
      throw DataError("unsupported report schema '" + j.at("schema").get<std::string>() + "'");
    }
    DisparitySummary s;
    if (j.contains("label")) {
      s.label = j.at("label").get<std::string>();
    } else {
      s.label = evaluation_label(j.value("reference_site", "reference"),
                                 j.value("external_site", "external"));
    }
    for (const auto& f : j.at("factors")) {
      s.phi.emplace_back(f.at("name").get<std::string>(), f.at("phi").get<double>());
    }
    s.unexplained = j.at("unexplained").get<double>();
    s.total = j.at("total_disparity").get<double>();
    double sum = 0.0;
    for (const auto& [_, v] : s.phi) sum += v;
    s.explained = j.value("explained", sum);
    if (j.contains("external_performance")) {
      s.external_level = j.at("external_performance").at("value").get<double>();
    }
    if (j.contains("reference_performance")) {
      s.reference_level = j.at("reference_performance").at("value").get<double>();
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

inline DisparitySummary load_summary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read report '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("malformed report '" + path.string() + "': " + e.what());
  }
  return summary_from_json(j);
}

struct FractionStats {
  std::vector<std::optional<double>> fractions;
  std::size_t counted = 0;
  std::optional<double> mean;
  std::optional<double> max;
};

inline FractionStats fraction_stats(std::span<const DisparitySummary> summaries) {
  FractionStats st;
  double sum = 0.0;
  for (const auto& s : summaries) {
    auto f = s.explained_fraction();
    st.fractions.push_back(f);
    if (!f) continue;
    ++st.counted;
    sum += *f;
    st.max = st.max ? std::max(*st.max, *f) : *f;
  }
  if (st.counted > 0) st.mean = sum / static_cast<double>(st.counted);
  return st;
}

inline std::string render_table(std::span<const DisparitySummary> summaries) {
  const auto stats = fraction_stats(summaries);
  std::ostringstream out;
  out << std::fixed << std::setprecision(3);
  for (std::size_t i = 0; i < summaries.size(); ++i) {
    const auto& s = summaries[i];
    out << s.label << '\n';
    for (const auto& [name, v] : s.phi) {
      out << "  " << std::left << std::setw(28) << name << std::right << std::setw(9) << v << '\n';
    }
    out << "  " << std::left << std::setw(28) << "Unexplained" << std::right << std::setw(9)
        << s.unexplained << '\n';
    out << "  " << std::left << std::setw(28) << "Total" << std::right << std::setw(9) << s.total
        << '\n';
    out << "  " << std::left << std::setw(28) << "Explained fraction" << std::right
        << std::setw(9);
    if (stats.fractions[i]) {
      out << *stats.fractions[i];
    } else {
      out << "n/a";
    }
    out << "\n\n";
  }
  out << "Reports: " << summaries.size() << " (" << stats.counted << " with |total| >= "
      << kMinFractionTotal << ")\n";
  out << "Mean explained fraction: ";
  if (stats.mean) out << *stats.mean; else out << "n/a";
  out << "\nMax explained fraction:  ";
  if (stats.max) out << *stats.max; else out << "n/a";
  out << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// SVG

// The three levels of one bar. Without performance levels the bar is drawn
// on a disparity axis starting at 0.
struct BarLevels {
  double external = 0.0;
  double matched = 0.0;
  double reference = 0.0;

  // Matched level inside [external, reference] (in either orientation).
  bool ordered() const {
    const double lo = std::min(external, reference), hi = std::max(external, reference);
    const double eps = 1e-12;
    return matched >= lo - eps && matched <= hi + eps;
  }
};

inline BarLevels bar_levels(const DisparitySummary& s) {
  BarLevels b;
  if (s.external_level && s.reference_level) {
    b.external = *s.external_level;
    b.reference = *s.reference_level;
  } else {
    b.external = 0.0;
    b.reference = s.total;
  }
  b.matched = b.reference - s.unexplained;
  return b;
}

namespace detail {

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double v, int precision = 2) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

}  // namespace detail

// One horizontal bar per report: factor segments stack from the external
// level (negative contributions run leftward), then the unexplained segment
// reaches the within-site level. Inversions are appended to `notes`.
inline std::string render_svg(std::span<const DisparitySummary> summaries,
                              std::vector<std::string>* notes = nullptr) {
  static constexpr const char* kPalette[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759",
                                             "#76b7b2", "#edc948", "#b07aa1", "#ff9da7",
                                             "#9c755f", "#bab0ac"};
  std::vector<std::string> names;
  for (const auto& s : summaries) {
    for (const auto& [n, _] : s.phi) {
      if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
    }
  }
  auto color_of = [&](const std::string& n) {
    auto i = static_cast<std::size_t>(std::find(names.begin(), names.end(), n) - names.begin());
    return kPalette[i % std::size(kPalette)];
  };

  double lo = 0.0, hi = 0.0;
  bool first = true;
  auto extend = [&](double v) {
    if (first) { lo = hi = v; first = false; }
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  };
  std::vector<BarLevels> levels;
  for (const auto& s : summaries) {
    auto b = bar_levels(s);
    levels.push_back(b);
    extend(b.external);
    extend(b.reference);
    double x = b.external;
    for (const auto& [_, v] : s.phi) {
      x += v;
      extend(x);
    }
    extend(b.matched);
  }
  if (first || hi - lo < 1e-9) { lo -= 0.05; hi += 0.05; }
  const double pad = (hi - lo) * 0.08;
  lo -= pad;
  hi += pad;

  const double left = 170, width = 560, row_h = 46, top = 40;
  const double height = top + row_h * static_cast<double>(summaries.size()) + 40 +
                        18 * static_cast<double>((names.size() + 3) / 4);
  auto sx = [&](double v) { return left + (v - lo) / (hi - lo) * width; };

  std::ostringstream o;
  o << R"(<svg xmlns="http://www.w3.org/2000/svg" width=")" << left + width + 40 << R"(" height=")"
    << height << R"(" font-family="sans-serif" font-size="11">)" << '\n';
  o << R"svg(<defs><pattern id="hatch" width="6" height="6" patternUnits="userSpaceOnUse" patternTransform="rotate(45)"><line x1="0" y1="0" x2="0" y2="6" stroke="#888" stroke-width="2"/></pattern></defs>)svg"
    << '\n';
  o << R"(<text x=")" << left << R"(" y="20" font-size="13">Performance disparity decomposition</text>)"
    << '\n';

  for (std::size_t i = 0; i < summaries.size(); ++i) {
    const auto& s = summaries[i];
    const auto& b = levels[i];
    const double y = top + row_h * static_cast<double>(i);
    o << R"(<text x=")" << left - 8 << R"(" y=")" << y + 16 << R"(" text-anchor="end">)"
      << detail::xml_escape(s.label) << "</text>\n";
    double x = b.external;
    for (const auto& [name, v] : s.phi) {
      const double x0 = std::min(x, x + v), x1 = std::max(x, x + v);
      o << R"(<rect x=")" << sx(x0) << R"(" y=")" << y + 4 << R"(" width=")" << sx(x1) - sx(x0)
        << R"(" height="18" fill=")" << color_of(name) << '"'
        << (v < 0 ? R"( fill-opacity="0.45" stroke=")" + std::string(color_of(name)) + "\"" : "")
        << "><title>" << detail::xml_escape(name) << ": " << detail::num(v, 4)
        << "</title></rect>\n";
      x += v;
    }
    {
      const double x0 = std::min(b.matched, b.reference), x1 = std::max(b.matched, b.reference);
      o << R"(<rect x=")" << sx(x0) << R"(" y=")" << y + 4 << R"(" width=")" << sx(x1) - sx(x0)
        << R"svg(" height="18" fill="url(#hatch)" stroke="#888"><title>Unexplained: )svg"
        << detail::num(s.unexplained, 4) << "</title></rect>\n";
    }
    const std::pair<double, const char*> marks[] = {
        {b.external, "external"}, {b.matched, "matched"}, {b.reference, "within-site"}};
    for (const auto& [v, what] : marks) {
      o << R"(<line x1=")" << sx(v) << R"(" x2=")" << sx(v) << R"(" y1=")" << y + 1
        << R"(" y2=")" << y + 25 << R"(" stroke="#222"><title>)" << what << ": "
        << detail::num(v, 3) << "</title></line>\n";
    }
    o << R"(<text x=")" << sx(b.external) << R"(" y=")" << y + 37
      << R"(" text-anchor="middle" fill="#444">)" << detail::num(b.external, 3) << "</text>\n";
    o << R"(<text x=")" << sx(b.reference) << R"(" y=")" << y + 37
      << R"(" text-anchor="middle" fill="#444">)" << detail::num(b.reference, 3) << "</text>\n";
    if (notes && !b.ordered()) {
      notes->push_back(s.label + ": matched level " + detail::num(b.matched, 4) +
                       " lies outside [external, within-site] (inversion)");
    }
  }
  double ly = top + row_h * static_cast<double>(summaries.size()) + 10;
  for (std::size_t k = 0; k < names.size(); ++k) {
    const double lx = left + 140.0 * static_cast<double>(k % 4);
    const double yy = ly + 18.0 * static_cast<double>(k / 4);
    o << R"(<rect x=")" << lx << R"(" y=")" << yy << R"(" width="10" height="10" fill=")"
      << color_of(names[k]) << R"("/><text x=")" << lx + 14 << R"(" y=")" << yy + 9 << R"(">)"
      << detail::xml_escape(names[k]) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace confshap
