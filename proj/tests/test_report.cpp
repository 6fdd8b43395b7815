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

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "test_support.hpp"

namespace confshap {
namespace {

std::vector<DisparitySummary> site_pair_fixtures() {
  std::vector<DisparitySummary> out;
  for (const char* name : {"nih-on-shc", "nih-on-bid", "shc-on-nih", "shc-on-bid", "bid-on-nih",
                           "bid-on-shc"}) {
    out.push_back(load_summary(std::filesystem::path(CONFSHAP_FIXTURE_DIR) /
                               (std::string(name) + ".json")));
  }
  return out;
}

TEST(Fractions, SitePairFixtures) {
  const auto rows = site_pair_fixtures();
  const auto st = fraction_stats(rows);
  // (total - unexplained) / total per row, rounded to three places by hand.
  const double expected[] = {0.304, 0.599, 0.356, 0.031, 0.333, 0.017};
  ASSERT_EQ(st.fractions.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    ASSERT_TRUE(st.fractions[i].has_value());
    EXPECT_NEAR(*st.fractions[i], expected[i], 5e-4) << rows[i].label;
  }
  EXPECT_NEAR(*st.mean, 0.273, 5e-4);
  EXPECT_NEAR(*st.max, 0.599, 5e-4);
  EXPECT_EQ(rows[0].label, "NIH on SHC");
  EXPECT_EQ(*rows[0].external_level, 0.749);
}

DisparitySummary summary(std::vector<double> phi, double unexplained, double total) {
  DisparitySummary s;
  s.label = "R on E";
  double sum = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    s.phi.emplace_back("f" + std::to_string(i), phi[i]);
    sum += phi[i];
  }
  s.explained = sum;
  s.unexplained = unexplained;
  s.total = total;
  return s;
}

TEST(Fractions, Extremes) {
  EXPECT_EQ(*summary({0.0, 0.0}, 0.1, 0.1).explained_fraction(), 0.0);
  EXPECT_EQ(*summary({0.06, 0.04}, 0.0, 0.1).explained_fraction(), 1.0);
  EXPECT_FALSE(summary({0.0005}, 0.0, 0.0005).explained_fraction().has_value());
  std::vector<DisparitySummary> one = {summary({0.0005}, 0.0, 0.0005)};
  EXPECT_NE(render_table(one).find("n/a"), std::string::npos);
}

TEST(Bars, UnexplainedEqualsTotalShowsNoLift) {
  auto s = summary({0.0, 0.0}, 0.1, 0.1);
  s.external_level = 0.8;
  s.reference_level = 0.9;
  auto b = bar_levels(s);
  EXPECT_DOUBLE_EQ(b.matched, b.external);
  EXPECT_TRUE(b.ordered());
}

class BarGeometry : public ::testing::TestWithParam<int> {};

TEST_P(BarGeometry, MatchedBetweenOrNoted) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(GetParam()));
  std::uniform_real_distribution<double> u(-0.05, 0.1);
  std::vector<double> phi(5);
  for (auto& p : phi) p = u(rng);
  const double total = u(rng) + 0.05;
  double explained = 0.0;
  for (double p : phi) explained += p;
  auto s = summary(phi, total - explained, total);
  s.external_level = 0.8;
  s.reference_level = 0.8 + total;
  std::vector<std::string> notes;
  std::vector<DisparitySummary> one = {s};
  const std::string svg = render_svg(one, &notes);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  const bool same_sign = std::all_of(phi.begin(), phi.end(),
                                     [&](double p) { return p * total >= 0.0; });
  if (same_sign && std::abs(explained) <= std::abs(total)) {
    EXPECT_TRUE(bar_levels(s).ordered());
    EXPECT_TRUE(notes.empty());
  }
  EXPECT_EQ(bar_levels(s).ordered(), notes.empty());
}

INSTANTIATE_TEST_SUITE_P(Random, BarGeometry, ::testing::Range(1, 101));

TEST(Svg, NegativeContributionsDrawnLeftward) {
  auto s = summary({0.05, -0.02}, 0.07, 0.1);
  s.external_level = 0.8;
  s.reference_level = 0.9;
  std::vector<DisparitySummary> one = {s};
  const std::string svg = render_svg(one);
  EXPECT_NE(svg.find("f1"), std::string::npos);
  EXPECT_NE(svg.find("-0.020"), std::string::npos);
}

AttributionReport sample_report() {
  auto pair = generate(testing::bundled_scenario("correlated-pair"));
  AttributionOptions o;
  o.seed = 77;
  o.bootstrap_replicates = 100;
  return attribute(pair.reference, pair.external, {}, o);
}

TEST(ReportJson, RoundTrip) {
  const auto r = sample_report();
  const auto j = to_json(r);
  EXPECT_EQ(j.at("schema"), kReportSchema);
  EXPECT_EQ(j.at("seed"), 77u);
  EXPECT_TRUE(j.at("config").contains("seed"));
  const auto back = report_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(to_json(back).dump(), j.dump());
  EXPECT_THROW(report_from_json(nlohmann::json{{"schema", "other/9"}}), DataError);
  EXPECT_THROW(summary_from_json(nlohmann::json{{"factors", 3}}), DataError);
}

TEST(ReportCsv, ReparsedRowsAreAdditive) {
  const auto r = sample_report();
  std::ostringstream out;
  write_csv_summary(r, out);
  auto t = testing::csv_table(out.str());
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.columns.front(), "evaluation");
  EXPECT_EQ(t.columns[t.columns.size() - 2], "Unexplained");
  EXPECT_EQ(t.columns.back(), "Total");
  double sum = 0.0;
  for (std::size_t c = 1; c + 1 < t.columns.size(); ++c) sum += std::stod(*t.rows[0][c]);
  EXPECT_NEAR(sum, std::stod(*t.rows[0].back()), 1e-6);
}

TEST(Config, SeedRequired) {
  nlohmann::json j = {{"reference", {{"path", "a.csv"}}},
                      {"external", {{"path", "b.csv"}}},
                      {"factors", {{{"name", "sex"}}}}};
  auto c = parse_run_config(j, "/tmp");
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_STREQ(e.what(), "seed is required");
  }
  j["seed"] = 3;
  EXPECT_NO_THROW(parse_run_config(j, "/tmp").validate());
}

TEST(Config, ErrorsNameTheField) {
  nlohmann::json base = {{"reference", {{"path", "a.csv"}}},
                         {"external", {{"path", "b.csv"}}},
                         {"seed", 1},
                         {"factors", {{{"name", "age"}, {"kind", "continuous"}}}}};
  auto expect_error = [](nlohmann::json j, const std::string& needle) {
    try {
      parse_run_config(j, "/tmp").validate();
      ADD_FAILURE() << "no error for " << needle;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  auto j = base;
  j["factors"][0]["bins"] = 1;
  expect_error(j, "factors[0].bins");
  j = base;
  j.erase("reference");
  expect_error(j, "reference");
  j = base;
  j["stopping"] = {{"tolerance", "x"}};
  expect_error(j, "stopping.tolerance");
  j = base;
  j["factors"][0]["kind"] = "ordinal";
  expect_error(j, "ordinal");
  j = base;
  j["output"] = {{"formats", {"pdf"}}};
  expect_error(j, "pdf");
  j = base;
  j["factors"] = {{{"name", "g"}, {"kind", "group"}, {"members", {"a", "b"}}, {"columns", {"x"}}}};
  expect_error(j, "factors[0].columns");
}

TEST(Config, ResolvesPathsAndRoundTrips) {
  nlohmann::json j = {{"reference", {{"path", "ref.csv"}, {"site", "NIH"}}},
                      {"external", {{"path", "/abs/ext.csv"}, {"site", "SHC"}}},
                      {"seed", 12},
                      {"stopping", {{"tolerance", 0.004}, {"max_iterations", 300}}},
                      {"factors",
                       {{{"name", "age"}, {"kind", "continuous"}, {"bins", 4}},
                        {{"name", "com"}, {"kind", "group"}, {"members", {"a", "b"}}}}},
                      {"output", {{"dir", "out"}, {"formats", {"all"}}}}};
  auto c = parse_run_config(j, "/data/run");
  EXPECT_EQ(c.reference.path, std::filesystem::path("/data/run/ref.csv"));
  EXPECT_EQ(c.external.path, std::filesystem::path("/abs/ext.csv"));
  EXPECT_EQ(c.output.dir, std::filesystem::path("/data/run/out"));
  EXPECT_TRUE(c.output.svg);
  EXPECT_EQ(c.attribution.stopping.max_iterations, 300u);
  EXPECT_EQ(c.factors[0].bins, 4u);
  auto again = parse_run_config(to_json(c), "/elsewhere");
  EXPECT_EQ(to_json(again).dump(), to_json(c).dump());
}

TEST(Config, PrepareDatasetsBinsOnReference) {
  auto dir = testing::scratch_dir("prepare");
  testing::write_file(dir / "ref.csv",
                      "score,label,age,view\n0.9,1,20,PA\n0.8,1,30,AP\n0.3,0,40,PA\n0.1,0,50,AP\n");
  testing::write_file(dir / "ext.csv",
                      "score,label,age,view\n0.9,1,70,LL\n0.2,0,10,PA\n0.5,0,36,AP\n");
  nlohmann::json j = {{"reference", {{"path", "ref.csv"}}},
                      {"external", {{"path", "ext.csv"}}},
                      {"seed", 1},
                      {"factors",
                       {{{"name", "age"}, {"kind", "continuous"}, {"bins", 2}},
                        {{"name", "view"}}}}};
  auto data = prepare_datasets(parse_run_config(j, dir));
  EXPECT_EQ(data.reference.spec("age").bin_edges, std::vector<double>{35.0});
  EXPECT_EQ(data.reference.specs(), data.external.specs());
  EXPECT_EQ(data.external.spec("view").vocabulary, (std::vector<std::string>{"AP", "LL", "PA"}));
}

}  // namespace
}  // namespace confshap
