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
#include <numeric>
#include <random>
#include <sstream>

#include "test_support.hpp"

namespace confshap {
namespace {

using testing::csv_table;

TEST(Ingest, FourRowCsv) {
  auto r = ingest(std::filesystem::path(CONFSHAP_TEST_DATA_DIR) / "four_rows.csv", "A",
                  ColumnMapping{}, {FactorSpec::categorical("sex")}, MissingPolicy::drop_row);
  EXPECT_EQ(r.dataset.size(), 4u);
  EXPECT_EQ(r.rows_rejected, 0u);
  const auto& spec = r.dataset.spec("sex");
  EXPECT_EQ(spec.kind, FactorKind::categorical);
  EXPECT_EQ(spec.vocabulary, (std::vector<std::string>{"F", "M"}));
  EXPECT_EQ(r.dataset.records()[0].score, 0.9);
  EXPECT_EQ(r.dataset.records()[3].factors.at("sex").category(), "F");
}

TEST(Ingest, RejectsOutOfRangeScoreWithRowNumber) {
  auto t = csv_table("score,label\n0.9,1\n1.2,1\n0.1,0\n");
  auto r = ingest(t, "A", ColumnMapping{}, {}, MissingPolicy::drop_row);
  EXPECT_EQ(r.dataset.size(), 2u);
  EXPECT_EQ(r.rows_rejected, 1u);
  ASSERT_EQ(r.diagnostics.size(), 1u);
  EXPECT_EQ(r.diagnostics[0], "score out of [0,1] at row 2");
}

TEST(Ingest, RejectsBadLabelAndNonFiniteScore) {
  auto t = csv_table("score,label\n0.9,1\nnan,1\n0.5,2\n0.1,0\n");
  auto r = ingest(t, "A", ColumnMapping{}, {}, MissingPolicy::drop_row);
  ASSERT_EQ(r.diagnostics.size(), 2u);
  EXPECT_EQ(r.diagnostics[0], "score out of [0,1] at row 2");
  EXPECT_EQ(r.diagnostics[1], "label not in {0,1} at row 3");
}

TEST(Ingest, GroupFlagsFromBinaryColumns) {
  auto t = csv_table(
      "score,label,atelectasis,cardiomegaly\n"
      "0.9,1,1,0\n0.8,1,0,0\n0.3,0,1,1\n0.1,0,0,1\n");
  ColumnMapping m;
  m.factor_columns["comorbidities"] = {"atelectasis", "cardiomegaly"};
  auto r = ingest(t, "A", m, {FactorSpec::group("comorbidities", {"atelectasis", "cardiomegaly"})},
                  MissingPolicy::drop_row);
  // Expected flag sets written out by hand from the table above.
  const std::vector<std::set<std::string>> expected = {
      {"atelectasis"}, {}, {"atelectasis", "cardiomegaly"}, {"cardiomegaly"}};
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_EQ(r.dataset.records()[i].factors.at("comorbidities").flags(), expected[i]) << i;
  }
}

TEST(Ingest, Errors) {
  EXPECT_THROW(ingest(std::filesystem::path("/nonexistent/file.csv"), "A", ColumnMapping{}, {},
                      MissingPolicy::drop_row),
               DataError);
  try {
    ingest(csv_table("score,label\n0.2,1\n0.1,0\n"), "A", ColumnMapping{},
           {FactorSpec::categorical("age")}, MissingPolicy::drop_row);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_STREQ(e.what(), "unknown column 'age'");
  }
  EXPECT_THROW(ingest(csv_table("score,label\n2,1\n3,0\n"), "A", ColumnMapping{}, {},
                      MissingPolicy::drop_row),
               DataError);
  EXPECT_THROW(ingest(csv_table("score,label\n0.2,1\n0.3,1\n"), "A", ColumnMapping{}, {},
                      MissingPolicy::drop_row),
               DataError);
}

TEST(Ingest, MissingPolicies) {
  const std::string text = "score,label,sex\n0.9,1,M\n0.8,1,\n0.3,0,NA\n0.1,0,F\n";
  auto dropped = ingest(csv_table(text), "A", ColumnMapping{}, {FactorSpec::categorical("sex")},
                        MissingPolicy::drop_row);
  EXPECT_EQ(dropped.dataset.size(), 2u);
  auto own = ingest(csv_table(text), "A", ColumnMapping{}, {FactorSpec::categorical("sex")},
                    MissingPolicy::own_category);
  EXPECT_EQ(own.dataset.size(), 4u);
  EXPECT_EQ(own.dataset.records()[1].factors.at("sex").category(), kMissingToken);
  EXPECT_TRUE(own.dataset.spec("sex").category_code(kMissingToken).has_value());
}

TEST(Ingest, JsonLines) {
  std::istringstream in(
      "{\"score\": 0.9, \"label\": 1, \"view\": \"PA\"}\n"
      "{\"score\": 0.2, \"label\": 0, \"view\": \"AP\"}\n");
  auto r = ingest(parse_jsonl(in), "A", ColumnMapping{}, {FactorSpec::categorical("view")},
                  MissingPolicy::drop_row);
  EXPECT_EQ(r.dataset.size(), 2u);
  EXPECT_EQ(r.dataset.records()[0].factors.at("view").category(), "PA");
}

TEST(Csv, QuotedFields) {
  auto t = csv_table("a,b\n\"x,1\",\"say \"\"hi\"\"\"\r\n");
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(*t.rows[0][0], "x,1");
  EXPECT_EQ(*t.rows[0][1], "say \"hi\"");
}

TEST(Binning, MedianSplit) {
  const std::vector<double> ages = {20, 30, 40, 50};
  auto spec = bin_continuous(ages, "age", 2);
  ASSERT_EQ(spec.bin_edges, std::vector<double>{35.0});
  EXPECT_EQ(spec.bin_of(34), 0u);
  EXPECT_EQ(spec.bin_of(36), 1u);
}

TEST(Binning, DegenerateWarns) {
  const std::vector<double> ages(10, 42.0);
  std::vector<std::string> warnings;
  auto spec = bin_continuous(ages, "age", 4, &warnings);
  EXPECT_EQ(spec.bin_count(), 1u);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Binning, BinCountBelowTwo) {
  const std::vector<double> v = {1, 2, 3};
  EXPECT_THROW(bin_continuous(v, "x", 1), ConfigError);
}

TEST(Binning, EqualFrequencyOnUniformSample) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(1000);
  for (auto& v : x) v = u(rng);
  auto spec = bin_continuous(x, "u", 10);
  ASSERT_EQ(spec.bin_count(), 10u);
  std::vector<int> counts(10, 0);
  for (double v : x) ++counts[spec.bin_of(v)];
  for (int c : counts) EXPECT_EQ(c, 100);
}

TEST(Binning, ReferenceAnchoredEdgesApplyToBothSites) {
  RawTable ref = csv_table("score,label,age\n0.9,1,20\n0.8,1,30\n0.3,0,40\n0.1,0,50\n");
  RawTable ext = csv_table("score,label,age\n0.9,1,70\n0.2,0,10\n");
  auto spec = bin_continuous(ref, "age", "age", 2);
  auto a = ingest(ref, "R", ColumnMapping{}, {spec}, MissingPolicy::drop_row);
  auto b = ingest(ext, "E", ColumnMapping{}, {spec}, MissingPolicy::drop_row);
  EXPECT_EQ(a.dataset.spec("age").bin_edges, b.dataset.spec("age").bin_edges);
  EXPECT_EQ(b.dataset.records()[0].factors.at("age").bin(), 1u);
  EXPECT_EQ(b.dataset.records()[1].factors.at("age").bin(), 0u);
}

std::vector<ScoredRecord> race_records(int black, int white) {
  std::vector<ScoredRecord> out;
  for (int i = 0; i < black + white; ++i) {
    ScoredRecord r;
    r.score = (i % 10) / 10.0;
    r.label = i % 2;
    r.factors.emplace("race", FactorValue::category(i < black ? "Black" : "White"));
    out.push_back(r);
  }
  return out;
}

TEST(Marginal, SixtyForty) {
  ScoredDataset d("A", {FactorSpec::categorical("race", {"Black", "White"})}, race_records(60, 40));
  auto m = marginal(d, "race");
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].value, "Black");
  EXPECT_DOUBLE_EQ(m[0].proportion, 0.6);
  EXPECT_DOUBLE_EQ(m[1].proportion, 0.4);
  EXPECT_THROW(marginal(d, "age"), ConfigError);
}

TEST(Marginal, SingleValueAndGroup) {
  ScoredDataset d("A", {FactorSpec::categorical("race", {"Black", "White"})}, race_records(10, 0));
  auto m = marginal(d, "race");
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].proportion, 1.0);

  std::vector<ScoredRecord> recs;
  for (int i = 0; i < 10; ++i) {
    ScoredRecord r;
    r.score = i / 10.0;
    r.label = i % 2;
    std::set<std::string> flags;
    if (i < 3) flags.insert("atelectasis");
    r.factors.emplace("comorbidities", FactorValue::flags(flags));
    recs.push_back(r);
  }
  ScoredDataset g("A", {FactorSpec::group("comorbidities", {"atelectasis", "cardiomegaly"})}, recs);
  auto gm = marginal(g, "comorbidities");
  ASSERT_EQ(gm.size(), 2u);
  EXPECT_DOUBLE_EQ(gm[0].proportion, 0.3);
  EXPECT_DOUBLE_EQ(gm[1].proportion, 0.0);
}

TEST(Marginal, ProportionsSumToOne) {
  for (const char* name : {"six-factor-clinical", "correlated-pair"}) {
    auto pair = generate(testing::bundled_scenario(name));
    for (const auto* d : {&pair.reference, &pair.external}) {
      for (const auto& spec : d->specs()) {
        if (spec.kind == FactorKind::group) continue;
        double sum = 0.0;
        for (const auto& e : marginal(*d, spec.name)) sum += e.proportion;
        EXPECT_NEAR(sum, 1.0, 1e-12) << name << " " << spec.name;
      }
    }
  }
}

TEST(Dataset, ValidationRejectsInvalidRecords) {
  auto spec = FactorSpec::categorical("sex", {"F", "M"});
  auto rec = [](double s, int l, std::string sex) {
    ScoredRecord r;
    r.score = s;
    r.label = l;
    r.factors.emplace("sex", FactorValue::category(std::move(sex)));
    return r;
  };
  EXPECT_THROW(ScoredDataset("A", {spec}, {rec(1.5, 1, "F"), rec(0.1, 0, "M")}), DataError);
  EXPECT_THROW(ScoredDataset("A", {spec}, {rec(0.5, 1, "X"), rec(0.1, 0, "M")}), DataError);
  EXPECT_THROW(ScoredDataset("A", {spec}, {rec(0.5, 1, "F"), rec(0.1, 1, "M")}), DataError);
  EXPECT_THROW(ScoredDataset("A", {spec, spec}, {rec(0.5, 1, "F"), rec(0.1, 0, "M")}),
               ConfigError);
  EXPECT_THROW(FactorSpec::binned("x", {2.0, 1.0}).validate(), ConfigError);
}

TEST(Dataset, CanonicalCsvRoundTripIsExact) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<FactorSpec> specs = {FactorSpec::categorical("sex", {"F", "M", "a,b"}),
                                   FactorSpec::binned("age", {30.5, 50.0, 70.25}),
                                   FactorSpec::group("com", {"atel", "card"})};
  std::vector<ScoredRecord> recs;
  for (int i = 0; i < 200; ++i) {
    ScoredRecord r;
    r.score = u(rng);
    r.label = i % 3 == 0;
    r.factors.emplace("sex", FactorValue::category(specs[0].vocabulary[i % 3]));
    r.factors.emplace("age", FactorValue::bin(static_cast<std::size_t>(i % 4)));
    std::set<std::string> f;
    if (i % 5 == 0) f.insert("atel");
    if (i % 7 == 0) f.insert("card");
    r.factors.emplace("com", FactorValue::flags(f));
    recs.push_back(std::move(r));
  }
  ScoredDataset d("A", specs, recs);
  std::ostringstream out;
  write_csv(d, out);
  auto back = ingest(csv_table(out.str()), "A", canonical_mapping(d.specs()), d.specs(),
                     MissingPolicy::drop_row);
  EXPECT_EQ(back.dataset.records(), d.records());
}

}  // namespace
}  // namespace confshap
