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

// Acceptance checks: one PASS/FAIL line per criterion. Exit status is
// nonzero when any criterion fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <string>
#include <thread>

#include "test_support.hpp"

namespace {

using namespace confshap;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Every report produced here, for the efficiency criterion.
std::vector<AttributionReport> g_reports;

AttributionReport keep(AttributionReport r) {
  g_reports.push_back(r);
  return r;
}

AttributionOptions options(std::uint64_t seed) {
  AttributionOptions o;
  o.seed = seed;
  o.bootstrap_replicates = 0;
  return o;
}

double prefix_value(const Matcher& m, const std::vector<std::string>& prefix,
                    std::uint64_t seed) {
  auto v = matched_performance(m, prefix, seed, auc_metric());
  if (!v.ok()) throw std::runtime_error("unsupported prefix in oracle walk");
  return *v.value;
}

Outcome oracle_equivalence() {
  const auto s = testing::bundled_scenario("correlated-pair");
  const auto pair = generate(s);
  const std::vector<std::string> names = s.observed_names();
  const std::uint64_t seed = 2024;
  auto o = options(seed);
  const auto exact = keep(exact_attribute(pair.reference, pair.external, names, o));

  // Scripted walk over the six orderings.
  Matcher m(pair.reference, pair.external, o.min_stratum);
  std::vector<std::size_t> order = {0, 1, 2};
  std::vector<double> sums(3, 0.0);
  int count = 0;
  do {
    std::vector<std::string> prefix;
    double previous = prefix_value(m, prefix, seed);
    for (std::size_t k : order) {
      prefix.push_back(names[k]);
      const double v = prefix_value(m, prefix, seed);
      sums[k] += v - previous;
      previous = v;
    }
    ++count;
  } while (std::next_permutation(order.begin(), order.end()));
  double oracle_gap = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    oracle_gap = std::max(oracle_gap, std::abs(exact.factor(names[k]).phi - sums[k] / count));
  }

  o.seeding = ResampleSeeding::per_prefix;
  o.stopping = {1e-4, 20000, 30};
  const auto mc = keep(attribute(pair.reference, pair.external, names, o));
  double worst = 0.0;  // |mc - exact| / se
  for (const auto& f : mc.factors) {
    const double gap = std::abs(f.phi - exact.factor(f.name).phi);
    worst = std::max(worst, f.se > 0 ? gap / f.se : (gap == 0 ? 0.0 : INFINITY));
  }
  Outcome out;
  out.pass = oracle_gap < 1e-9 && worst <= 3.0;
  out.detail = "K=3 n=2000: exact vs scripted 6-permutation walk max gap " +
               fmt("%.2e", oracle_gap) + " (< 1e-9); Monte Carlo (" +
               std::to_string(mc.sampled_permutations) + " permutations, " + mc.termination +
               ") vs exact max gap " + fmt("%.2f", worst) + " SE (<= 3)";
  return out;
}

template <typename Check>
Outcome seeded_runs(const std::string& scenario, Check check, const std::string& what) {
  const auto base = testing::bundled_scenario(scenario);
  int passes = 0;
  const int runs = 50;
  for (int k = 1; k <= runs; ++k) {
    auto s = base;
    s.seed = base.seed * 1000 + static_cast<std::uint64_t>(k);
    const auto pair = generate(s);
    const auto r = keep(attribute(pair.reference, pair.external, {}, options(s.seed)));
    passes += check(r) ? 1 : 0;
  }
  Outcome out;
  out.pass = passes >= 48;  // 95% of 50 runs, rounded up
  out.detail = what + " held in " + std::to_string(passes) + "/50 seeded runs (need >= 48)";
  return out;
}

Outcome null_property() {
  return seeded_runs(
      "null-factor",
      [](const AttributionReport& r) {
        const auto& f = r.factor("dummy");
        return std::abs(f.phi) < std::max(2.0 * f.se, 1e-3);
      },
      "null-factor: |phi_dummy| < max(2 se, 1e-3)");
}

Outcome symmetry() {
  std::vector<double> diffs;
  auto out = seeded_runs(
      "exchangeable-pair",
      [&diffs](const AttributionReport& r) {
        const auto& a = r.factor("a");
        const auto& b = r.factor("b");
        diffs.push_back(a.phi - b.phi);
        return std::abs(a.phi - b.phi) < 2.0 * (a.se + b.se);
      },
      "exchangeable-pair (n=5000/site): |phi_a - phi_b| < 2 (se_a + se_b)");
  const double n = static_cast<double>(diffs.size());
  const double mean = std::accumulate(diffs.begin(), diffs.end(), 0.0) / n;
  double ss = 0.0;
  for (double d : diffs) ss += (d - mean) * (d - mean);
  out.detail += "; phi_a - phi_b across runs: mean " + fmt("%.4f", mean) + ", sd " +
                fmt("%.4f", std::sqrt(ss / (n - 1)));
  return out;
}

Outcome ground_truth() {
  auto s = testing::bundled_scenario("single-confounder");
  s.reference_size = s.external_size = 50000;
  const auto gt = ground_truth_phi(s);
  const auto pair = generate(s);
  const auto r = keep(attribute(pair.reference, pair.external, {}, options(s.seed)));
  const auto& view = r.factor("view");
  const double tol = std::max(0.005, 3.0 * view.se);
  const double phi_err = std::abs(view.phi - gt.factor("view"));
  const double unexplained_err = std::abs(r.unexplained - 0.0);
  Outcome out;
  out.pass = phi_err < tol && unexplained_err < tol;
  out.detail = "single-confounder n=50000: D=" + fmt("%.4f", gt.total_disparity) +
               ", phi_view=" + fmt("%.4f", view.phi) + " vs truth " +
               fmt("%.4f", gt.factor("view")) + " (err " + fmt("%.4f", phi_err) +
               "), unexplained " + fmt("%.4f", r.unexplained) + "; tolerance " +
               fmt("%.4f", tol);
  return out;
}

Outcome metric_oracle() {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> size(2, 50), grid(0, 15), weight(0, 5);
  int mismatches = 0, replication_mismatches = 0;
  for (int d = 0; d < 1000; ++d) {
    const int n = size(rng);
    std::vector<double> s(n), w(n);
    std::vector<std::uint8_t> l(n);
    for (int i = 0; i < n; ++i) {
      s[i] = d % 2 ? grid(rng) / 15.0 : std::generate_canonical<double, 53>(rng);
      l[i] = static_cast<std::uint8_t>(rng() & 1);
      w[i] = weight(rng);
    }
    l[0] = 1;
    l[1] = 0;
    w[0] = w[1] = 1;
    if (auc(WeightedSample{s, l, {}, {}}) != testing::pair_count_auc(s, l)) ++mismatches;
    std::vector<double> rs;
    std::vector<std::uint8_t> rl;
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < static_cast<int>(w[i]); ++k) {
        rs.push_back(s[i]);
        rl.push_back(l[i]);
      }
    }
    if (auc(WeightedSample{s, l, w, {}}) != auc(WeightedSample{rs, rl, {}, {}})) {
      ++replication_mismatches;
    }
  }
  Outcome out;
  out.pass = mismatches == 0 && replication_mismatches == 0;
  out.detail = "1000 random datasets (n <= 50): " + std::to_string(mismatches) +
               " pair-count mismatches, " + std::to_string(replication_mismatches) +
               " weight/replication mismatches (exact equality)";
  return out;
}

Outcome stopping_rule() {
  Outcome out{true, ""};
  int tolerance_stops = 0;
  for (const char* name : {"correlated-pair", "six-factor-clinical", "single-confounder"}) {
    const auto s = testing::bundled_scenario(name);
    const auto pair = generate(s);
    const auto r = keep(attribute(pair.reference, pair.external, {}, options(s.seed)));
    double max_se = 0.0;
    for (const auto& f : r.factors) max_se = std::max(max_se, f.se);
    if (r.termination == "tolerance") {
      ++tolerance_stops;
      out.pass = out.pass && max_se < 0.005;
    }
    out.detail += std::string(out.detail.empty() ? "" : "; ") + name + ": " + r.termination +
                  " after " + std::to_string(r.sampled_permutations) + ", max se " +
                  fmt("%.4f", max_se);
  }
  out.pass = out.pass && tolerance_stops > 0;
  out.detail += " (se < 0.005 required on early stops)";
  return out;
}

int run_cli(const std::string& args, std::string& output) {
  const std::string cmd = std::string(CONFSHAP_CLI) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return -1;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) output.append(buf, n);
  const int status = pclose(p);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

double parse_after(const std::string& text, const std::string& key) {
  const auto pos = text.find(key);
  if (pos == std::string::npos) return NAN;
  return std::strtod(text.c_str() + pos + key.size(), nullptr);
}

Outcome fixture_arithmetic() {
  std::string args = "report";
  for (const char* n : {"nih-on-shc", "nih-on-bid", "shc-on-nih", "shc-on-bid", "bid-on-nih",
                        "bid-on-shc"}) {
    args += " " + (fs::path(CONFSHAP_FIXTURE_DIR) / (std::string(n) + ".json")).string();
  }
  std::string output;
  const int code = run_cli(args, output);
  const double mean = parse_after(output, "Mean explained fraction:");
  const double max = parse_after(output, "Max explained fraction:");
  Outcome out;
  out.pass = code == 0 && std::abs(mean - 0.273) <= 0.005 && std::abs(max - 0.599) <= 0.005;
  out.detail = "confshap report over six fixtures: mean " + fmt("%.3f", mean) +
               " (0.273 +- 0.005), max " + fmt("%.3f", max) + " (0.599 +- 0.005)";
  return out;
}

Outcome determinism() {
  const auto s = testing::bundled_scenario("six-factor-clinical");
  const auto pair = generate(s);
  AttributionOptions o;
  o.seed = s.seed;
  o.threads = 1;
  const auto one = keep(attribute(pair.reference, pair.external, {}, o));
  const unsigned many = std::max(4u, std::thread::hardware_concurrency());
  o.threads = many;
  const auto other = keep(attribute(pair.reference, pair.external, {}, o));
  const auto a = to_json(one), b = to_json(other);
  // The echoed thread count is the only field allowed to differ.
  auto strip = [](nlohmann::json j) {
    j["config"].erase("threads");
    return j.dump();
  };
  Outcome out;
  out.pass = strip(a) == strip(b);
  out.detail = "six-factor-clinical, 1 vs " + std::to_string(many) +
               " threads: reports " + (out.pass ? "bit-identical" : "DIFFER");
  return out;
}

Outcome performance() {
  auto s = testing::bundled_scenario("six-factor-clinical");
  s.reference_size = s.external_size = 20000;
  const auto pair = generate(s);
  AttributionOptions o;
  o.seed = s.seed;
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = keep(attribute(pair.reference, pair.external, {}, o));
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Outcome out;
  out.pass = r.factors.size() == 6 && secs < 600.0;
  out.detail = std::to_string(r.factors.size()) + " factors x 20000 records/site, default " +
               "stopping (" + r.termination + " after " +
               std::to_string(r.sampled_permutations) + "): " + fmt("%.2f", secs) + " s on " +
               std::to_string(resolve_threads(0)) + " hardware thread(s) (< 600 s)";
  return out;
}

Outcome efficiency() {
  double worst = 0.0;
  for (const auto& r : g_reports) worst = std::max(worst, testing::efficiency_residual(r));
  Outcome out;
  out.pass = !g_reports.empty() && worst < 1e-9;
  out.detail = "max |explained + unexplained - total| = " + fmt("%.3e", worst) + " over " +
               std::to_string(g_reports.size()) + " attribution runs (< 1e-9)";
  return out;
}

}  // namespace

int main() {
  const std::pair<int, const char*> names[] = {
      {1, "efficiency"},    {2, "oracle equivalence"}, {3, "null property"},
      {4, "symmetry"},      {5, "ground-truth recovery"}, {6, "metric oracle"},
      {7, "stopping rule"}, {8, "fixture arithmetic"}, {9, "determinism"},
      {10, "performance"}};
  std::vector<std::function<Outcome()>> checks = {
      nullptr,        oracle_equivalence, null_property, symmetry,  ground_truth,
      metric_oracle,  stopping_rule,      fixture_arithmetic, determinism, performance};
  std::vector<Outcome> results(11);
  auto guarded = [](const std::function<Outcome()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      return Outcome{false, std::string("exception: ") + e.what()};
    }
  };
  for (int k = 2; k <= 10; ++k) results[k] = guarded(checks[k - 1]);
  results[1] = guarded(efficiency);  // runs last: it audits every report above

  int failures = 0;
  for (const auto& [k, name] : names) {
    const auto& r = results[k];
    failures += r.pass ? 0 : 1;
    std::printf("%s %2d %-22s %s\n", r.pass ? "PASS" : "FAIL", k, name, r.detail.c_str());
  }
  std::printf("%d/10 acceptance criteria passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}
