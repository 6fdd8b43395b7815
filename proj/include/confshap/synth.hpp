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

// Synthetic two-site scenarios with closed-form ground truth.
//
// Factors are categorical variables or groups of binary flags. Each site
// draws the joint factor state from a product of per-factor distributions,
// optionally tilted by exp(tilt * [code_a == code_b]) for declared atom
// pairs. Given the state, the label is Bernoulli(prevalence) and the score
// follows a uniform or normal law, all set by a shared per-stratum score
// model. The joint state space is enumerated exactly, so population AUCs,
// sequentially matched populations and Shapley values are computed without
// sampling.
//
// Scores are emitted as drawn when every declared law lives inside [0,1];
// otherwise all scores pass through the logistic function, which leaves
// every pairwise comparison (hence every AUC) unchanged.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "confshap/dataset.hpp"
#include "confshap/error.hpp"
#include "confshap/random.hpp"

namespace confshap {

enum class ScoreFamily { uniform, normal };

struct ScoreDistribution {
  ScoreFamily family = ScoreFamily::uniform;
  double a = 0.0;  // uniform: low;  normal: mean
  double b = 1.0;  // uniform: high; normal: standard deviation

  static ScoreDistribution uniform(double low, double high) {
    return {ScoreFamily::uniform, low, high};
  }
  static ScoreDistribution normal(double mean, double sd) {
    return {ScoreFamily::normal, mean, sd};
  }

  void validate() const {
    if (!std::isfinite(a) || !std::isfinite(b)) {
      throw ConfigError("score distribution parameters must be finite");
    }
    if (family == ScoreFamily::uniform && !(a < b)) {
      throw ConfigError("uniform score law needs low < high");
    }
    if (family == ScoreFamily::normal && !(b > 0.0)) {
      throw ConfigError("normal score law needs sd > 0");
    }
  }

  bool within_unit_interval() const {
    return family == ScoreFamily::uniform && a >= 0.0 && b <= 1.0;
  }

  double sample(RandomStream& rng) const {
    if (family == ScoreFamily::uniform) return a + (b - a) * rng.uniform01();
    std::normal_distribution<double> normal(a, b);
    return normal(rng);
  }

  bool operator==(const ScoreDistribution&) const = default;
};

namespace detail {

inline double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double std_normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846);
}

// P(X > Y) for X ~ U(a, b), Y ~ U(c, d).
inline double uniform_vs_uniform(double a, double b, double c, double d) {
  auto integral_cdf = [&](double x) {  // \int_{-inf}^{x} F_Y
    if (x <= c) return 0.0;
    if (x < d) return (x - c) * (x - c) / (2.0 * (d - c));
    return (d - c) / 2.0 + (x - d);
  };
  return (integral_cdf(b) - integral_cdf(a)) / (b - a);
}

// P(X > Y) for X ~ U(a, b), Y ~ N(mu, sigma).
inline double uniform_vs_normal(double a, double b, double mu, double sigma) {
  auto h = [](double z) { return z * std_normal_cdf(z) + std_normal_pdf(z); };
  return sigma / (b - a) * (h((b - mu) / sigma) - h((a - mu) / sigma));
}

}  // namespace detail

// P(X > Y) for independent X, Y.
inline double prob_greater(const ScoreDistribution& x, const ScoreDistribution& y) {
  using detail::std_normal_cdf;
  if (x.family == ScoreFamily::normal && y.family == ScoreFamily::normal) {
    return std_normal_cdf((x.a - y.a) / std::sqrt(x.b * x.b + y.b * y.b));
  }
  if (x.family == ScoreFamily::uniform && y.family == ScoreFamily::uniform) {
    return detail::uniform_vs_uniform(x.a, x.b, y.a, y.b);
  }
  if (x.family == ScoreFamily::uniform) return detail::uniform_vs_normal(x.a, x.b, y.a, y.b);
  return 1.0 - detail::uniform_vs_normal(y.a, y.b, x.a, x.b);
}

struct StratumScoreModel {
  double prevalence = 0.5;
  ScoreDistribution positive = ScoreDistribution::uniform(0.5, 1.0);
  ScoreDistribution negative = ScoreDistribution::uniform(0.0, 0.5);

  bool operator==(const StratumScoreModel&) const = default;
};

// Overrides applied to every joint stratum matching all `when` conditions
// (atom name -> level token; "0"/"1" for group members). Later rules win.
struct ScoreRule {
  std::map<std::string, std::string> when;
  std::optional<double> prevalence;
  std::optional<ScoreDistribution> positive;
  std::optional<ScoreDistribution> negative;
};

struct SynthFactor {
  std::string name;
  FactorKind kind = FactorKind::categorical;
  // Categorical: the vocabulary, with `reference`/`external` its per-site
  // probabilities. Group: the member flags, with per-site Bernoulli rates.
  std::vector<std::string> levels;
  std::vector<double> reference;
  std::vector<double> external;
  // Unobserved factors shape the data but are not emitted; they account for
  // disparity no measured factor can explain.
  bool observed = true;
};

struct Dependence {
  std::string first;
  std::string second;
  double tilt = 0.0;
};

enum class Site { reference, external };

struct SynthScenario {
  std::string name;
  std::vector<SynthFactor> factors;
  std::vector<Dependence> dependencies;
  StratumScoreModel base;
  std::vector<ScoreRule> rules;
  std::string reference_site = "reference";
  std::string external_site = "external";
  std::size_t reference_size = 2000;
  std::size_t external_size = 2000;
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<FactorSpec> observed_specs() const;
  std::vector<std::string> observed_names() const;
};

// ---------------------------------------------------------------------------
// JSON form

namespace detail {

inline ScoreDistribution score_law_from_json(const nlohmann::json& j, const std::string& where) {
  try {
    const std::string family = j.at("family").get<std::string>();
    ScoreDistribution d;
    if (family == "uniform") {
      d = ScoreDistribution::uniform(j.at("low").get<double>(), j.at("high").get<double>());
    } else if (family == "normal") {
      d = ScoreDistribution::normal(j.at("mean").get<double>(), j.at("sd").get<double>());
    } else {
      throw ConfigError(where + ": unsupported score family '" + family + "'");
    }
    d.validate();
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline nlohmann::json score_law_to_json(const ScoreDistribution& d) {
  if (d.family == ScoreFamily::uniform) {
    return {{"family", "uniform"}, {"low", d.a}, {"high", d.b}};
  }
  return {{"family", "normal"}, {"mean", d.a}, {"sd", d.b}};
}

}  // namespace detail

inline SynthScenario scenario_from_json(const nlohmann::json& j) {
  SynthScenario s;
  try {
    s.name = j.value("name", "scenario");
    if (!j.contains("seed")) throw ConfigError("scenario: seed is required");
    s.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("sites")) {
      const auto& sites = j.at("sites");
      if (sites.contains("reference")) {
        s.reference_site = sites["reference"].value("name", s.reference_site);
        s.reference_size = sites["reference"].value("size", s.reference_size);
      }
      if (sites.contains("external")) {
        s.external_site = sites["external"].value("name", s.external_site);
        s.external_size = sites["external"].value("size", s.external_size);
      }
    }
    for (const auto& fj : j.at("factors")) {
      SynthFactor f;
      f.name = fj.at("name").get<std::string>();
      f.kind = parse_factor_kind(fj.value("kind", "categorical"));
      if (f.kind == FactorKind::continuous_binned) {
        throw ConfigError("scenario factor '" + f.name +
                          "': only categorical and group factors are supported");
      }
      f.levels = fj.at(f.kind == FactorKind::group ? "members" : "levels")
                     .get<std::vector<std::string>>();
      f.reference = fj.at("reference").get<std::vector<double>>();
      f.external = fj.at("external").get<std::vector<double>>();
      f.observed = fj.value("observed", true);
      s.factors.push_back(std::move(f));
    }
    if (j.contains("dependencies")) {
      for (const auto& dj : j.at("dependencies")) {
        s.dependencies.push_back({dj.at("first").get<std::string>(),
                                  dj.at("second").get<std::string>(),
                                  dj.at("tilt").get<double>()});
      }
    }
    const auto& sm = j.at("score_model");
    const auto& def = sm.at("default");
    s.base.prevalence = def.at("prevalence").get<double>();
    s.base.positive = detail::score_law_from_json(def.at("positive"), "score_model.default.positive");
    s.base.negative = detail::score_law_from_json(def.at("negative"), "score_model.default.negative");
    if (sm.contains("rules")) {
      for (const auto& rj : sm.at("rules")) {
        ScoreRule r;
        for (auto it = rj.at("when").begin(); it != rj.at("when").end(); ++it) {
          r.when[it.key()] = it->is_string() ? it->get<std::string>() : it->dump();
        }
        if (rj.contains("prevalence")) r.prevalence = rj.at("prevalence").get<double>();
        if (rj.contains("positive")) {
          r.positive = detail::score_law_from_json(rj.at("positive"), "score rule positive");
        }
        if (rj.contains("negative")) {
          r.negative = detail::score_law_from_json(rj.at("negative"), "score rule negative");
        }
        s.rules.push_back(std::move(r));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
  s.validate();
  return s;
}

inline SynthScenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read scenario '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("scenario '" + path.string() + "': " + e.what());
  }
  return scenario_from_json(j);
}

inline nlohmann::json to_json(const SynthScenario& s) {
  nlohmann::json j;
  j["name"] = s.name;
  j["seed"] = s.seed;
  j["sites"] = {{"reference", {{"name", s.reference_site}, {"size", s.reference_size}}},
                {"external", {{"name", s.external_site}, {"size", s.external_size}}}};
  j["factors"] = nlohmann::json::array();
  for (const auto& f : s.factors) {
    nlohmann::json fj = {{"name", f.name},
                         {"kind", std::string(to_string(f.kind))},
                         {f.kind == FactorKind::group ? "members" : "levels", f.levels},
                         {"reference", f.reference},
                         {"external", f.external}};
    if (!f.observed) fj["observed"] = false;
    j["factors"].push_back(std::move(fj));
  }
  j["dependencies"] = nlohmann::json::array();
  for (const auto& d : s.dependencies) {
    j["dependencies"].push_back({{"first", d.first}, {"second", d.second}, {"tilt", d.tilt}});
  }
  nlohmann::json rules = nlohmann::json::array();
  for (const auto& r : s.rules) {
    nlohmann::json rj = {{"when", r.when}};
    if (r.prevalence) rj["prevalence"] = *r.prevalence;
    if (r.positive) rj["positive"] = detail::score_law_to_json(*r.positive);
    if (r.negative) rj["negative"] = detail::score_law_to_json(*r.negative);
    rules.push_back(std::move(rj));
  }
  j["score_model"] = {{"default",
                       {{"prevalence", s.base.prevalence},
                        {"positive", detail::score_law_to_json(s.base.positive)},
                        {"negative", detail::score_law_to_json(s.base.negative)}}},
                      {"rules", rules}};
  return j;
}

// ---------------------------------------------------------------------------
// Exact joint state space

class JointSpace {
 public:
  struct SynthAtom {
    std::size_t factor = 0;
    std::size_t member = Atom::npos;
    std::size_t cardinality = 0;
    std::size_t stride = 0;
    std::string label;
  };

  static constexpr std::size_t kMaxStates = 1u << 20;

  explicit JointSpace(const SynthScenario& s) : scenario_(&s) {
    std::size_t stride = 1;
    for (std::size_t f = 0; f < s.factors.size(); ++f) {
      const auto& sf = s.factors[f];
      if (sf.kind == FactorKind::group) {
        for (std::size_t m = 0; m < sf.levels.size(); ++m) {
          atoms_.push_back({f, m, 2, 0, sf.name + "/" + sf.levels[m]});
        }
      } else {
        atoms_.push_back({f, Atom::npos, sf.levels.size(), 0, sf.name});
      }
    }
    for (auto& a : atoms_) {
      a.stride = stride;
      if (stride > kMaxStates / std::max<std::size_t>(a.cardinality, 1)) {
        throw ConfigError("scenario '" + s.name + "': joint state space too large");
      }
      stride *= a.cardinality;
    }
    states_ = stride;

    for (const auto& d : s.dependencies) {
      tilts_.push_back({atom_index(d.first), atom_index(d.second), d.tilt});
    }

    // Score model per state, deduplicated.
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> rule_terms;
    for (const auto& r : s.rules) {
      std::vector<std::pair<std::size_t, std::size_t>> terms;
      for (const auto& [atom_name, level] : r.when) {
        const std::size_t a = atom_index(atom_name);
        terms.emplace_back(a, level_code(a, level));
      }
      rule_terms.push_back(std::move(terms));
    }
    model_of_.resize(states_);
    for (std::size_t st = 0; st < states_; ++st) {
      StratumScoreModel m = s.base;
      for (std::size_t r = 0; r < s.rules.size(); ++r) {
        bool match = std::all_of(rule_terms[r].begin(), rule_terms[r].end(),
                                 [&](const auto& t) { return code(st, t.first) == t.second; });
        if (!match) continue;
        if (s.rules[r].prevalence) m.prevalence = *s.rules[r].prevalence;
        if (s.rules[r].positive) m.positive = *s.rules[r].positive;
        if (s.rules[r].negative) m.negative = *s.rules[r].negative;
      }
      auto it = std::find(models_.begin(), models_.end(), m);
      model_of_[st] = static_cast<std::size_t>(it - models_.begin());
      if (it == models_.end()) models_.push_back(m);
    }
    for (const auto& m : models_) {
      if (!(m.prevalence >= 0.0 && m.prevalence <= 1.0)) {
        throw ConfigError("scenario '" + s.name + "': prevalence outside [0,1]");
      }
    }
    pair_prob_.assign(models_.size() * models_.size(), 0.0);
    for (std::size_t i = 0; i < models_.size(); ++i) {
      for (std::size_t j = 0; j < models_.size(); ++j) {
        pair_prob_[i * models_.size() + j] = prob_greater(models_[i].positive, models_[j].negative);
      }
    }
  }

  std::size_t states() const { return states_; }
  const std::vector<SynthAtom>& atoms() const { return atoms_; }
  const std::vector<StratumScoreModel>& models() const { return models_; }
  std::size_t model_of(std::size_t state) const { return model_of_[state]; }

  std::size_t code(std::size_t state, std::size_t atom) const {
    return (state / atoms_[atom].stride) % atoms_[atom].cardinality;
  }

  std::size_t atom_index(const std::string& name) const {
    for (std::size_t a = 0; a < atoms_.size(); ++a) {
      if (atoms_[a].label == name) return a;
    }
    throw ConfigError("scenario '" + scenario_->name + "': unknown factor '" + name + "'");
  }

  std::size_t level_code(std::size_t atom, const std::string& level) const {
    const auto& a = atoms_[atom];
    if (a.member != Atom::npos) {
      if (level == "1" || level == "present" || level == "true") return 1;
      if (level == "0" || level == "absent" || level == "false") return 0;
    } else {
      const auto& levels = scenario_->factors[a.factor].levels;
      for (std::size_t i = 0; i < levels.size(); ++i) {
        if (levels[i] == level) return i;
      }
    }
    throw ConfigError("scenario '" + scenario_->name + "': '" + level +
                      "' is not a level of '" + a.label + "'");
  }

  // Normalized joint pmf of a site.
  std::vector<double> site_distribution(Site site) const {
    std::vector<double> p(states_, 1.0);
    for (std::size_t st = 0; st < states_; ++st) {
      double w = 1.0;
      for (std::size_t a = 0; a < atoms_.size(); ++a) {
        w *= atom_probability(site, a, code(st, a));
      }
      double tilt = 0.0;
      for (const auto& t : tilts_) {
        if (code(st, t.first) == code(st, t.second)) tilt += t.tilt;
      }
      p[st] = w * std::exp(tilt);
    }
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    if (!(total > 0.0)) throw ConfigError("scenario '" + scenario_->name + "': site has no mass");
    for (double& v : p) v /= total;
    return p;
  }

  std::vector<double> marginal(std::span<const double> dist, std::size_t atom) const {
    std::vector<double> m(atoms_[atom].cardinality, 0.0);
    for (std::size_t st = 0; st < states_; ++st) m[code(st, atom)] += dist[st];
    return m;
  }

  // Population limit of one stratified resampling step: reweight each
  // stratum of `atom` so its marginal becomes `target`.
  void match(std::vector<double>& dist, std::size_t atom, std::span<const double> target) const {
    const auto current = marginal(dist, atom);
    std::vector<double> ratio(current.size(), 0.0);
    for (std::size_t v = 0; v < current.size(); ++v) {
      if (target[v] > 0.0 && !(current[v] > 0.0)) {
        throw ConfigError("scenario '" + scenario_->name + "': stratum " + atoms_[atom].label +
                          "=" + std::to_string(v) + " has no external mass to match");
      }
      ratio[v] = current[v] > 0.0 ? target[v] / current[v] : 0.0;
    }
    for (std::size_t st = 0; st < states_; ++st) dist[st] *= ratio[code(st, atom)];
  }

  // Population AUC of the score mixture under `dist`.
  double auc(std::span<const double> dist) const {
    const std::size_t m = models_.size();
    std::vector<double> pos(m, 0.0), neg(m, 0.0);
    for (std::size_t st = 0; st < states_; ++st) {
      const auto& model = models_[model_of_[st]];
      pos[model_of_[st]] += dist[st] * model.prevalence;
      neg[model_of_[st]] += dist[st] * (1.0 - model.prevalence);
    }
    double num = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (pos[i] == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) num += pos[i] * neg[j] * pair_prob_[i * m + j];
    }
    const double tp = std::accumulate(pos.begin(), pos.end(), 0.0);
    const double tn = std::accumulate(neg.begin(), neg.end(), 0.0);
    if (!(tp > 0.0) || !(tn > 0.0)) {
      throw UndefinedMetric("population AUC undefined: a label class has no mass");
    }
    return num / (tp * tn);
  }

 private:
  double atom_probability(Site site, std::size_t atom, std::size_t c) const {
    const auto& a = atoms_[atom];
    const auto& f = scenario_->factors[a.factor];
    const auto& probs = site == Site::reference ? f.reference : f.external;
    if (a.member == Atom::npos) return probs[c];
    return c ? probs[a.member] : 1.0 - probs[a.member];
  }

  struct Tilt {
    std::size_t first;
    std::size_t second;
    double tilt;
  };

  const SynthScenario* scenario_;
  std::vector<SynthAtom> atoms_;
  std::size_t states_ = 0;
  std::vector<Tilt> tilts_;
  std::vector<StratumScoreModel> models_;
  std::vector<std::size_t> model_of_;
  std::vector<double> pair_prob_;
};

inline void SynthScenario::validate() const {
  if (factors.empty()) throw ConfigError("scenario '" + name + "' declares no factors");
  std::vector<std::string> seen;
  for (const auto& f : factors) {
    if (std::find(seen.begin(), seen.end(), f.name) != seen.end()) {
      throw ConfigError("scenario '" + name + "': duplicate factor '" + f.name + "'");
    }
    seen.push_back(f.name);
    if (f.levels.empty()) throw ConfigError("scenario factor '" + f.name + "' has no levels");
    if (f.reference.size() != f.levels.size() || f.external.size() != f.levels.size()) {
      throw ConfigError("scenario factor '" + f.name + "': one probability per level required");
    }
    for (const auto* probs : {&f.reference, &f.external}) {
      for (double p : *probs) {
        if (!(p >= 0.0 && p <= 1.0)) {
          throw ConfigError("scenario factor '" + f.name + "': probability outside [0,1]");
        }
      }
      if (f.kind == FactorKind::categorical) {
        const double sum = std::accumulate(probs->begin(), probs->end(), 0.0);
        if (std::abs(sum - 1.0) > 1e-9) {
          throw ConfigError("scenario factor '" + f.name + "': site distribution must sum to 1");
        }
      }
    }
  }
  if (!(base.prevalence >= 0.0 && base.prevalence <= 1.0)) {
    throw ConfigError("scenario '" + name + "': prevalence outside [0,1]");
  }
  base.positive.validate();
  base.negative.validate();
  if (reference_size == 0 || external_size == 0) {
    throw ConfigError("scenario '" + name + "': site sizes must be positive");
  }
  JointSpace space(*this);  // resolves atom names in rules and dependencies
}

inline std::vector<FactorSpec> SynthScenario::observed_specs() const {
  std::vector<FactorSpec> specs;
  for (const auto& f : factors) {
    if (!f.observed) continue;
    specs.push_back(f.kind == FactorKind::group ? FactorSpec::group(f.name, f.levels)
                                                : FactorSpec::categorical(f.name, f.levels));
  }
  return specs;
}

inline std::vector<std::string> SynthScenario::observed_names() const {
  std::vector<std::string> names;
  for (const auto& f : factors) {
    if (f.observed) names.push_back(f.name);
  }
  return names;
}

// ---------------------------------------------------------------------------
// Operations

inline bool scores_use_logistic(const SynthScenario& s) {
  auto inside = [](const StratumScoreModel& m) {
    return m.positive.within_unit_interval() && m.negative.within_unit_interval();
  };
  if (!inside(s.base)) return true;
  for (const auto& r : s.rules) {
    if (r.positive && !r.positive->within_unit_interval()) return true;
    if (r.negative && !r.negative->within_unit_interval()) return true;
  }
  return false;
}

struct SyntheticPair {
  ScoredDataset reference;
  ScoredDataset external;
};

namespace detail {

inline ScoredDataset generate_site(const SynthScenario& s, const JointSpace& space, Site site,
                                   bool logistic) {
  const auto dist = space.site_distribution(site);
  std::vector<double> cdf(dist.size());
  std::partial_sum(dist.begin(), dist.end(), cdf.begin());
  const std::size_t n = site == Site::reference ? s.reference_size : s.external_size;
  const std::string& name = site == Site::reference ? s.reference_site : s.external_site;
  RandomStream rng(derive_seed(s.seed, {hash_string(site == Site::reference ? "reference"
                                                                            : "external")}));
  std::vector<ScoredRecord> records;
  records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform01() * cdf.back();
    auto st = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    st = std::min(st, dist.size() - 1);
    while (dist[st] == 0.0 && st > 0) --st;
    const auto& model = space.models()[space.model_of(st)];
    ScoredRecord rec;
    rec.label = rng.uniform01() < model.prevalence ? 1 : 0;
    double score = (rec.label ? model.positive : model.negative).sample(rng);
    if (logistic) score = 1.0 / (1.0 + std::exp(-score));
    rec.score = std::clamp(score, 0.0, 1.0);
    std::map<std::string, std::set<std::string>> flags;
    for (std::size_t a = 0; a < space.atoms().size(); ++a) {
      const auto& atom = space.atoms()[a];
      const auto& f = s.factors[atom.factor];
      if (!f.observed) continue;
      const std::size_t c = space.code(st, a);
      if (atom.member == Atom::npos) {
        rec.factors.emplace(f.name, FactorValue::category(f.levels[c]));
      } else {
        auto& set = flags[f.name];
        if (c) set.insert(f.levels[atom.member]);
      }
    }
    for (auto& [fname, set] : flags) rec.factors.emplace(fname, FactorValue::flags(std::move(set)));
    records.push_back(std::move(rec));
  }
  return ScoredDataset(name, s.observed_specs(), std::move(records));
}

}  // namespace detail

// Samples both sites. Deterministic per scenario seed; each site draws from
// its own substream.
inline SyntheticPair generate(const SynthScenario& scenario) {
  scenario.validate();
  JointSpace space(scenario);
  const bool logistic = scores_use_logistic(scenario);
  return {detail::generate_site(scenario, space, Site::reference, logistic),
          detail::generate_site(scenario, space, Site::external, logistic)};
}

// Exact population AUC for a distribution over joint strata (indexed like
// JointSpace states).
inline double analytic_auc(const SynthScenario& scenario, std::span<const double> state_weights) {
  JointSpace space(scenario);
  if (state_weights.size() != space.states()) {
    throw ConfigError("analytic_auc: expected " + std::to_string(space.states()) + " weights");
  }
  return space.auc(state_weights);
}

inline double analytic_auc(const SynthScenario& scenario, Site site) {
  JointSpace space(scenario);
  return space.auc(space.site_distribution(site));
}

struct GroundTruth {
  double reference_auc = 0.0;
  double external_auc = 0.0;
  double matched_auc = 0.0;
  double total_disparity = 0.0;
  double unexplained = 0.0;
  std::vector<std::pair<std::string, double>> phi;

  double factor(const std::string& name) const {
    for (const auto& [n, v] : phi) {
      if (n == name) return v;
    }
    throw ConfigError("ground truth has no factor '" + name + "'");
  }
};

// Exact population Shapley values of the observed factors: every ordering of
// the factors is walked with the same sequential marginal matching as the
// sample-level matcher, applied to the external joint distribution.
inline GroundTruth ground_truth_phi(const SynthScenario& scenario) {
  JointSpace space(scenario);
  std::vector<std::string> players = scenario.observed_names();
  if (players.size() > 6) {
    throw ConfigError("ground truth supports at most 6 observed factors");
  }
  std::vector<std::vector<std::size_t>> player_atoms(players.size());
  for (std::size_t a = 0; a < space.atoms().size(); ++a) {
    const auto& f = scenario.factors[space.atoms()[a].factor];
    auto it = std::find(players.begin(), players.end(), f.name);
    if (it != players.end()) player_atoms[static_cast<std::size_t>(it - players.begin())].push_back(a);
  }
  const auto ref = space.site_distribution(Site::reference);
  const auto ext = space.site_distribution(Site::external);
  std::vector<std::vector<double>> targets(space.atoms().size());
  for (std::size_t a = 0; a < space.atoms().size(); ++a) targets[a] = space.marginal(ref, a);

  GroundTruth gt;
  gt.reference_auc = space.auc(ref);
  gt.external_auc = space.auc(ext);
  gt.total_disparity = gt.reference_auc - gt.external_auc;

  std::vector<double> sums(players.size(), 0.0);
  std::vector<std::size_t> order(players.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t count = 0;
  double matched_sum = 0.0;
  do {
    auto dist = ext;
    double previous = gt.external_auc;
    for (std::size_t k : order) {
      for (std::size_t a : player_atoms[k]) space.match(dist, a, targets[a]);
      const double value = space.auc(dist);
      sums[k] += value - previous;
      previous = value;
    }
    matched_sum += previous;
    ++count;
  } while (std::next_permutation(order.begin(), order.end()));

  double explained = 0.0;
  for (std::size_t k = 0; k < players.size(); ++k) {
    gt.phi.emplace_back(players[k], sums[k] / static_cast<double>(count));
    explained += sums[k] / static_cast<double>(count);
  }
  gt.matched_auc = matched_sum / static_cast<double>(count);
  gt.unexplained = gt.total_disparity - explained;
  return gt;
}

}  // namespace confshap
