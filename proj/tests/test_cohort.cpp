#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "traceseq/cohort/cohort.hpp"
#include "traceseq/cohort/generator.hpp"
#include "traceseq/cohort/matching.hpp"
#include "traceseq/cohort/propensity.hpp"
#include "traceseq/cohort/split.hpp"
#include "traceseq/ehr/cohort_file.hpp"
#include "traceseq/errors.hpp"
#include "traceseq/numkit/kernels.hpp"

using namespace traceseq;
using namespace traceseq::cohort;

namespace {

std::size_t count_cases(const std::vector<ehr::RawPatient>& pop) {
  std::size_t n = 0;
  for (const auto& p : pop) n += p.label == 1;
  return n;
}

std::string dump(const std::vector<ehr::RawPatient>& pop) {
  ehr::CohortFile f;
  f.patients = pop;
  f.splits.assign(pop.size(), "");
  return ehr::serialize_cohort(f);
}

double mutual_information(const std::vector<int>& a, const std::vector<int>& b) {
  double joint[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < a.size(); ++i) joint[a[i]][b[i]] += 1.0;
  const double n = static_cast<double>(a.size());
  double mi = 0.0;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double pij = joint[i][j] / n;
      const double pi = (joint[i][0] + joint[i][1]) / n;
      const double pj = (joint[0][j] + joint[1][j]) / n;
      if (pij > 0) mi += pij * std::log(pij / (pi * pj));
    }
  }
  return mi;
}

ehr::RawPatient person(std::string id, int label, double age, std::string gender = "f", std::string race = "w") {
  ehr::RawPatient p;
  p.id = std::move(id);
  p.label = label;
  p.gender = std::move(gender);
  p.race = std::move(race);
  p.visits.push_back(ehr::RawVisit{{"dx_1"}, {}, 0, age});
  return p;
}

// Straightforward restatement of the greedy rule used as an oracle.
std::vector<MatchEntry> reference_greedy(std::vector<Candidate> cases, std::vector<Candidate> controls, std::size_t k) {
  std::vector<MatchEntry> out;
  std::stable_sort(cases.begin(), cases.end(), [](auto& a, auto& b) { return a.id < b.id; });
  std::stable_sort(cases.begin(), cases.end(), [](auto& a, auto& b) { return a.score > b.score; });
  std::set<std::string> used;
  for (const auto& c : cases) {
    for (std::size_t m = 0; m < k; ++m) {
      const Candidate* best = nullptr;
      double best_d = 0.0;
      for (const auto& ctl : controls) {
        if (used.count(ctl.id)) continue;
        const double d = std::fabs(logit(c.score) - logit(ctl.score));
        if (!best || d < best_d || (d == best_d && ctl.id < best->id)) {
          best = &ctl;
          best_d = d;
        }
      }
      used.insert(best->id);
      out.push_back({c.id, best->id, best_d});
    }
  }
  return out;
}

}  // namespace

TEST_CASE("generator is deterministic and thread-count independent") {
  GeneratorConfig cfg;
  cfg.population = 500;
  cfg.seed = 9;
  numkit::kernels::set_threads(1);
  const auto a = dump(generate_population(cfg));
  const auto b = dump(generate_population(cfg));
  numkit::kernels::set_threads(3);
  const auto c = dump(generate_population(cfg));
  numkit::kernels::set_threads(1);
  CHECK(a == b);
  CHECK(a == c);
  cfg.seed = 10;
  CHECK(dump(generate_population(cfg)) != a);
}

TEST_CASE("generated records are well formed") {
  GeneratorConfig cfg;
  cfg.population = 800;
  const auto pop = generate_population(cfg);
  const auto risk = risk_codes(cfg);
  for (const auto& p : pop) {
    REQUIRE_FALSE(p.visits.empty());
    CHECK(p.visits.front().admit_day == 0);
    for (std::size_t t = 0; t < p.visits.size(); ++t) {
      const auto& v = p.visits[t];
      CHECK(std::any_of(v.codes.begin(), v.codes.end(), [](auto& c) { return c.rfind("dx_", 0) == 0; }));
      CHECK(std::is_sorted(v.codes.begin(), v.codes.end()));
      if (t > 0) {
        CHECK(v.admit_day >= p.visits[t - 1].admit_day);
        CHECK(v.age_years >= p.visits[t - 1].age_years);
      }
    }
  }
  CHECK(risk == std::vector<std::string>{"dx_000", "dx_001"});
}

TEST_CASE("zero hazard weights give the intercept rate") {
  GeneratorConfig cfg;
  cfg.population = 20000;
  cfg.seed = 3;
  cfg.hazard.risk_weights = {0.0, 0.0};
  cfg.hazard.interaction = 0.0;
  cfg.hazard.age_weight = 0.0;
  cfg.hazard.intercept = -3.0;
  const auto pop = generate_population(cfg);
  // Every feature visit is preceded by exactly one hazard draw that did not
  // fire, except that each case also has the draw that fired.
  double trials = 0.0;
  for (const auto& p : pop) trials += static_cast<double>(p.visits.size());
  const double cases = static_cast<double>(count_cases(pop));
  const double p0 = 1.0 / (1.0 + std::exp(3.0));
  const double sigma = std::sqrt(trials * p0 * (1.0 - p0));
  CHECK(std::fabs(cases - trials * p0) < 3.0 * sigma);
}

TEST_CASE("doubling the diabetes weight raises the case count") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    GeneratorConfig cfg;
    cfg.population = 3000;
    cfg.seed = seed;
    const auto base = count_cases(generate_population(cfg));
    cfg.hazard.risk_weights[1] *= 2.0;
    const auto doubled = count_cases(generate_population(cfg));
    CHECK(doubled > base);
  }
}

TEST_CASE("risk codes carry information about the label") {
  GeneratorConfig cfg;
  cfg.population = 12000;
  const auto pop = generate_population(cfg);
  REQUIRE(pop.size() >= 10000);
  std::vector<int> exposed, label;
  for (std::size_t i = 0; i < 10000; ++i) {
    bool any = false;
    for (const auto& v : pop[i].visits) {
      for (const auto& c : v.codes) any = any || c == "dx_000" || c == "dx_001";
    }
    exposed.push_back(any);
    label.push_back(pop[i].label);
  }
  const double mi = mutual_information(exposed, label);
  CHECK(mi > 0.0);
  std::mt19937_64 rng(1);
  double null_max = 0.0;
  for (int r = 0; r < 20; ++r) {
    auto shuffled = label;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    null_max = std::max(null_max, mutual_information(exposed, shuffled));
  }
  CHECK(mi > null_max);
}

TEST_CASE("pretraining corpus drops and adds codes") {
  GeneratorConfig cfg;
  cfg.population = 300;
  PretrainCorpusConfig pc;
  pc.patients = 300;
  const auto corpus = generate_pretrain_corpus(cfg, pc);
  std::set<std::string> seen;
  for (const auto& p : corpus) {
    for (const auto& v : p.visits) seen.insert(v.codes.begin(), v.codes.end());
  }
  const auto codes = generator_codes(cfg);
  CHECK_FALSE(seen.contains(codes[9]));
  CHECK_FALSE(seen.contains(codes[19]));
  CHECK(seen.contains("px_ext000"));
  CHECK(seen.size() > codes.size());
}

TEST_CASE("generator validation") {
  GeneratorConfig cfg;
  cfg.num_codes = 0;
  CHECK_THROWS_AS(generate_population(cfg), ValidationError);
  cfg = GeneratorConfig{};
  cfg.race_probs = {0.5, 0.5, 0.5, 0.5};
  CHECK_THROWS_AS(generate_population(cfg), ValidationError);
  cfg = GeneratorConfig{};
  cfg.hazard.risk_weights = {1.0, std::nan("")};
  CHECK_THROWS_AS(generate_population(cfg), ValidationError);
}

TEST_CASE("propensity intercept-only fit") {
  std::vector<ehr::RawPatient> pts;
  for (int i = 0; i < 35; ++i) pts.push_back(person("p" + std::to_string(i), i < 5, 50.0));
  const auto fit = fit_propensity(pts);
  for (double s : fit.scores) CHECK(s == doctest::Approx(5.0 / 35.0).epsilon(1e-6));
  CHECK(fit.grad_norm < 1e-6);
}

TEST_CASE("propensity separable toy ranks perfectly") {
  std::vector<ehr::RawPatient> pts;
  for (int i = 0; i < 10; ++i) pts.push_back(person("c" + std::to_string(i), 1, 70.0 + i, i % 2 ? "f" : "m"));
  for (int i = 0; i < 30; ++i) pts.push_back(person("k" + std::to_string(i), 0, 30.0 + i, i % 2 ? "f" : "m", i % 3 ? "w" : "b"));
  const auto fit = fit_propensity(pts);
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK(fit.scores[i] > 0.0);
    CHECK(fit.scores[i] < 1.0);
    if (pts[i].label != 1) continue;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (pts[j].label != 0) continue;
      pairs += 1.0;
      wins += fit.scores[i] > fit.scores[j] ? 1.0 : (fit.scores[i] == fit.scores[j] ? 0.5 : 0.0);
    }
  }
  CHECK(wins / pairs == 1.0);
  std::vector<ehr::RawPatient> one_class = {person("a", 1, 40), person("b", 1, 50)};
  CHECK_THROWS_AS(fit_propensity(one_class), ValidationError);
}

TEST_CASE("greedy matching uses every control when supply is exact") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::vector<Candidate> cases, controls;
  for (int i = 0; i < 10; ++i) cases.push_back({"case" + std::to_string(i), u(rng)});
  for (int i = 0; i < 60; ++i) controls.push_back({"ctl" + std::to_string(i), u(rng)});
  const auto table = greedy_match(cases, controls, 6);
  REQUIRE(table.size() == 60);
  std::set<std::string> used;
  std::map<std::string, int> per_case;
  for (const auto& m : table) {
    used.insert(m.control_id);
    ++per_case[m.case_id];
  }
  CHECK(used.size() == 60);
  for (const auto& [id, n] : per_case) CHECK(n == 6);
  CHECK(static_cast<double>(cases.size()) / (cases.size() + used.size()) == doctest::Approx(1.0 / 7.0));
}

TEST_CASE("greedy matching picks nearest controls") {
  const double base = 0.0;
  auto p_of = [](double l) { return 1.0 / (1.0 + std::exp(-l)); };
  std::vector<Candidate> cases = {{"x", p_of(base)}};
  std::vector<Candidate> controls = {{"far", p_of(0.9)}, {"near", p_of(0.1)}, {"mid", p_of(-0.2)}};
  const auto table = greedy_match(cases, controls, 2);
  REQUIRE(table.size() == 2);
  CHECK(table[0].control_id == "near");
  CHECK(table[1].control_id == "mid");
  CHECK(table[0].distance == doctest::Approx(0.1));
  CHECK(table[1].distance == doctest::Approx(0.2));
  CHECK(match_table_csv(table).rfind("case_id,control_id,distance\nx,near,", 0) == 0);

  // Ties between controls resolve by id.
  std::vector<Candidate> tied = {{"b", 0.5}, {"a", 0.5}, {"c", 0.5}};
  const auto t2 = greedy_match({{"x", 0.5}}, tied, 2);
  CHECK(t2[0].control_id == "a");
  CHECK(t2[1].control_id == "b");

  try {
    greedy_match(cases, controls, 4);
    FAIL("expected a ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("deficit 1") != std::string::npos);
  }
}

TEST_CASE("greedy matching against brute force and optimal assignment") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.02, 0.98);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Candidate> cases, controls;
    for (int i = 0; i < 3; ++i) cases.push_back({"c" + std::to_string(i), u(rng)});
    for (int i = 0; i < 12; ++i) controls.push_back({"k" + std::to_string(10 + i), u(rng)});
    const auto table = greedy_match(cases, controls, 2);
    const auto replay = reference_greedy(cases, controls, 2);
    REQUIRE(table.size() == replay.size());
    double greedy_total = 0.0;
    for (std::size_t i = 0; i < table.size(); ++i) {
      CHECK(table[i].case_id == replay[i].case_id);
      CHECK(table[i].control_id == replay[i].control_id);
      CHECK(table[i].distance == replay[i].distance);
      greedy_total += table[i].distance;
    }

    // Exhaustive search over disjoint control pairs for the three cases.
    auto dist = [&](int c, int k) { return std::fabs(logit(cases[c].score) - logit(controls[k].score)); };
    double best = 1e300;
    for (int a1 = 0; a1 < 12; ++a1)
      for (int a2 = a1 + 1; a2 < 12; ++a2)
        for (int b1 = 0; b1 < 12; ++b1)
          for (int b2 = b1 + 1; b2 < 12; ++b2) {
            if (b1 == a1 || b1 == a2 || b2 == a1 || b2 == a2) continue;
            const double ab = dist(0, a1) + dist(0, a2) + dist(1, b1) + dist(1, b2);
            if (ab >= best) continue;
            for (int c1 = 0; c1 < 12; ++c1)
              for (int c2 = c1 + 1; c2 < 12; ++c2) {
                std::set<int> s = {a1, a2, b1, b2, c1, c2};
                if (s.size() != 6) continue;
                best = std::min(best, ab + dist(2, c1) + dist(2, c2));
              }
          }
    CHECK(greedy_total / 6.0 >= best / 6.0 - 1e-12);
  }
}

TEST_CASE("split counts reproduce the published cohort sizes") {
  const SplitFractions f;
  const auto cases = split_counts(21113, f);
  const auto controls = split_counts(126678, f);
  CHECK(cases[0] + controls[0] == 110842);
  CHECK(cases[1] + controls[1] == 14778);
  CHECK(cases[2] + controls[2] == 22171);
  CHECK(cases[0] + cases[1] + cases[2] == 21113);
  CHECK_THROWS_AS(split_counts(10, SplitFractions{0.5, 0.2, 0.2}), ConfigError);
}

TEST_CASE("degenerate split fractions") {
  std::vector<Labeled> pts = {{"case", 1}};
  for (int i = 0; i < 6; ++i) pts.push_back({"ctl" + std::to_string(i), 0});
  const auto split = stratified_split(pts, SplitFractions{1.0, 0.0, 0.0}, 3);
  REQUIRE(split.size() == 7);
  for (const auto& [id, s] : split) CHECK(s == Split::kTrain);
}

TEST_CASE("split prevalence and partition across seeds") {
  std::vector<Labeled> pts;
  for (int i = 0; i < 143; ++i) pts.push_back({"a" + std::to_string(i), 1});
  for (int i = 0; i < 858; ++i) pts.push_back({"b" + std::to_string(i), 0});
  std::map<Split, std::set<std::string>> first;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto split = stratified_split(pts, SplitFractions{}, seed);
    REQUIRE(split.size() == pts.size());
    std::map<Split, std::pair<double, double>> counts;  // cases, total
    for (const auto& p : pts) {
      auto& c = counts[split.at(p.id)];
      c.first += p.label;
      c.second += 1.0;
    }
    for (const auto& [s, c] : counts) CHECK(std::fabs(c.first - c.second / 7.0) <= 1.0);
    std::map<Split, std::set<std::string>> members;
    for (const auto& [id, s] : split) members[s].insert(id);
    if (seed == 0) first = members;
    if (seed == 1) CHECK(members != first);
  }
  CHECK(stratified_split(pts, SplitFractions{}, 7) == stratified_split(pts, SplitFractions{}, 7));
  CHECK(parse_split(split_name(Split::kValid)) == Split::kValid);
}

TEST_CASE("build_cohort end to end") {
  GeneratorConfig gen;
  gen.population = 2500;
  const auto pop = generate_population(gen);
  CohortConfig cfg;
  cfg.max_cases = 120;
  const auto cohort = build_cohort(pop, cfg);
  CHECK(cohort.patients.size() == 7 * 120);
  CHECK(count_cases(cohort.patients) == 120);
  CHECK(cohort.match_table.size() == 6 * 120);
  std::set<std::string> controls;
  std::map<std::string, int> per_case;
  for (const auto& m : cohort.match_table) {
    controls.insert(m.control_id);
    ++per_case[m.case_id];
  }
  CHECK(controls.size() == cohort.match_table.size());
  for (const auto& [id, n] : per_case) CHECK(n == 6);
  CHECK(std::is_sorted(cohort.patients.begin(), cohort.patients.end(),
                       [](const auto& a, const auto& b) { return a.id < b.id; }));
  CHECK(cohort.split.size() == cohort.patients.size());
  CHECK(split_ids(cohort, Split::kTrain).size() + split_ids(cohort, Split::kValid).size() +
            split_ids(cohort, Split::kTest).size() ==
        cohort.patients.size());
  const auto again = build_cohort(pop, cfg);
  CHECK(dump(again.patients) == dump(cohort.patients));
  CHECK(match_table_csv(again.match_table) == match_table_csv(cohort.match_table));
}
