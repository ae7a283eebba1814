#include "traceseq/cohort/generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <random>
#include <set>

#include "traceseq/errors.hpp"
#include "traceseq/numkit/kernels.hpp"
#include "traceseq/numkit/rng.hpp"

namespace traceseq::cohort {

using numkit::derive_seed;
using numkit::Rng;

namespace {

constexpr std::uint64_t kTopicStream = 0x70F1C5ULL;

struct CodeLayout {
  std::size_t dx = 0, px = 0, rx = 0;
};

CodeLayout layout(std::size_t num_codes) {
  CodeLayout l;
  l.dx = std::max<std::size_t>(1, (num_codes * 2 + 4) / 5);
  l.px = std::min(num_codes - l.dx, (num_codes * 3) / 10);
  l.rx = num_codes - l.dx - l.px;
  return l;
}

std::string numbered(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%03zu", prefix, i);
  return buf;
}

struct Topic {
  std::vector<double> code_weights;
  std::vector<double> obs_weights;
  std::size_t fallback_dx = 0;
};

struct World {
  std::vector<std::string> codes;
  std::vector<std::string> observations;
  std::vector<Topic> topics;
  std::size_t num_risk = 0;
};

World build_world(const GeneratorConfig& cfg) {
  World w;
  w.codes = generator_codes(cfg);
  for (std::size_t i = 0; i < cfg.num_observations; ++i) w.observations.push_back(numbered("obs_", i));
  w.num_risk = cfg.hazard.risk_weights.size();
  const auto lay = layout(cfg.num_codes);
  Rng rng(derive_seed(cfg.world_seed, kTopicStream));
  std::gamma_distribution<double> gamma(1.0, 1.0);

  std::vector<std::size_t> ordinary;  // non-risk codes
  for (std::size_t i = w.num_risk; i < cfg.num_codes; ++i) ordinary.push_back(i);
  std::vector<std::size_t> all_obs(cfg.num_observations);
  std::iota(all_obs.begin(), all_obs.end(), 0);
  // Deal every code and observation to some topic so the whole vocabulary occurs.
  auto deal = [&](std::vector<std::size_t> items) {
    std::shuffle(items.begin(), items.end(), rng);
    std::vector<std::vector<std::size_t>> hands(cfg.num_topics);
    for (std::size_t j = 0; j < items.size(); ++j) hands[j % cfg.num_topics].push_back(items[j]);
    return hands;
  };
  const auto code_hands = deal(ordinary);
  const auto obs_hands = deal(all_obs);
  auto pick = [&](std::vector<double>& weights, const std::vector<std::size_t>& hand,
                  const std::vector<std::size_t>& universe, std::size_t take) {
    for (auto i : hand) weights[i] = gamma(rng);
    auto rest = universe;
    std::shuffle(rest.begin(), rest.end(), rng);
    for (auto i : rest) {
      if (std::count_if(weights.begin(), weights.end(), [](double v) { return v > 0.0; }) >=
          static_cast<std::ptrdiff_t>(take)) {
        break;
      }
      if (weights[i] == 0.0) weights[i] = gamma(rng);
    }
  };

  for (std::size_t k = 0; k < cfg.num_topics; ++k) {
    Topic t;
    t.code_weights.assign(cfg.num_codes, 0.0);
    pick(t.code_weights, code_hands[k], ordinary, 12);
    if (k < w.num_risk) {
      const double mx = *std::max_element(t.code_weights.begin(), t.code_weights.end());
      t.code_weights[k] = 2.0 * std::max(mx, 1.0);
    }
    // Every topic can supply a diagnosis code.
    std::size_t best = lay.dx;
    for (std::size_t i = 0; i < lay.dx; ++i) {
      if (t.code_weights[i] > 0 && (best == lay.dx || t.code_weights[i] > t.code_weights[best])) best = i;
    }
    if (best == lay.dx) {
      best = w.num_risk < lay.dx ? w.num_risk + rng() % (lay.dx - w.num_risk) : 0;
      t.code_weights[best] = gamma(rng) + 0.1;
    }
    t.fallback_dx = best;

    t.obs_weights.assign(cfg.num_observations, 0.0);
    pick(t.obs_weights, obs_hands[k], all_obs, 8);
    w.topics.push_back(std::move(t));
  }
  return w;
}

// Weighted draw of up to n distinct indices.
std::vector<std::size_t> draw_distinct(std::vector<double> weights, std::size_t n, Rng& rng) {
  std::vector<std::size_t> out;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t draw = 0; draw < n; ++draw) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (total <= 0.0) break;
    double u = unit(rng) * total;
    std::size_t pick = weights.size();
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] <= 0.0) continue;
      pick = i;
      if (u < weights[i]) break;
      u -= weights[i];
    }
    out.push_back(pick);
    weights[pick] = 0.0;
  }
  return out;
}

std::size_t categorical(const std::vector<double>& probs, Rng& rng) {
  std::discrete_distribution<std::size_t> dist(probs.begin(), probs.end());
  return dist(rng);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::optional<ehr::RawPatient> generate_patient(const GeneratorConfig& cfg, const World& world, std::size_t index) {
  Rng rng(derive_seed(cfg.seed, 2 * index));
  Rng hazard_rng(derive_seed(cfg.seed, 2 * index + 1));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto lay = layout(cfg.num_codes);

  ehr::RawPatient p;
  char id[32];
  std::snprintf(id, sizeof id, "P%06zu", index);
  p.id = id;
  p.race = cfg.races[categorical(cfg.race_probs, rng)];
  p.gender = cfg.genders[categorical(cfg.gender_probs, rng)];
  const double base_age = cfg.min_age + unit(rng) * (cfg.max_age - cfg.min_age);

  std::geometric_distribution<int> visits_dist(1.0 / cfg.mean_visits);
  const std::size_t total_visits =
      std::min<std::size_t>(cfg.max_generated_visits, 1 + static_cast<std::size_t>(visits_dist(rng)));
  std::geometric_distribution<int> gap_dist(1.0 / cfg.mean_gap_days);

  std::gamma_distribution<double> gamma(cfg.topic_concentration, 1.0);
  std::vector<double> theta(world.topics.size());
  for (auto& v : theta) v = gamma(rng) + 1e-12;
  const std::size_t progression = rng() % (total_visits + 1);

  std::poisson_distribution<int> extra_codes(std::max(1e-12, cfg.codes_per_visit - 1.0));
  std::poisson_distribution<int> obs_count(std::max(1e-12, cfg.observations_per_visit));

  std::vector<double> exposure(world.num_risk, 0.0);
  int day = 0;
  bool onset = false;
  for (std::size_t t = 0; t < total_visits; ++t) {
    if (t > 0) day += 1 + gap_dist(rng);
    const double age = base_age + day / 365.25;
    if (t > 0) {
      double z = cfg.hazard.intercept + cfg.hazard.age_weight * (age - 50.0) / 10.0;
      for (std::size_t k = 0; k < world.num_risk; ++k) z += cfg.hazard.risk_weights[k] * exposure[k];
      if (world.num_risk >= 2) z += cfg.hazard.interaction * exposure[0] * exposure[1];
      if (unit(hazard_rng) < sigmoid(z)) {
        onset = true;
        break;
      }
    }

    auto weights = theta;
    if (t >= progression) {
      for (std::size_t k = 0; k < world.num_risk && k < weights.size(); ++k) weights[k] *= cfg.progression_boost;
    }
    const auto& topic = world.topics[categorical(weights, rng)];

    ehr::RawVisit v;
    v.admit_day = day;
    v.age_years = age;
    auto code_idx = draw_distinct(topic.code_weights, 1 + static_cast<std::size_t>(extra_codes(rng)), rng);
    if (std::none_of(code_idx.begin(), code_idx.end(), [&](std::size_t i) { return i < lay.dx; })) {
      code_idx.push_back(topic.fallback_dx);
    }
    std::sort(code_idx.begin(), code_idx.end());
    std::vector<std::size_t> obs_idx;
    if (cfg.num_observations > 0) {
      obs_idx = draw_distinct(topic.obs_weights, static_cast<std::size_t>(obs_count(rng)), rng);
      for (std::size_t k = 0; k < world.num_risk && k < cfg.num_observations; ++k) {
        const bool present = std::binary_search(code_idx.begin(), code_idx.end(), k);
        if (unit(rng) < (present ? 0.6 : 0.02)) obs_idx.push_back(k);
      }
      std::sort(obs_idx.begin(), obs_idx.end());
      obs_idx.erase(std::unique(obs_idx.begin(), obs_idx.end()), obs_idx.end());
    }
    for (std::size_t k = 0; k < world.num_risk; ++k) {
      const bool present = std::binary_search(code_idx.begin(), code_idx.end(), k);
      exposure[k] = cfg.hazard.decay * exposure[k] + (present ? 1.0 : 0.0);
    }
    for (auto i : code_idx) v.codes.push_back(world.codes[i]);
    for (auto i : obs_idx) v.observations.push_back(world.observations[i]);
    p.visits.push_back(std::move(v));
  }

  if (onset) {
    p.label = 1;
  } else {
    // The final visit carries the negative label and is not a feature visit.
    p.label = 0;
    p.visits.pop_back();
  }
  if (p.visits.empty()) return std::nullopt;
  return p;
}

}  // namespace

void validate(const GeneratorConfig& cfg) {
  auto fail = [](const std::string& msg) { throw ValidationError("generator config: " + msg); };
  if (cfg.population == 0) fail("population must be positive");
  if (cfg.num_codes == 0) fail("num_codes must be positive");
  if (cfg.num_topics == 0) fail("num_topics must be positive");
  if (!(cfg.mean_visits >= 1.0)) fail("mean_visits must be >= 1");
  if (cfg.max_generated_visits < 2) fail("max_generated_visits must be >= 2");
  if (!(cfg.mean_gap_days >= 1.0)) fail("mean_gap_days must be >= 1");
  if (!(cfg.codes_per_visit >= 1.0)) fail("codes_per_visit must be >= 1");
  if (!(cfg.topic_concentration > 0.0)) fail("topic_concentration must be positive");
  const auto lay = layout(cfg.num_codes);
  if (cfg.hazard.risk_weights.size() > lay.dx || cfg.hazard.risk_weights.size() > cfg.num_topics) {
    fail("risk code subset must fit inside the diagnosis codes and topics");
  }
  const auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(cfg.hazard.risk_weights.begin(), cfg.hazard.risk_weights.end(), finite) ||
      !finite(cfg.hazard.intercept) || !finite(cfg.hazard.interaction) || !finite(cfg.hazard.age_weight) ||
      !(cfg.hazard.decay >= 0.0 && cfg.hazard.decay <= 1.0)) {
    fail("hazard weights must be finite and decay in [0,1]");
  }
  auto check_probs = [&](const std::vector<std::string>& names, const std::vector<double>& probs, const char* what) {
    if (names.empty() || names.size() != probs.size()) fail(std::string(what) + " names/probabilities mismatch");
    double sum = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0)) fail(std::string(what) + " probabilities must be nonnegative");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) fail(std::string(what) + " probabilities must sum to 1");
  };
  check_probs(cfg.races, cfg.race_probs, "race");
  check_probs(cfg.genders, cfg.gender_probs, "gender");
  if (!(cfg.min_age > 0 && cfg.max_age >= cfg.min_age)) fail("age range invalid");
}

std::vector<std::string> generator_codes(const GeneratorConfig& cfg) {
  const auto lay = layout(cfg.num_codes);
  std::vector<std::string> codes;
  for (std::size_t i = 0; i < lay.dx; ++i) codes.push_back(numbered("dx_", i));
  for (std::size_t i = 0; i < lay.px; ++i) codes.push_back(numbered("px_", i));
  for (std::size_t i = 0; i < lay.rx; ++i) codes.push_back(numbered("rx_", i));
  return codes;
}

std::vector<std::string> risk_codes(const GeneratorConfig& cfg) {
  auto codes = generator_codes(cfg);
  codes.resize(cfg.hazard.risk_weights.size());
  return codes;
}

std::vector<ehr::RawPatient> generate_population(const GeneratorConfig& cfg) {
  validate(cfg);
  const World world = build_world(cfg);
  std::vector<std::optional<ehr::RawPatient>> slots(cfg.population);
  const auto n = static_cast<std::ptrdiff_t>(cfg.population);
  // Each patient owns its random streams, so the thread count cannot change the output.
#pragma omp parallel for schedule(static) num_threads(numkit::kernels::threads())
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    slots[static_cast<std::size_t>(i)] = generate_patient(cfg, world, static_cast<std::size_t>(i));
  }
  std::vector<ehr::RawPatient> out;
  for (auto& s : slots) {
    if (s) out.push_back(std::move(*s));
  }
  return out;
}

std::vector<ehr::RawPatient> generate_pretrain_corpus(const GeneratorConfig& world, const PretrainCorpusConfig& cfg) {
  GeneratorConfig gen = world;
  gen.seed = cfg.seed;
  gen.population = cfg.patients;
  auto corpus = generate_population(gen);
  const auto codes = generator_codes(gen);
  std::set<std::string> dropped;
  if (cfg.drop_every > 0) {
    for (std::size_t i = 0; i < codes.size(); ++i) {
      if (i % cfg.drop_every == cfg.drop_every - 1) dropped.insert(codes[i]);
    }
  }
  std::vector<std::string> extra;
  for (std::size_t i = 0; i < cfg.extra_codes; ++i) extra.push_back(numbered("px_ext", i));
  std::poisson_distribution<int> extra_count(std::max(1e-12, cfg.extra_code_rate));
  for (std::size_t pi = 0; pi < corpus.size(); ++pi) {
    Rng rng(derive_seed(cfg.seed ^ 0xE7C0DEULL, pi));
    for (auto& v : corpus[pi].visits) {
      std::erase_if(v.codes, [&](const std::string& c) { return dropped.contains(c); });
      if (!extra.empty()) {
        const int n = extra_count(rng);
        for (int j = 0; j < n; ++j) v.codes.push_back(extra[rng() % extra.size()]);
      }
      std::sort(v.codes.begin(), v.codes.end());
      v.codes.erase(std::unique(v.codes.begin(), v.codes.end()), v.codes.end());
    }
  }
  return corpus;
}

}  // namespace traceseq::cohort
