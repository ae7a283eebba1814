#include "traceseq/cli/config.hpp"

#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>
#include <toml.hpp>

#include "traceseq/errors.hpp"
#include "traceseq/io.hpp"
#include "traceseq/predictor/predictor.hpp"

namespace traceseq::cli {

namespace {

std::string show(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

// One TOML table being read; every key must be claimed before finish().
class Section {
 public:
  Section(const toml::table* table, std::string path) : table_(table), path_(std::move(path)) {}

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError(field(key) + ": " + what);
  }

  const toml::node* get(const std::string& key) {
    seen_.insert(key);
    return table_ ? table_->get(key) : nullptr;
  }

  void size(const std::string& key, std::size_t& dst, std::size_t lo = 0,
            std::size_t hi = std::numeric_limits<std::size_t>::max()) {
    const auto* n = get(key);
    if (!n) return;
    const auto v = n->value<std::int64_t>();
    if (!n->is_integer() || !v) fail(key, "expected an integer");
    if (*v < 0 || static_cast<std::size_t>(*v) < lo || static_cast<std::size_t>(*v) > hi) {
      fail(key, std::to_string(*v) + " is outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    dst = static_cast<std::size_t>(*v);
  }

  void seed(const std::string& key, std::uint64_t& dst) {
    std::size_t v = dst;
    size(key, v);
    dst = v;
  }

  // Range [lo, hi], or [lo, hi) when hi_open.
  void real(const std::string& key, double& dst, double lo = -std::numeric_limits<double>::infinity(),
            double hi = std::numeric_limits<double>::infinity(), bool hi_open = false) {
    const auto* n = get(key);
    if (!n) return;
    if (!n->is_number()) fail(key, "expected a number");
    const double v = *n->value<double>();
    if (!std::isfinite(v) || v < lo || v > hi || (hi_open && v == hi)) {
      fail(key, show(v) + " is outside [" + show(lo) + ", " + show(hi) + (hi_open ? ")" : "]"));
    }
    dst = v;
  }

  void string(const std::string& key, std::string& dst) {
    const auto* n = get(key);
    if (!n) return;
    if (!n->is_string()) fail(key, "expected a string");
    dst = *n->value<std::string>();
  }

  void strings(const std::string& key, std::vector<std::string>& dst) {
    const auto* n = get(key);
    if (!n) return;
    const auto* arr = n->as_array();
    if (!arr) fail(key, "expected an array of strings");
    dst.clear();
    for (const auto& e : *arr) {
      if (!e.is_string()) fail(key, "expected an array of strings");
      dst.push_back(*e.value<std::string>());
    }
  }

  void reals(const std::string& key, std::vector<double>& dst) {
    const auto* n = get(key);
    if (!n) return;
    const auto* arr = n->as_array();
    if (!arr) fail(key, "expected an array of numbers");
    dst.clear();
    for (const auto& e : *arr) {
      if (!e.is_number() || !std::isfinite(*e.value<double>())) fail(key, "expected an array of finite numbers");
      dst.push_back(*e.value<double>());
    }
  }

  Section sub(const std::string& key) {
    const auto* n = get(key);
    if (n && !n->is_table()) fail(key, "expected a table");
    return Section(n ? n->as_table() : nullptr, field(key));
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [k, v] : *table_) {
      const std::string key(k.str());
      if (!seen_.contains(key)) fail(key, "unknown key");
    }
  }

 private:
  const toml::table* table_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

ExperimentConfig parse_config(const std::string& toml_text) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config: TOML syntax error at line " << e.source().begin.line << ": " << e.description();
    throw ConfigError(msg.str());
  }

  ExperimentConfig cfg;
  Section top(&root, "");
  top.seed("seed", cfg.seed);
  {
    std::string out = cfg.out.string();
    top.string("out", out);
    cfg.out = out;
  }
  {
    auto s = top.sub("generator");
    auto& g = cfg.generator;
    s.seed("seed", g.seed);
    s.seed("world_seed", g.world_seed);
    s.size("population", g.population, 1);
    s.size("num_codes", g.num_codes, 1);
    s.size("num_observations", g.num_observations);
    s.real("mean_visits", g.mean_visits, 1.0);
    s.size("max_generated_visits", g.max_generated_visits, 2);
    s.real("mean_gap_days", g.mean_gap_days, 1.0);
    s.size("num_topics", g.num_topics, 1);
    s.real("codes_per_visit", g.codes_per_visit, 1.0);
    s.real("observations_per_visit", g.observations_per_visit, 0.0);
    s.real("topic_concentration", g.topic_concentration, 1e-9);
    s.real("progression_boost", g.progression_boost, 0.0);
    s.strings("races", g.races);
    s.reals("race_probs", g.race_probs);
    s.strings("genders", g.genders);
    s.reals("gender_probs", g.gender_probs);
    s.real("min_age", g.min_age, 1e-9);
    s.real("max_age", g.max_age, 1e-9);
    auto h = s.sub("hazard");
    h.real("intercept", g.hazard.intercept);
    h.reals("risk_weights", g.hazard.risk_weights);
    h.real("interaction", g.hazard.interaction);
    h.real("age_weight", g.hazard.age_weight);
    h.real("decay", g.hazard.decay, 0.0, 1.0);
    h.finish();
    s.finish();
  }
  {
    auto s = top.sub("pretrain_corpus");
    auto& p = cfg.pretrain_corpus;
    s.seed("seed", p.seed);
    s.size("patients", p.patients, 1);
    s.size("extra_codes", p.extra_codes);
    s.size("drop_every", p.drop_every);
    s.real("extra_code_rate", p.extra_code_rate, 0.0);
    s.finish();
  }
  {
    auto s = top.sub("cohort");
    auto& c = cfg.cohort;
    s.seed("seed", c.seed);
    s.size("controls_per_case", c.controls_per_case, 1);
    s.size("max_cases", c.max_cases);
    s.size("min_count", cfg.min_count, 1);
    s.size("max_visits", cfg.max_visits, 1);
    std::vector<std::string> labels(cfg.label_codes.begin(), cfg.label_codes.end());
    s.strings("label_codes", labels);
    cfg.label_codes = {labels.begin(), labels.end()};
    s.real("train", c.fractions.train, 0.0, 1.0);
    s.real("valid", c.fractions.valid, 0.0, 1.0);
    s.real("test", c.fractions.test, 0.0, 1.0);
    s.finish();
  }
  {
    auto s = top.sub("codes");
    s.size("dim", cfg.codes.dim, 1);
    s.size("window", cfg.codes.window, 1);
    s.size("epochs", cfg.codes.epochs);
    s.size("batch_size", cfg.codes.batch_size, 1);
    s.finish();
  }
  {
    auto s = top.sub("autoencoder");
    auto& a = cfg.autoencoder;
    s.size("n_tilde", a.n_tilde, 1);
    s.size("d_z", a.d_z, 1);
    s.size("d_emb", a.d_emb, 1);
    s.size("d_h", a.d_h, 1);
    s.size("d_ff", a.d_ff, 1);
    s.real("dropout", a.dropout, 0.0, 1.0, true);
    s.size("epochs", a.epochs);
    s.size("batch_size", a.batch_size, 1);
    s.strings("visit_encoders", a.visit_encoders);
    s.finish();
  }
  {
    auto s = top.sub("train");
    auto& t = cfg.train;
    s.strings("variants", t.variants);
    s.size("epochs", t.epochs);
    s.size("batch_size", t.batch_size, 1);
    s.size("d_att", t.d_att, 1);
    s.size("mlp_hidden", t.mlp_hidden, 1);
    s.finish();
  }
  {
    auto s = top.sub("optimizer");
    s.real("lr", cfg.optimizer.lr, 1e-12);
    s.real("rho", cfg.optimizer.rho, 0.0, 1.0, true);
    s.real("eps", cfg.optimizer.eps, 1e-300);
    s.finish();
  }
  {
    auto s = top.sub("export");
    s.string("variant", cfg.export_.variant);
    s.size("cases", cfg.export_.cases, 1);
    s.finish();
  }
  top.finish();
  validate(cfg);
  return cfg;
}

void validate(const ExperimentConfig& cfg) {
  try {
    cohort::validate(cfg.generator);
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("generator: ") + e.what());
  }
  try {
    cohort::split_counts(0, cfg.cohort.fractions);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("cohort: ") + e.what());
  }
  if (cfg.autoencoder.visit_encoders.empty()) throw ConfigError("autoencoder.visit_encoders: must not be empty");
  for (const auto& k : cfg.autoencoder.visit_encoders) {
    if (k != "transformer" && k != "dense") {
      throw ConfigError("autoencoder.visit_encoders: unknown visit encoder '" + k + "' (transformer|dense)");
    }
  }
  if (cfg.train.variants.empty()) throw ConfigError("train.variants: must not be empty");
  std::set<std::string> seen;
  for (const auto& v : cfg.train.variants) {
    try {
      predictor::parse_variant(v);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("train.variants: ") + e.what());
    }
    if (!seen.insert(v).second) throw ConfigError("train.variants: '" + v + "' listed twice");
  }
  try {
    if (!predictor::uses_autoencoder(predictor::parse_variant(cfg.export_.variant))) {
      throw ConfigError("'" + cfg.export_.variant + "' has no patient embedding (use TRACE, TRACE_base, RACE or RACE_base)");
    }
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("export.variant: ") + e.what());
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config: file " + path.string() + " does not exist");
  return parse_config(io::read_file(path));
}

std::string config_json(const ExperimentConfig& cfg) {
  const auto& g = cfg.generator;
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["generator"] = {{"seed", g.seed},
                    {"world_seed", g.world_seed},
                    {"population", g.population},
                    {"num_codes", g.num_codes},
                    {"num_observations", g.num_observations},
                    {"mean_visits", g.mean_visits},
                    {"max_generated_visits", g.max_generated_visits},
                    {"mean_gap_days", g.mean_gap_days},
                    {"num_topics", g.num_topics},
                    {"codes_per_visit", g.codes_per_visit},
                    {"observations_per_visit", g.observations_per_visit},
                    {"topic_concentration", g.topic_concentration},
                    {"progression_boost", g.progression_boost},
                    {"races", g.races},
                    {"race_probs", g.race_probs},
                    {"genders", g.genders},
                    {"gender_probs", g.gender_probs},
                    {"min_age", g.min_age},
                    {"max_age", g.max_age},
                    {"hazard",
                     {{"intercept", g.hazard.intercept},
                      {"risk_weights", g.hazard.risk_weights},
                      {"interaction", g.hazard.interaction},
                      {"age_weight", g.hazard.age_weight},
                      {"decay", g.hazard.decay}}}};
  const auto& p = cfg.pretrain_corpus;
  j["pretrain_corpus"] = {{"seed", p.seed},
                          {"patients", p.patients},
                          {"extra_codes", p.extra_codes},
                          {"drop_every", p.drop_every},
                          {"extra_code_rate", p.extra_code_rate}};
  const auto& c = cfg.cohort;
  j["cohort"] = {{"seed", c.seed},
                 {"controls_per_case", c.controls_per_case},
                 {"max_cases", c.max_cases},
                 {"min_count", cfg.min_count},
                 {"max_visits", cfg.max_visits},
                 {"label_codes", cfg.label_codes},
                 {"train", c.fractions.train},
                 {"valid", c.fractions.valid},
                 {"test", c.fractions.test}};
  j["codes"] = {{"dim", cfg.codes.dim},
                {"window", cfg.codes.window},
                {"epochs", cfg.codes.epochs},
                {"batch_size", cfg.codes.batch_size}};
  const auto& a = cfg.autoencoder;
  j["autoencoder"] = {{"n_tilde", a.n_tilde}, {"d_z", a.d_z},         {"d_emb", a.d_emb},
                      {"d_h", a.d_h},         {"d_ff", a.d_ff},       {"dropout", a.dropout},
                      {"epochs", a.epochs},   {"batch_size", a.batch_size}, {"visit_encoders", a.visit_encoders}};
  const auto& t = cfg.train;
  j["train"] = {{"variants", t.variants},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"d_att", t.d_att},
                {"mlp_hidden", t.mlp_hidden}};
  j["optimizer"] = {{"lr", cfg.optimizer.lr}, {"rho", cfg.optimizer.rho}, {"eps", cfg.optimizer.eps}};
  j["export"] = {{"variant", cfg.export_.variant}, {"cases", cfg.export_.cases}};
  return j.dump(2) + "\n";
}

std::string config_hash(const ExperimentConfig& cfg) { return io::sha256_hex(config_json(cfg)); }

}  // namespace traceseq::cli
