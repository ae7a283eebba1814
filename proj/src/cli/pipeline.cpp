#include "traceseq/cli/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <numeric>
#include <nlohmann/json.hpp>
#include <optional>
#include <ostream>
#include <sstream>

#include "traceseq/autoencoder/autoencoder.hpp"
#include "traceseq/code2vec/code2vec.hpp"
#include "traceseq/cohort/cohort.hpp"
#include "traceseq/errors.hpp"
#include "traceseq/eval/metrics.hpp"
#include "traceseq/io.hpp"
#include "traceseq/numkit/checkpoint.hpp"
#include "traceseq/numkit/kernels.hpp"
#include "traceseq/numkit/rng.hpp"

namespace traceseq::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using predictor::Variant;

namespace {

const std::vector<std::pair<Stage, std::string>>& stage_table() {
  static const std::vector<std::pair<Stage, std::string>> table = {
      {Stage::kGenCohort, "gen-cohort"},
      {Stage::kPretrainCodes, "pretrain-codes"},
      {Stage::kPretrainAutoencoder, "pretrain-autoencoder"},
      {Stage::kTrain, "train"},
      {Stage::kEvaluate, "evaluate"},
      {Stage::kExportAttention, "export-attention"},
      {Stage::kExportEmbeddings, "export-embeddings"}};
  return table;
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

// Records inputs and outputs of one stage run and writes its manifest.
class Manifest {
 public:
  Manifest(const ExperimentConfig& cfg, Stage stage, std::string scope = "")
      : cfg_(cfg), stage_(stage), scope_(std::move(scope)), start_(std::chrono::steady_clock::now()) {}

  void input(const fs::path& p) { inputs_.push_back(p); }
  void output(const fs::path& p, StageResult& result) {
    outputs_.push_back(p);
    result.outputs.push_back(p);
  }

  void write(StageResult& result) const {
    const Layout layout{cfg_.out};
    auto rel = [&](const fs::path& p) { return fs::relative(p, cfg_.out).generic_string(); };
    ordered_json j;
    j["stage"] = stage_name(stage_);
    if (!scope_.empty()) j["scope"] = scope_;
    j["config_hash"] = config_hash(cfg_);
    j["seed"] = cfg_.seed;
    ordered_json in = ordered_json::object(), out = ordered_json::object();
    for (const auto& p : inputs_) in[rel(p)] = artifact_hash(p);
    for (const auto& p : outputs_) out[rel(p)] = artifact_hash(p);
    j["inputs"] = in;
    j["outputs"] = out;
    j["wall_time"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const auto path =
        layout.manifests() / (stage_name(stage_) + (scope_.empty() ? "" : "." + scope_) + ".json");
    io::write_atomic(path, j.dump(2) + "\n");
    result.manifests.push_back(path);
  }

 private:
  const ExperimentConfig& cfg_;
  Stage stage_;
  std::string scope_;
  std::chrono::steady_clock::time_point start_;
  std::vector<fs::path> inputs_;
  std::vector<fs::path> outputs_;
};

void say(const RunOptions& opt, const std::string& line) {
  if (opt.log) *opt.log << line << '\n' << std::flush;
}

fs::path checkpoint_bin(const fs::path& manifest) {
  auto p = manifest;
  return p.replace_extension(".bin");
}

void require(const fs::path& p, const std::string& stage, const std::string& what) {
  if (!fs::exists(p)) throw MissingPrerequisite(stage, what + " not found at " + p.string());
}

std::vector<Variant> selected_variants(const RunOptions& opt) {
  const auto& names = opt.variants.empty() ? opt.config.train.variants : opt.variants;
  std::vector<Variant> out;
  for (const auto& n : names) out.push_back(predictor::parse_variant(n));
  return out;
}

autoencoder::Dims encoder_dims(const ExperimentConfig& cfg, const ehr::FeatureSpace& space,
                               autoencoder::VisitEncoderKind kind) {
  auto d = autoencoder::Dims::for_space(space);
  d.n_tilde = cfg.autoencoder.n_tilde;
  d.d_z = cfg.autoencoder.d_z;
  d.d_emb = cfg.autoencoder.d_emb;
  d.d_h = cfg.autoencoder.d_h;
  d.d_ff = cfg.autoencoder.d_ff;
  d.dropout = cfg.autoencoder.dropout;
  d.visit_encoder = kind;
  return d;
}

autoencoder::VisitEncoderKind parse_kind(const std::string& name) {
  if (name == "transformer") return autoencoder::VisitEncoderKind::kTransformer;
  if (name == "dense") return autoencoder::VisitEncoderKind::kDense;
  throw ConfigError("unknown visit encoder '" + name + "'");
}

std::vector<std::vector<ehr::VisitVector>> sequences_of(const Dataset& data, cohort::Split split) {
  std::vector<std::vector<ehr::VisitVector>> out;
  for (const auto& e : data.examples) {
    if (e.split == split) out.push_back(e.sequence);
  }
  return out;
}

// ---- stages -------------------------------------------------------------

StageResult gen_cohort(const RunOptions& opt) {
  const auto& cfg = opt.config;
  const Layout layout{cfg.out};
  StageResult result;
  Manifest manifest(cfg, Stage::kGenCohort);

  say(opt, "[gen-cohort] generating " + std::to_string(cfg.generator.population) + " patients");
  const auto population = cohort::generate_population(cfg.generator);
  const auto built = cohort::build_cohort(population, cfg.cohort);
  const auto space = ehr::build_feature_space(built.patients, cfg.min_count, cfg.label_codes);

  ehr::CohortFile file;
  file.header.generator_seed = cfg.generator.seed;
  file.header.min_count = cfg.min_count;
  file.header.label_codes = cfg.label_codes;
  file.header.code_vocab_hash = space.codes.hash();
  file.header.observation_vocab_hash = space.observations.hash();
  file.patients = built.patients;
  std::array<std::array<std::size_t, 2>, 3> counts{};
  for (const auto& p : built.patients) {
    const auto split = built.split.at(p.id);
    file.splits.push_back(cohort::split_name(split));
    ++counts[static_cast<std::size_t>(split)][static_cast<std::size_t>(p.label)];
  }
  ehr::write_cohort(layout.cohort(), file);
  manifest.output(layout.cohort(), result);
  io::write_atomic(layout.matches(), cohort::match_table_csv(built.match_table));
  manifest.output(layout.matches(), result);

  ordered_json summary;
  summary["eligible_population"] = population.size();
  summary["patients"] = built.patients.size();
  summary["cases"] = built.match_table.size() / std::max<std::size_t>(1, cfg.cohort.controls_per_case);
  summary["codes"] = space.code_count();
  summary["observations"] = space.observation_count();
  for (auto s : {cohort::Split::kTrain, cohort::Split::kValid, cohort::Split::kTest}) {
    const auto& c = counts[static_cast<std::size_t>(s)];
    summary["splits"][cohort::split_name(s)] = {{"patients", c[0] + c[1]}, {"cases", c[1]}};
  }
  io::write_atomic(layout.cohort_summary(), summary.dump(2) + "\n");
  manifest.output(layout.cohort_summary(), result);
  say(opt, "[gen-cohort] " + std::to_string(built.patients.size()) + " patients, |C|=" +
               std::to_string(space.code_count()) + ", |obs|=" + std::to_string(space.observation_count()));
  manifest.write(result);
  return result;
}

StageResult pretrain_codes(const RunOptions& opt) {
  const auto& cfg = opt.config;
  const Layout layout{cfg.out};
  require(layout.cohort(), "gen-cohort", "cohort file");
  StageResult result;
  Manifest manifest(cfg, Stage::kPretrainCodes);
  manifest.input(layout.cohort());

  const auto file = ehr::read_cohort(layout.cohort());
  const auto space = ehr::feature_space_of(file);
  const auto corpus = cohort::generate_pretrain_corpus(cfg.generator, cfg.pretrain_corpus);
  const auto vocab = ehr::build_vocabularies(corpus, 1, cfg.label_codes).codes;
  const auto windows = code2vec::build_visit_windows(corpus, vocab, cfg.codes.window);
  say(opt, "[pretrain-codes] " + std::to_string(windows.size()) + " windows over " + std::to_string(vocab.size()) +
               " pre-training codes");

  code2vec::Med2VecConfig mc;
  mc.dim = cfg.codes.dim;
  mc.epochs = cfg.codes.epochs;
  mc.batch_size = cfg.codes.batch_size;
  mc.optimizer = cfg.optimizer;
  mc.seed = numkit::derive_seed(cfg.seed, 11);
  const auto trained = code2vec::train_code_embeddings(windows, vocab, mc);
  const auto alignment = code2vec::align_vocabularies(space.codes, vocab);
  code2vec::save_embeddings(layout.codes(), trained, alignment, cfg.seed);

  std::ostringstream losses;
  losses << "epoch,loss\n";
  for (std::size_t e = 0; e < trained.epoch_losses.size(); ++e) {
    losses << e << ',' << fmt("%.10g", trained.epoch_losses[e]) << '\n';
  }
  io::write_atomic(layout.codes() / "training_log.csv", losses.str());
  for (const char* f : {"code2vec.json", "code2vec.bin", "pretrain_vocab.txt", "alignment.json", "training_log.csv"}) {
    manifest.output(layout.codes() / f, result);
  }
  say(opt, "[pretrain-codes] loss " + fmt("%.5f", trained.epoch_losses.front()) + " -> " +
               fmt("%.5f", trained.epoch_losses.back()) + ", " + std::to_string(alignment.oov_count()) + " of " +
               std::to_string(alignment.size()) + " experiment codes OOV");
  manifest.write(result);
  return result;
}

StageResult pretrain_autoencoder(const RunOptions& opt) {
  const auto& cfg = opt.config;
  const Layout layout{cfg.out};
  require(layout.cohort(), "gen-cohort", "cohort file");
  const auto data = load_dataset(cfg);
  const auto train = sequences_of(data, cohort::Split::kTrain);
  const auto valid = sequences_of(data, cohort::Split::kValid);
  StageResult result;
  for (const auto& kind_name : cfg.autoencoder.visit_encoders) {
    const auto kind = parse_kind(kind_name);
    Manifest manifest(cfg, Stage::kPretrainAutoencoder, kind_name);
    manifest.input(layout.cohort());
    const autoencoder::Autoencoder model(encoder_dims(cfg, data.space, kind));
    numkit::ParameterSet params;
    const std::uint64_t stream = kind == autoencoder::VisitEncoderKind::kTransformer ? 0 : 1;
    numkit::Rng rng(numkit::derive_seed(cfg.seed, 21 + stream));
    model.init(params, rng);

    autoencoder::PretrainConfig pc;
    pc.epochs = cfg.autoencoder.epochs;
    pc.batch_size = cfg.autoencoder.batch_size;
    pc.optimizer = cfg.optimizer;
    pc.seed = numkit::derive_seed(cfg.seed, 31 + stream);
    pc.on_epoch = [&](const autoencoder::EpochLog& e) {
      say(opt, "[pretrain-autoencoder] " + kind_name + " epoch " + std::to_string(e.epoch) + "/" +
                   std::to_string(pc.epochs) + " train " + fmt("%.4f", e.train_loss) + " valid " +
                   fmt("%.4f", e.valid_loss));
    };
    const auto trained = autoencoder::pretrain_autoencoder(model, std::move(params), train, valid, pc);
    const auto dir = layout.autoencoder(kind_name);
    numkit::save_checkpoint(trained.best_params, dir / "checkpoint.json", cfg.seed);
    io::write_atomic(dir / "training_log.csv", autoencoder::training_log_csv(trained.log));
    manifest.output(dir / "checkpoint.json", result);
    manifest.output(dir / "checkpoint.bin", result);
    manifest.output(dir / "training_log.csv", result);
    say(opt, "[pretrain-autoencoder] " + kind_name + " best epoch " + std::to_string(trained.best_epoch));
    manifest.write(result);
  }
  return result;
}

StageResult train(const RunOptions& opt) {
  const auto& cfg = opt.config;
  const Layout layout{cfg.out};
  require(layout.cohort(), "gen-cohort", "cohort file");
  const auto data = load_dataset(cfg);
  StageResult result;
  for (auto variant : selected_variants(opt)) {
    const auto name = predictor::variant_name(variant);
    Manifest manifest(cfg, Stage::kTrain, name);
    manifest.input(layout.cohort());
    const predictor::Predictor model(model_config(cfg, data.space, variant));

    std::optional<numkit::LoadedCheckpoint> ae;
    std::optional<numkit::DenseArray> w_m;
    predictor::Pretrained pretrained;
    if (predictor::uses_autoencoder(variant)) {
      const auto kind = autoencoder::visit_encoder_name(predictor::visit_encoder_of(variant));
      const auto ckpt = layout.autoencoder(kind) / "checkpoint.json";
      require(ckpt, "pretrain-autoencoder", kind + " autoencoder checkpoint for " + name);
      ae = numkit::load_checkpoint(ckpt);
      pretrained.autoencoder = &ae->params;
      manifest.input(ckpt);
      manifest.input(checkpoint_bin(ckpt));
    }
    if (predictor::uses_code_history(variant)) {
      require(layout.codes() / "code2vec.json", "pretrain-codes", "code embedding table");
      const auto loaded = code2vec::load_embeddings(layout.codes());
      w_m = code2vec::aligned_embedding(loaded.table, loaded.alignment);
      pretrained.code_embedding = &*w_m;
      manifest.input(layout.codes() / "code2vec.json");
      manifest.input(layout.codes() / "code2vec.bin");
      manifest.input(layout.codes() / "alignment.json");
    }
    auto params = predictor::initial_parameters(model, pretrained, cfg.seed);
    if (ae && predictor::encoder_hash(params) != predictor::encoder_hash(ae->params)) {
      throw ContractError(name + ": encoder does not start from the pre-trained checkpoint");
    }

    predictor::TrainConfig tc;
    tc.epochs = cfg.train.epochs;
    tc.batch_size = cfg.train.batch_size;
    tc.optimizer = cfg.optimizer;
    tc.seed = cfg.seed;
    tc.on_epoch = [&](const predictor::EpochRecord& e) {
      say(opt, "[train] " + name + " epoch " + std::to_string(e.epoch) + "/" + std::to_string(tc.epochs) +
                   " loss " + fmt("%.4f", e.train_loss) + " valid AUPRC " + fmt("%.4f", e.valid_auprc));
    };
    const auto trained = predictor::train_model(model, std::move(params), data.examples, tc);
    const auto dir = layout.model(name);
    numkit::save_checkpoint(trained.best_params, dir / "checkpoint.json", cfg.seed);
    io::write_atomic(dir / "metrics.json", predictor::metrics_json(trained.metrics));
    io::write_atomic(dir / "history.csv", predictor::history_csv(trained.history));
    for (const char* f : {"checkpoint.json", "checkpoint.bin", "metrics.json", "history.csv"}) {
      manifest.output(dir / f, result);
    }
    say(opt, "[train] " + name + " best epoch " + std::to_string(trained.metrics.best_epoch) + ", test AUPRC " +
                 fmt("%.4f", trained.metrics.auprc_test) + ", test NLL " + fmt("%.4f", trained.metrics.nll_test));
    manifest.write(result);
  }
  return result;
}

struct LoadedModel {
  predictor::Predictor model;
  numkit::ParameterSet params;
  fs::path checkpoint;
};

LoadedModel load_model(const ExperimentConfig& cfg, const Dataset& data, Variant variant) {
  const Layout layout{cfg.out};
  const auto name = predictor::variant_name(variant);
  const auto ckpt = layout.model(name) / "checkpoint.json";
  require(ckpt, "train", name + " checkpoint");
  LoadedModel out{predictor::Predictor(model_config(cfg, data.space, variant)), numkit::load_checkpoint(ckpt).params,
                  ckpt};
  numkit::ParameterSet expected;
  numkit::Rng rng(0);
  out.model.init(expected, rng);
  for (const auto& [n, p] : expected) {
    if (!out.params.contains(n) || out.params.at(n).value.shape() != p.value.shape()) {
      throw ConfigError(name + " checkpoint does not match the configured model (parameter " + n + ")");
    }
  }
  return out;
}

std::vector<const predictor::PatientExample*> split_of(const Dataset& data, cohort::Split split) {
  std::vector<const predictor::PatientExample*> out;
  for (const auto& e : data.examples) {
    if (e.split == split) out.push_back(&e);
  }
  return out;
}

std::vector<int> labels(const std::vector<const predictor::PatientExample*>& set) {
  std::vector<int> out;
  for (const auto* e : set) out.push_back(e->label);
  return out;
}

StageResult evaluate(const RunOptions& opt) {
  const auto& cfg = opt.config;
  const Layout layout{cfg.out};
  require(layout.cohort(), "gen-cohort", "cohort file");
  const auto data = load_dataset(cfg);
  const auto valid = split_of(data, cohort::Split::kValid);
  const auto test = split_of(data, cohort::Split::kTest);
  if (test.empty()) throw ValidationError("evaluate: the test split is empty");
  StageResult result;
  std::ostringstream summary;
  summary << "variant,auprc_valid,auprc_test,nll_valid,nll_test\n";
  auto metric = [](auto fn, const std::vector<double>& s, const std::vector<int>& y) -> std::optional<double> {
    const auto pos = std::count(y.begin(), y.end(), 1);
    if (pos == 0 || pos == static_cast<std::ptrdiff_t>(y.size())) return std::nullopt;
    return fn(s, y);
  };
  auto cell = [](std::optional<double> v) { return v ? fmt("%.10g", *v) : std::string(); };
  for (auto variant : selected_variants(opt)) {
    const auto name = predictor::variant_name(variant);
    Manifest manifest(cfg, Stage::kEvaluate, name);
    auto loaded = load_model(cfg, data, variant);
    manifest.input(layout.cohort());
    manifest.input(loaded.checkpoint);
    manifest.input(checkpoint_bin(loaded.checkpoint));

    const auto s_valid = predictor::predict(loaded.model, loaded.params, valid);
    const auto s_test = predictor::predict(loaded.model, loaded.params, test);
    const auto y_valid = labels(valid), y_test = labels(test);
    const auto auprc_valid = metric(eval::auprc, s_valid, y_valid);
    const auto auprc_test = metric(eval::auprc, s_test, y_test);
    const auto nll_valid = valid.empty() ? std::nullopt : std::optional(eval::neg_log_likelihood(s_valid, y_valid));
    const auto nll_test = eval::neg_log_likelihood(s_test, y_test);

    ordered_json j;
    j["variant"] = name;
    j["seed"] = cfg.seed;
    j["test_patients"] = test.size();
    j["test_cases"] = std::count(y_test.begin(), y_test.end(), 1);
    j["auprc_valid"] = auprc_valid ? ordered_json(*auprc_valid) : ordered_json();
    j["auprc_test"] = auprc_test ? ordered_json(*auprc_test) : ordered_json();
    j["nll_valid"] = nll_valid ? ordered_json(*nll_valid) : ordered_json();
    j["nll_test"] = nll_test;
    const auto dir = layout.model(name);
    io::write_atomic(dir / "evaluation.json", j.dump(2) + "\n");
    std::ostringstream scores;
    scores << "id,label,score\n";
    for (std::size_t i = 0; i < test.size(); ++i) {
      scores << test[i]->id << ',' << test[i]->label << ',' << fmt("%.17g", s_test[i]) << '\n';
    }
    io::write_atomic(dir / "scores_test.csv", scores.str());
    manifest.output(dir / "evaluation.json", result);
    manifest.output(dir / "scores_test.csv", result);
    manifest.write(result);
    summary << name << ',' << cell(auprc_valid) << ',' << cell(auprc_test) << ',' << cell(nll_valid) << ','
            << fmt("%.10g", nll_test) << '\n';
    say(opt, "[evaluate] " + name + " test AUPRC " + cell(auprc_test) + " NLL " + fmt("%.4f", nll_test));
  }
  const auto summary_path = cfg.out / "evaluation" / "summary.csv";
  io::write_atomic(summary_path, summary.str());
  result.outputs.push_back(summary_path);
  return result;
}

Variant export_variant(const ExperimentConfig& cfg) { return predictor::parse_variant(cfg.export_.variant); }

StageResult export_attention(const RunOptions& opt) {
  const auto& cfg = opt.config;
  const Layout layout{cfg.out};
  const auto variant = export_variant(cfg);
  const auto name = predictor::variant_name(variant);
  if (predictor::visit_encoder_of(variant) != autoencoder::VisitEncoderKind::kTransformer) {
    throw ConfigError("export.variant: " + name + " has no transformer attention to export");
  }
  require(layout.cohort(), "gen-cohort", "cohort file");
  const auto data = load_dataset(cfg);
  auto loaded = load_model(cfg, data, variant);
  StageResult result;
  Manifest manifest(cfg, Stage::kExportAttention, name);
  manifest.input(layout.cohort());
  manifest.input(loaded.checkpoint);
  manifest.input(checkpoint_bin(loaded.checkpoint));

  std::vector<const predictor::PatientExample*> cases;
  for (const auto* e : split_of(data, cohort::Split::kTest)) {
    if (e->label == 1) cases.push_back(e);
  }
  if (cases.empty()) throw ValidationError("export-attention: no test cases to export");
  const auto scores = predictor::predict(loaded.model, loaded.params, cases);
  std::vector<std::size_t> order(cases.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : cases[a]->id < cases[b]->id;
  });
  order.resize(std::min(order.size(), cfg.export_.cases));

  const auto& w_down = loaded.params.at(autoencoder::names::kWDown).value;
  std::ostringstream index;
  index << "id,label,score,visits\n";
  for (auto i : order) {
    const auto& e = *cases[i];
    numkit::Tape tape;
    numkit::Binder bind(tape, loaded.params);
    numkit::Rng unused(0);
    predictor::ForwardTrace trace;
    loaded.model.logit(bind, e, numkit::Mode::kEval, unused, &trace);
    std::vector<eval::AttentionMap> maps;
    std::ostringstream visits;
    visits << "visit_index,alpha\n";
    for (std::size_t t = 0; t < e.sequence.size(); ++t) {
      maps.push_back(eval::backproject_attention(trace.visit_attention[t].value(), w_down,
                                                 eval::active_features(e.sequence[t].concat()), t));
      const double alpha = predictor::uses_code_history(variant) ? trace.alpha.value()[t] : 1.0;
      visits << t << ',' << fmt("%.17g", alpha) << '\n';
    }
    const auto map_path = layout.attention() / (e.id + ".csv");
    const auto visit_path = layout.attention() / (e.id + "_visits.csv");
    io::write_atomic(map_path, eval::attention_csv(maps, data.space));
    io::write_atomic(visit_path, visits.str());
    manifest.output(map_path, result);
    manifest.output(visit_path, result);
    index << e.id << ',' << e.label << ',' << fmt("%.17g", scores[i]) << ',' << e.sequence.size() << '\n';
    say(opt, "[export-attention] " + e.id + " score " + fmt("%.4f", scores[i]) + ", " +
                 std::to_string(e.sequence.size()) + " visits");
  }
  io::write_atomic(layout.attention() / "index.csv", index.str());
  manifest.output(layout.attention() / "index.csv", result);
  manifest.write(result);
  return result;
}

StageResult export_embeddings(const RunOptions& opt) {
  const auto& cfg = opt.config;
  const Layout layout{cfg.out};
  const auto variant = export_variant(cfg);
  const auto name = predictor::variant_name(variant);
  require(layout.cohort(), "gen-cohort", "cohort file");
  const auto data = load_dataset(cfg);
  auto loaded = load_model(cfg, data, variant);
  StageResult result;
  Manifest manifest(cfg, Stage::kExportEmbeddings, name);
  manifest.input(layout.cohort());
  manifest.input(loaded.checkpoint);
  manifest.input(checkpoint_bin(loaded.checkpoint));

  const auto test = split_of(data, cohort::Split::kTest);
  std::vector<eval::EmbeddingRow> rows(test.size());
  const auto n = static_cast<std::ptrdiff_t>(test.size());
#pragma omp parallel for schedule(dynamic) num_threads(numkit::kernels::threads())
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& e = *test[static_cast<std::size_t>(i)];
    numkit::Tape tape;
    numkit::Binder bind(tape, loaded.params);
    numkit::Rng unused(0);
    const auto encoded = loaded.model.encoder().encode(bind, e.sequence, numkit::Mode::kEval, unused);
    const auto& v = encoded.patient.value().values();
    rows[static_cast<std::size_t>(i)] = {e.id, e.label, std::vector<double>(v.begin(), v.end())};
  }
  const auto path = layout.embeddings(name);
  io::write_atomic(path, eval::embeddings_csv(std::move(rows)));
  manifest.output(path, result);
  say(opt, "[export-embeddings] " + std::to_string(test.size()) + " test patients -> " + path.string());
  manifest.write(result);
  return result;
}

}  // namespace

std::string stage_name(Stage s) {
  for (const auto& [k, n] : stage_table()) {
    if (k == s) return n;
  }
  throw ConfigError("unknown stage");
}

Stage parse_stage(const std::string& name) {
  for (const auto& [k, n] : stage_table()) {
    if (n == name) return k;
  }
  throw ConfigError("unknown stage '" + name + "'");
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> all = [] {
    std::vector<Stage> v;
    for (const auto& [k, n] : stage_table()) v.push_back(k);
    return v;
  }();
  return all;
}

Dataset load_dataset(const ExperimentConfig& cfg) {
  const Layout layout{cfg.out};
  require(layout.cohort(), "gen-cohort", "cohort file");
  Dataset data{ehr::read_cohort(layout.cohort()), {}, {}, 0};
  data.space = ehr::feature_space_of(data.file);
  for (std::size_t i = 0; i < data.file.patients.size(); ++i) {
    const auto& raw = data.file.patients[i];
    if (i >= data.file.splits.size() || data.file.splits[i].empty()) {
      throw DataError("cohort patient " + raw.id + " has no split assignment");
    }
    const auto rec = ehr::index_patient(raw, data.space);
    if (rec.visits.empty()) {
      ++data.dropped;
      continue;
    }
    predictor::PatientExample e;
    e.id = raw.id;
    e.label = raw.label;
    e.split = cohort::parse_split(data.file.splits[i]);
    e.sequence = ehr::assemble_sequence(rec, data.space, cfg.max_visits);
    e.counts = predictor::count_features(e.sequence, data.space);
    data.examples.push_back(std::move(e));
  }
  return data;
}

predictor::ModelConfig model_config(const ExperimentConfig& cfg, const ehr::FeatureSpace& space, Variant variant) {
  predictor::ModelConfig mc;
  mc.variant = variant;
  mc.dims = encoder_dims(cfg, space, predictor::visit_encoder_of(variant));
  mc.d_m = cfg.codes.dim;
  mc.d_att = cfg.train.d_att;
  mc.mlp_hidden = cfg.train.mlp_hidden;
  return mc;
}

std::string artifact_hash(const fs::path& path) {
  if (path.filename() == "metrics.json") {
    auto j = ordered_json::parse(io::read_file(path));
    j.erase("wall_clock");
    return io::sha256_hex(j.dump(2) + "\n");
  }
  return io::sha256_file(path);
}

StageResult run_stage(Stage stage, const RunOptions& options) {
  validate(options.config);
  switch (stage) {
    case Stage::kGenCohort:
      return gen_cohort(options);
    case Stage::kPretrainCodes:
      return pretrain_codes(options);
    case Stage::kPretrainAutoencoder:
      return pretrain_autoencoder(options);
    case Stage::kTrain:
      return train(options);
    case Stage::kEvaluate:
      return evaluate(options);
    case Stage::kExportAttention:
      return export_attention(options);
    case Stage::kExportEmbeddings:
      return export_embeddings(options);
  }
  throw ConfigError("unknown stage");
}

}  // namespace traceseq::cli
