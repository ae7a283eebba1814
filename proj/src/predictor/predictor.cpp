#include "traceseq/predictor/predictor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "traceseq/errors.hpp"
#include "traceseq/eval/metrics.hpp"
#include "traceseq/numkit/checkpoint.hpp"
#include "traceseq/numkit/kernels.hpp"
#include "traceseq/numkit/ops.hpp"

namespace traceseq::predictor {

namespace ops = numkit::ops;
using numkit::Tape;

namespace {

const std::vector<std::pair<Variant, std::string>>& variant_table() {
  static const std::vector<std::pair<Variant, std::string>> table = {
      {Variant::kTrace, "TRACE"}, {Variant::kTraceBase, "TRACE_base"}, {Variant::kRace, "RACE"},
      {Variant::kRaceBase, "RACE_base"}, {Variant::kLr, "LR"}, {Variant::kMlp, "MLP"},
      {Variant::kRnn, "RNN"}, {Variant::kBirnn, "BiRNN"}};
  return table;
}

void add_dense(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  params.add(prefix + ".weight", numkit::glorot_uniform(in, out, rng));
  params.add(prefix + ".bias", DenseArray({out}, 0.0));
}

Var dense(Binder& bind, const std::string& prefix, Var x) {
  return ops::add_bias(ops::matmul(x, bind(prefix + ".weight")), bind(prefix + ".bias"));
}

autoencoder::Dims with_encoder(autoencoder::Dims dims, Variant v) {
  dims.visit_encoder = visit_encoder_of(v);
  return dims;
}

std::vector<Var> visit_inputs(Binder& bind, const std::vector<ehr::VisitVector>& sequence,
                              const std::string& fc) {
  std::vector<Var> out;
  out.reserve(sequence.size());
  for (const auto& v : sequence) out.push_back(ops::relu(dense(bind, fc, bind.tape().constant(v.concat()))));
  return out;
}

}  // namespace

std::string variant_name(Variant v) {
  for (const auto& [k, name] : variant_table()) {
    if (k == v) return name;
  }
  throw ConfigError("unknown variant");
}

Variant parse_variant(const std::string& name) {
  for (const auto& [k, n] : variant_table()) {
    if (n == name) return k;
  }
  throw ConfigError("unknown model variant '" + name + "'");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> all = [] {
    std::vector<Variant> v;
    for (const auto& [k, name] : variant_table()) v.push_back(k);
    return v;
  }();
  return all;
}

bool uses_autoencoder(Variant v) {
  return v == Variant::kTrace || v == Variant::kTraceBase || v == Variant::kRace || v == Variant::kRaceBase;
}

bool uses_code_history(Variant v) { return v == Variant::kTrace || v == Variant::kRace; }

autoencoder::VisitEncoderKind visit_encoder_of(Variant v) {
  return v == Variant::kRace || v == Variant::kRaceBase ? autoencoder::VisitEncoderKind::kDense
                                                         : autoencoder::VisitEncoderKind::kTransformer;
}

DenseArray count_features(const std::vector<ehr::VisitVector>& sequence, const ehr::FeatureSpace& space) {
  if (sequence.empty()) throw ValidationError("count_features: empty sequence");
  const std::size_t nc = space.code_count(), no = space.observation_count();
  DenseArray out({space.total_dim()}, 0.0);
  for (const auto& v : sequence) {
    if (v.x.size() != nc || v.d.size() != space.non_code_dim()) {
      throw DimensionError("count_features: visit vector does not match the feature space");
    }
    for (std::size_t i = 0; i < nc; ++i) out[i] += v.x[i];
    for (std::size_t i = 0; i < no; ++i) out[nc + i] += v.d[i];
  }
  const auto& last = sequence.back().d;
  for (std::size_t i = no; i < last.size(); ++i) out[nc + i] = last[i];
  return out;
}

Predictor::Predictor(ModelConfig cfg)
    : cfg_(cfg),
      encoder_(with_encoder(cfg.dims, cfg.variant)),
      code_gru_(names::kCodeGru, cfg.d_m, cfg.dims.d_h),
      forward_gru_(names::kForwardGru, cfg.dims.d_h, cfg.dims.d_h),
      backward_gru_(names::kBackwardGru, cfg.dims.d_h, cfg.dims.d_h) {
  cfg_.dims.visit_encoder = visit_encoder_of(cfg.variant);
  if (cfg_.dims.codes == 0) throw ConfigError("model needs a non-empty code vocabulary");
}

std::size_t Predictor::context_dim() const {
  const std::size_t d_h = cfg_.dims.d_h;
  switch (cfg_.variant) {
    case Variant::kTrace:
    case Variant::kRace:
      return 3 * d_h;
    case Variant::kTraceBase:
    case Variant::kRaceBase:
      return d_h;
    case Variant::kLr:
      return count_dim();
    case Variant::kMlp:
      return cfg_.mlp_hidden;
    case Variant::kRnn:
      return d_h;
    case Variant::kBirnn:
      return 2 * d_h;
  }
  return 0;
}

void Predictor::init(ParameterSet& params, Rng& rng) const {
  const std::size_t d_h = cfg_.dims.d_h;
  if (uses_autoencoder(cfg_.variant)) encoder_.init_encoder(params, rng);
  if (uses_code_history(cfg_.variant)) {
    params.add(names::kCodeEmbedding, numkit::glorot_uniform(cfg_.dims.codes, cfg_.d_m, rng));
    code_gru_.init(params, rng);
    params.add(names::kAttention + ".w_g", numkit::glorot_uniform(2 * d_h, cfg_.d_att, rng));
    params.add(names::kAttention + ".b_g", DenseArray({cfg_.d_att}, 0.0));
    params.add(names::kAttention + ".u", numkit::glorot_uniform(cfg_.d_att, 1, rng));
  }
  if (cfg_.variant == Variant::kMlp) add_dense(params, names::kMlpHidden, count_dim(), cfg_.mlp_hidden, rng);
  if (cfg_.variant == Variant::kRnn || cfg_.variant == Variant::kBirnn) {
    add_dense(params, names::kVisitFc, count_dim(), d_h, rng);
    forward_gru_.init(params, rng);
    if (cfg_.variant == Variant::kBirnn) backward_gru_.init(params, rng);
  }
  add_dense(params, names::kOutput, context_dim(), 1, rng);
}

std::vector<Var> Predictor::encode_code_history(Binder& bind, const std::vector<ehr::VisitVector>& sequence) const {
  if (sequence.empty()) throw ValidationError("encode_code_history: empty sequence");
  const Var w_m = bind(names::kCodeEmbedding);
  std::vector<Var> inputs;
  inputs.reserve(sequence.size());
  for (const auto& v : sequence) inputs.push_back(ops::matmul(bind.tape().constant(v.x), w_m));
  return numkit::gru_sequence(code_gru_.bind(bind), inputs);
}

std::pair<Var, Var> Predictor::joint_attention(Binder& bind, Var patient, const std::vector<Var>& code_states) const {
  if (code_states.empty()) throw ValidationError("joint_attention: no visits");
  std::vector<Var> g;
  g.reserve(code_states.size());
  for (const auto& h : code_states) g.push_back(ops::concat({patient, h}));
  const Var G = ops::stack_rows(g);
  const Var hidden = ops::tanh(ops::add_bias(ops::matmul(G, bind(names::kAttention + ".w_g")),
                                             bind(names::kAttention + ".b_g")));
  const Var scores = ops::matmul(hidden, bind(names::kAttention + ".u"));
  const Var alpha = ops::softmax_rows(ops::reshape(scores, {1, code_states.size()}));
  return {alpha, G};
}

Var Predictor::logit(Binder& bind, const PatientExample& example, Mode mode, Rng& rng, ForwardTrace* trace) const {
  if (example.sequence.empty()) throw ValidationError("patient " + example.id + " has an empty sequence");
  Var c;
  switch (cfg_.variant) {
    case Variant::kTrace:
    case Variant::kRace:
    case Variant::kTraceBase:
    case Variant::kRaceBase: {
      auto encoded = encoder_.encode(bind, example.sequence, mode, rng);
      c = encoded.patient;
      if (trace) {
        trace->patient = encoded.patient;
        trace->visit_attention = encoded.attention;
      }
      if (uses_code_history(cfg_.variant)) {
        auto states = encode_code_history(bind, example.sequence);
        auto [alpha, G] = joint_attention(bind, encoded.patient, states);
        const Var pooled = ops::reshape(ops::matmul(alpha, G), {2 * cfg_.dims.d_h});
        c = ops::concat({encoded.patient, pooled});
        if (trace) {
          trace->code_states = std::move(states);
          trace->alpha = alpha;
        }
      }
      break;
    }
    case Variant::kLr:
      c = bind.tape().constant(example.counts);
      break;
    case Variant::kMlp:
      c = ops::relu(dense(bind, names::kMlpHidden, bind.tape().constant(example.counts)));
      break;
    case Variant::kRnn:
    case Variant::kBirnn: {
      auto inputs = visit_inputs(bind, example.sequence, names::kVisitFc);
      c = numkit::gru_sequence(forward_gru_.bind(bind), inputs).back();
      if (cfg_.variant == Variant::kBirnn) {
        std::reverse(inputs.begin(), inputs.end());
        c = ops::concat({c, numkit::gru_sequence(backward_gru_.bind(bind), inputs).back()});
      }
      if (trace) trace->last_state = c;
      break;
    }
  }
  if (c.value().size() != context_dim()) {
    throw DimensionError("context width " + std::to_string(c.value().size()) + " != " + std::to_string(context_dim()));
  }
  if (trace) trace->context = c;
  return dense(bind, names::kOutput, c);
}

Var Predictor::loss(Binder& bind, const PatientExample& example, Mode mode, Rng& rng) const {
  const Var p = ops::sigmoid(logit(bind, example, mode, rng));
  return ops::loss(ops::LossKind::kBce, p, DenseArray::vector({static_cast<double>(example.label)}));
}

// ---- initialization -----------------------------------------------------

ParameterSet initial_parameters(const Predictor& model, const Pretrained& pretrained, std::uint64_t seed) {
  ParameterSet params;
  Rng rng(numkit::derive_seed(seed, 3));
  model.init(params, rng);
  const Variant v = model.variant();
  if (uses_autoencoder(v)) {
    if (!pretrained.autoencoder) {
      throw MissingPrerequisite("pretrain-autoencoder", "no " +
                                                            autoencoder::visit_encoder_name(visit_encoder_of(v)) +
                                                            " autoencoder checkpoint for " + variant_name(v));
    }
    for (auto& [name, p] : params) {
      if (!autoencoder::Autoencoder::is_encoder_param(name)) continue;
      if (!pretrained.autoencoder->contains(name)) {
        throw ConfigError("autoencoder checkpoint lacks parameter " + name);
      }
      const auto& src = pretrained.autoencoder->at(name).value;
      if (src.shape() != p.value.shape()) {
        throw ConfigError("autoencoder checkpoint parameter " + name + " has shape " +
                          numkit::shape_string(src.shape()) + ", model expects " +
                          numkit::shape_string(p.value.shape()));
      }
      p.value = src;
    }
  }
  if (uses_code_history(v)) {
    if (!pretrained.code_embedding) {
      throw MissingPrerequisite("pretrain-codes", "no code embedding for " + variant_name(v));
    }
    auto& w_m = params.at(names::kCodeEmbedding).value;
    if (pretrained.code_embedding->shape() != w_m.shape()) {
      throw ConfigError("code embedding has shape " + numkit::shape_string(pretrained.code_embedding->shape()) +
                        ", model expects " + numkit::shape_string(w_m.shape()));
    }
    w_m = *pretrained.code_embedding;
  }
  return params;
}

std::string encoder_hash(const ParameterSet& params) {
  ParameterSet subset;
  for (const auto& [name, p] : params) {
    if (autoencoder::Autoencoder::is_encoder_param(name)) subset.add(name, p.value);
  }
  return numkit::parameter_hash(subset);
}

// ---- training -----------------------------------------------------------

std::vector<double> predict(const Predictor& model, ParameterSet& params,
                            const std::vector<const PatientExample*>& examples) {
  std::vector<double> out(examples.size());
  const auto n = static_cast<std::ptrdiff_t>(examples.size());
#pragma omp parallel for schedule(dynamic) num_threads(numkit::kernels::threads())
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    Tape tape;
    Binder bind(tape, params);
    Rng unused(0);
    const double z = model.logit(bind, *examples[static_cast<std::size_t>(i)], Mode::kEval, unused).item();
    out[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(-z));
  }
  return out;
}

namespace {

std::vector<const PatientExample*> select(const std::vector<PatientExample>& examples, cohort::Split split) {
  std::vector<const PatientExample*> out;
  for (const auto& e : examples) {
    if (e.split == split) out.push_back(&e);
  }
  return out;
}

std::vector<int> labels_of(const std::vector<const PatientExample*>& set) {
  std::vector<int> out;
  out.reserve(set.size());
  for (const auto* e : set) out.push_back(e->label);
  return out;
}

bool both_classes(const std::vector<int>& labels) {
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  return pos > 0 && pos < static_cast<std::ptrdiff_t>(labels.size());
}

}  // namespace

TrainResult train_model(const Predictor& model, ParameterSet params, const std::vector<PatientExample>& examples,
                        const TrainConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
  const auto train = select(examples, cohort::Split::kTrain);
  if (train.empty()) throw ValidationError("training needs a non-empty train split");
  auto selection = select(examples, cohort::Split::kValid);
  const auto test = select(examples, cohort::Split::kTest);
  const auto train_labels = labels_of(train);
  auto selection_labels = labels_of(selection);
  // Without both classes in validation, model selection falls back to train.
  if (!both_classes(selection_labels)) {
    selection = train;
    selection_labels = train_labels;
  }
  if (!both_classes(selection_labels)) throw ValidationError("training data holds a single class");

  TrainResult result;
  result.initial_encoder_hash = encoder_hash(params);
  auto evaluate = [&](std::size_t epoch, double train_loss) {
    const auto scores = predict(model, params, selection);
    return EpochRecord{epoch, train_loss, eval::auprc(scores, selection_labels),
                       eval::neg_log_likelihood(scores, selection_labels)};
  };
  result.history.push_back(evaluate(0, eval::neg_log_likelihood(predict(model, params, train), train_labels)));
  if (cfg.on_epoch) cfg.on_epoch(result.history.back());
  double best = result.history.back().valid_auprc;
  std::size_t best_epoch = 0;
  result.best_params = params.snapshot();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(numkit::derive_seed(cfg.seed, 1));
  Rng dropout_rng(numkit::derive_seed(cfg.seed, 2));
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double total = 0.0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), s + cfg.batch_size);
      const double weight = 1.0 / static_cast<double>(e - s);
      for (std::size_t i = s; i < e; ++i) {
        Tape tape;
        Binder bind(tape, params);
        const Var l = model.loss(bind, *train[order[i]], Mode::kTrain, dropout_rng);
        if (!std::isfinite(l.item())) {
          autoencoder::check_finite(params, "epoch " + std::to_string(epoch));
          throw DataError("epoch " + std::to_string(epoch) + ": non-finite loss for patient " + train[order[i]]->id);
        }
        total += l.item();
        tape.backward(l, weight);
      }
      autoencoder::check_finite(params, "epoch " + std::to_string(epoch));
      numkit::adadelta_step(params, cfg.optimizer);
    }
    result.history.push_back(evaluate(epoch, total / static_cast<double>(train.size())));
    if (cfg.on_epoch) cfg.on_epoch(result.history.back());
    if (result.history.back().valid_auprc > best) {
      best = result.history.back().valid_auprc;
      best_epoch = epoch;
      result.best_params = params.snapshot();
    }
  }

  auto& m = result.metrics;
  m.variant = variant_name(model.variant());
  m.seed = cfg.seed;
  m.epochs = cfg.epochs;
  m.best_epoch = best_epoch;
  m.auprc_valid = best;
  if (!test.empty()) {
    const auto test_labels = labels_of(test);
    const auto scores = predict(model, result.best_params, test);
    m.nll_test = eval::neg_log_likelihood(scores, test_labels);
    m.auprc_test = both_classes(test_labels) ? eval::auprc(scores, test_labels) : std::nan("");
  } else {
    m.auprc_test = m.nll_test = std::nan("");
  }
  m.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::string metrics_json(const Metrics& m, bool include_wall_clock) {
  auto num = [](double v) -> nlohmann::json { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); };
  nlohmann::ordered_json j;
  j["variant"] = m.variant;
  j["seed"] = m.seed;
  j["epochs"] = m.epochs;
  j["best_epoch"] = m.best_epoch;
  j["auprc_valid"] = num(m.auprc_valid);
  j["auprc_test"] = num(m.auprc_test);
  j["nll_test"] = num(m.nll_test);
  if (include_wall_clock) j["wall_clock"] = m.wall_clock;
  return j.dump(2) + "\n";
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out << "epoch,train_loss,valid_auprc,valid_nll\n";
  char buf[160];
  for (const auto& e : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g\n", e.epoch, e.train_loss, e.valid_auprc, e.valid_nll);
    out << buf;
  }
  return out.str();
}

}  // namespace traceseq::predictor
