#include "traceseq/autoencoder/autoencoder.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "traceseq/errors.hpp"
#include "traceseq/numkit/kernels.hpp"
#include "traceseq/numkit/ops.hpp"

namespace traceseq::autoencoder {

namespace ops = numkit::ops;

namespace {

std::string tf(const std::string& leaf) { return names::kTransformer + "." + leaf; }

void add_dense(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  params.add(prefix + ".weight", numkit::glorot_uniform(in, out, rng));
  params.add(prefix + ".bias", DenseArray({out}, 0.0));
}

Var dense(Binder& bind, const std::string& prefix, Var x) {
  return ops::add_bias(ops::matmul(x, bind(prefix + ".weight")), bind(prefix + ".bias"));
}

DenseArray segment(const DenseArray& v, std::size_t offset, std::size_t length) {
  DenseArray out({length}, 0.0);
  for (std::size_t i = 0; i < length; ++i) out[i] = v[offset + i];
  return out;
}

// Multi-hot divided by its count; empty when nothing is set.
bool normalized(DenseArray& v) {
  double total = 0.0;
  for (double x : v.values()) total += x;
  if (total <= 0.0) return false;
  for (auto& x : v.values()) x /= total;
  return true;
}

}  // namespace

Dims Dims::for_space(const ehr::FeatureSpace& space) {
  Dims d;
  d.codes = space.code_count();
  d.observations = space.observation_count();
  d.demographics = space.demographic_count();
  d.numerics = 2;
  return d;
}

std::string visit_encoder_name(VisitEncoderKind kind) {
  return kind == VisitEncoderKind::kTransformer ? "transformer" : "dense";
}

Autoencoder::Autoencoder(Dims dims)
    : dims_(dims),
      encoder_gru_(names::kEncoderGru, dims.d_emb, dims.d_h),
      decoder_gru_(names::kDecoderGru, dims.d_h, dims.d_h) {
  if (dims_.codes == 0) throw ConfigError("autoencoder: empty code vocabulary");
  if (dims_.n_tilde == 0 || dims_.d_z == 0 || dims_.d_emb == 0 || dims_.d_h == 0 || dims_.d_ff == 0) {
    throw ConfigError("autoencoder: dimensions must be positive");
  }
  if (!(dims_.dropout >= 0.0 && dims_.dropout < 1.0)) throw ConfigError("autoencoder: dropout must be in [0,1)");
  if (dims_.visit_encoder == VisitEncoderKind::kTransformer && dims_.d_emb < 2) {
    throw ConfigError("autoencoder: layer norm needs d_emb >= 2");
  }
}

bool Autoencoder::is_encoder_param(const std::string& name) {
  return name.rfind("embed.", 0) == 0 || name.rfind("encoder.", 0) == 0;
}

void Autoencoder::init_encoder(ParameterSet& params, Rng& rng) const {
  const auto& d = dims_;
  params.add(names::kWx, numkit::glorot_uniform(d.n(), d.d_z, rng));
  params.add(names::kWDown, numkit::glorot_uniform(d.n_tilde, d.n(), rng));
  if (d.visit_encoder == VisitEncoderKind::kTransformer) {
    params.add(tf("w_q"), numkit::glorot_uniform(d.d_z, d.d_emb, rng));
    params.add(tf("w_k"), numkit::glorot_uniform(d.d_z, d.d_emb, rng));
    params.add(tf("w_v"), numkit::glorot_uniform(d.d_z, d.d_emb, rng));
    if (d.d_z != d.d_emb) params.add(tf("w_proj"), numkit::glorot_uniform(d.d_z, d.d_emb, rng));
    params.add(tf("ln1.gain"), DenseArray({d.d_emb}, 1.0));
    params.add(tf("ln1.bias"), DenseArray({d.d_emb}, 0.0));
    add_dense(params, tf("ffn.inner"), d.d_emb, d.d_ff, rng);
    add_dense(params, tf("ffn.outer"), d.d_ff, d.d_emb, rng);
    params.add(tf("ln2.gain"), DenseArray({d.d_emb}, 1.0));
    params.add(tf("ln2.bias"), DenseArray({d.d_emb}, 0.0));
  } else {
    add_dense(params, names::kDense, d.d_z, d.d_emb, rng);
  }
  encoder_gru_.init(params, rng);
}

void Autoencoder::init_decoder(ParameterSet& params, Rng& rng) const {
  const auto& d = dims_;
  decoder_gru_.init(params, rng);
  add_dense(params, names::kHeads + ".codes", d.d_h, d.codes, rng);
  if (d.observations > 0) add_dense(params, names::kHeads + ".observations", d.d_h, d.observations, rng);
  if (d.demographics > 0) add_dense(params, names::kHeads + ".demographics", d.d_h, d.demographics, rng);
  add_dense(params, names::kHeads + ".numerics", d.d_h, d.numerics, rng);
}

void Autoencoder::init(ParameterSet& params, Rng& rng) const {
  init_encoder(params, rng);
  init_decoder(params, rng);
}

Var Autoencoder::embed_and_downsize(Binder& bind, Var x_prime) const {
  if (x_prime.value().rank() != 1 || x_prime.size() != dims_.n()) {
    throw DimensionError("embed_and_downsize: input " + numkit::shape_string(x_prime.shape()) + " vs n=" +
                         std::to_string(dims_.n()));
  }
  return ops::project_scaled_rows(bind(names::kWDown), bind(names::kWx), x_prime);
}

TransformerOutput Autoencoder::transformer_encode(Binder& bind, Var z_tilde, Mode mode, Rng& rng) const {
  const auto& d = dims_;
  if (z_tilde.shape() != numkit::Shape{d.n_tilde, d.d_z}) {
    throw DimensionError("transformer_encode: input " + numkit::shape_string(z_tilde.shape()) + " vs [" +
                         std::to_string(d.n_tilde) + "x" + std::to_string(d.d_z) + "]");
  }
  const Var q = ops::matmul(z_tilde, bind(tf("w_q")));
  const Var k = ops::matmul(z_tilde, bind(tf("w_k")));
  const Var v = ops::matmul(z_tilde, bind(tf("w_v")));
  const Var scores = ops::scale(ops::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d.d_emb)));
  const Var attention = ops::softmax_rows(scores);
  const Var residual = d.d_z == d.d_emb ? z_tilde : ops::matmul(z_tilde, bind(tf("w_proj")));
  const Var s1 = ops::layer_norm_rows(ops::add(residual, ops::matmul(attention, v)), bind(tf("ln1.gain")),
                                      bind(tf("ln1.bias")));
  Var inner = ops::relu(dense(bind, tf("ffn.inner"), s1));
  inner = ops::dropout(inner, d.dropout, mode, rng);
  const Var ffn = dense(bind, tf("ffn.outer"), inner);
  const Var x = ops::layer_norm_rows(ops::add(s1, ffn), bind(tf("ln2.gain")), bind(tf("ln2.bias")));
  return {x, attention};
}

Var Autoencoder::visit_vector(Binder& bind, Var x_prime, Mode mode, Rng& rng, Var* attention) const {
  const Var z_tilde = embed_and_downsize(bind, x_prime);
  if (dims_.visit_encoder == VisitEncoderKind::kDense) {
    return ops::relu(dense(bind, names::kDense, ops::mean_pool_rows(z_tilde)));
  }
  auto out = transformer_encode(bind, z_tilde, mode, rng);
  if (attention) *attention = out.attention;
  return ops::mean_pool_rows(out.x);
}

EncodedSequence Autoencoder::encode(Binder& bind, const std::vector<ehr::VisitVector>& sequence, Mode mode,
                                    Rng& rng) const {
  if (sequence.empty()) throw ValidationError("encode: empty visit sequence");
  EncodedSequence out;
  for (const auto& visit : sequence) {
    Var attention;
    out.visits.push_back(visit_vector(bind, bind.tape().constant(visit.concat()), mode, rng, &attention));
    if (dims_.visit_encoder == VisitEncoderKind::kTransformer) out.attention.push_back(attention);
  }
  out.patient = numkit::gru_sequence(encoder_gru_.bind(bind), out.visits).back();
  return out;
}

ReconstructionLoss Autoencoder::decode_and_loss(Binder& bind, Var patient,
                                                const std::vector<ehr::VisitVector>& targets) const {
  if (targets.empty()) throw ValidationError("decode_and_loss: empty target sequence");
  const auto& d = dims_;
  const auto gru = decoder_gru_.bind(bind);
  Var state = bind.tape().constant(DenseArray({d.d_h}, 0.0));

  ReconstructionLoss out;
  std::size_t visits_with_obs = 0;
  std::vector<Var> per_visit;
  for (const auto& target : targets) {
    if (target.x.size() != d.codes || target.d.size() != d.observations + d.demographics + d.numerics) {
      throw DimensionError("decode_and_loss: target visit does not match the feature layout");
    }
    state = numkit::gru_step(gru, state, patient);
    std::vector<Var> terms;

    DenseArray codes = target.x;
    if (!normalized(codes)) throw ValidationError("decode_and_loss: visit without codes");
    terms.push_back(ops::loss(ops::LossKind::kCeSoftmax, dense(bind, names::kHeads + ".codes", state), codes));
    out.heads.codes += terms.back().item();

    if (d.observations > 0) {
      DenseArray obs = segment(target.d, 0, d.observations);
      if (normalized(obs)) {
        terms.push_back(
            ops::loss(ops::LossKind::kCeSoftmax, dense(bind, names::kHeads + ".observations", state), obs));
        out.heads.observations += terms.back().item();
        ++visits_with_obs;
      }
    }
    if (d.demographics > 0) {
      const Var p = ops::sigmoid(dense(bind, names::kHeads + ".demographics", state));
      terms.push_back(ops::loss(ops::LossKind::kBce, p, segment(target.d, d.observations, d.demographics)));
      out.heads.demographics += terms.back().item();
    }
    terms.push_back(ops::loss(ops::LossKind::kMse, dense(bind, names::kHeads + ".numerics", state),
                              segment(target.d, d.observations + d.demographics, d.numerics)));
    out.heads.numerics += terms.back().item();
    per_visit.push_back(ops::add_n(terms));
  }
  const double T = static_cast<double>(targets.size());
  out.total = ops::scale(ops::add_n(per_visit), 1.0 / T);
  out.heads.codes /= T;
  out.heads.demographics /= T;
  out.heads.numerics /= T;
  if (visits_with_obs > 0) out.heads.observations /= static_cast<double>(visits_with_obs);
  return out;
}

ReconstructionLoss Autoencoder::loss(Binder& bind, const std::vector<ehr::VisitVector>& sequence, Mode mode,
                                     Rng& rng) const {
  const auto encoded = encode(bind, sequence, mode, rng);
  return decode_and_loss(bind, encoded.patient, sequence);
}

// ---- pre-training -------------------------------------------------------

MeanLoss mean_loss(const Autoencoder& model, ParameterSet& params,
                   const std::vector<std::vector<ehr::VisitVector>>& sequences) {
  const auto n = static_cast<std::ptrdiff_t>(sequences.size());
  std::vector<double> total(sequences.size());
  std::vector<HeadLosses> heads(sequences.size());
#pragma omp parallel for schedule(dynamic) num_threads(numkit::kernels::threads())
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    Tape tape;
    Binder bind(tape, params);
    Rng unused(0);
    const auto l = model.loss(bind, sequences[static_cast<std::size_t>(i)], Mode::kEval, unused);
    total[static_cast<std::size_t>(i)] = l.total.item();
    heads[static_cast<std::size_t>(i)] = l.heads;
  }
  MeanLoss out;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    out.total += total[i];
    out.heads.codes += heads[i].codes;
    out.heads.observations += heads[i].observations;
    out.heads.demographics += heads[i].demographics;
    out.heads.numerics += heads[i].numerics;
  }
  if (!sequences.empty()) {
    const double m = static_cast<double>(sequences.size());
    out.total /= m;
    out.heads.codes /= m;
    out.heads.observations /= m;
    out.heads.demographics /= m;
    out.heads.numerics /= m;
  }
  return out;
}

void check_finite(const ParameterSet& params, const std::string& context) {
  for (const auto& [name, p] : params) {
    if (!p.value.all_finite()) throw DataError(context + ": non-finite values in parameter " + name);
    if (!p.grad.all_finite()) throw DataError(context + ": non-finite gradient for parameter " + name);
  }
}

PretrainResult pretrain_autoencoder(const Autoencoder& model, ParameterSet params,
                                    const std::vector<std::vector<ehr::VisitVector>>& train,
                                    const std::vector<std::vector<ehr::VisitVector>>& valid,
                                    const PretrainConfig& cfg) {
  if (train.empty()) throw ValidationError("autoencoder pre-training needs a non-empty train split");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
  const auto& selection = valid.empty() ? train : valid;

  PretrainResult result;
  {
    const auto t = mean_loss(model, params, train);
    EpochLog e0{0, t.total, mean_loss(model, params, selection).total, t.heads};
    result.log.push_back(e0);
    if (cfg.on_epoch) cfg.on_epoch(e0);
  }
  double best = result.log.back().valid_loss;
  result.best_params = params.snapshot();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(numkit::derive_seed(cfg.seed, 1));
  Rng dropout_rng(numkit::derive_seed(cfg.seed, 2));
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double weight = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        Tape tape;
        Binder bind(tape, params);
        const auto l = model.loss(bind, train[order[i]], Mode::kTrain, dropout_rng);
        const double value = l.total.item();
        if (!std::isfinite(value)) {
          check_finite(params, "epoch " + std::to_string(epoch));
          throw DataError("epoch " + std::to_string(epoch) + ": non-finite reconstruction loss (codes " +
                          std::to_string(l.heads.codes) + ", observations " + std::to_string(l.heads.observations) +
                          ", demographics " + std::to_string(l.heads.demographics) + ", numerics " +
                          std::to_string(l.heads.numerics) + ")");
        }
        tape.backward(l.total, weight);
        log.train_loss += value;
        log.train_heads.codes += l.heads.codes;
        log.train_heads.observations += l.heads.observations;
        log.train_heads.demographics += l.heads.demographics;
        log.train_heads.numerics += l.heads.numerics;
      }
      check_finite(params, "epoch " + std::to_string(epoch));
      numkit::adadelta_step(params, cfg.optimizer);
    }
    const double m = static_cast<double>(train.size());
    log.train_loss /= m;
    log.train_heads.codes /= m;
    log.train_heads.observations /= m;
    log.train_heads.demographics /= m;
    log.train_heads.numerics /= m;
    log.valid_loss = mean_loss(model, params, selection).total;
    result.log.push_back(log);
    if (cfg.on_epoch) cfg.on_epoch(log);
    if (log.valid_loss < best) {
      best = log.valid_loss;
      result.best_epoch = epoch;
      result.best_params = params.snapshot();
    }
  }
  result.final_params = std::move(params);
  return result;
}

std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  out << "epoch,train_loss,valid_loss,codes_loss,observations_loss,demographics_loss,numerics_loss\n";
  char buf[256];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", e.epoch, e.train_loss, e.valid_loss,
                  e.train_heads.codes, e.train_heads.observations, e.train_heads.demographics, e.train_heads.numerics);
    out << buf;
  }
  return out.str();
}

}  // namespace traceseq::autoencoder
