#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "traceseq/autoencoder/autoencoder.hpp"
#include "traceseq/cohort/split.hpp"
#include "traceseq/ehr/vectorize.hpp"
#include "traceseq/numkit/adadelta.hpp"
#include "traceseq/numkit/binder.hpp"
#include "traceseq/numkit/gru.hpp"
#include "traceseq/numkit/param.hpp"

namespace traceseq::predictor {

using numkit::Binder;
using numkit::DenseArray;
using numkit::Mode;
using numkit::ParameterSet;
using numkit::Rng;
using numkit::Var;

enum class Variant { kTrace, kTraceBase, kRace, kRaceBase, kLr, kMlp, kRnn, kBirnn };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);  // ConfigError on unknown names
const std::vector<Variant>& all_variants();

// TRACE, TRACE_base, RACE, RACE_base: built on the pre-trained encoder.
bool uses_autoencoder(Variant v);
// TRACE, RACE: code-history RNN and joint attention.
bool uses_code_history(Variant v);
autoencoder::VisitEncoderKind visit_encoder_of(Variant v);

// One patient ready for any model: the assembled visit sequence plus the
// count vector used by LR/MLP.
struct PatientExample {
  std::string id;
  int label = 0;
  cohort::Split split = cohort::Split::kTrain;
  std::vector<ehr::VisitVector> sequence;
  DenseArray counts;
};

// Occurrences of each code and observation across the sequence, followed by
// the last visit's demographics and numerics.
DenseArray count_features(const std::vector<ehr::VisitVector>& sequence, const ehr::FeatureSpace& space);

struct ModelConfig {
  Variant variant = Variant::kTrace;
  autoencoder::Dims dims;  // feature layout and encoder sizes; visit_encoder follows the variant
  std::size_t d_m = 128;   // code embedding width
  std::size_t d_att = 128;
  std::size_t mlp_hidden = 128;
};

namespace names {
inline const std::string kCodeEmbedding = "code_history.embedding";
inline const std::string kCodeGru = "code_history.gru";
inline const std::string kAttention = "attention";
inline const std::string kOutput = "output";
inline const std::string kMlpHidden = "mlp.hidden";
inline const std::string kVisitFc = "rnn.visit_fc";
inline const std::string kForwardGru = "rnn.forward";
inline const std::string kBackwardGru = "rnn.backward";
}  // namespace names

// Intermediate values of one forward pass; valid while the tape lives.
struct ForwardTrace {
  Var patient;                       // e^p (autoencoder variants)
  std::vector<Var> code_states;      // h_t^m
  Var alpha;                         // [1 x T] joint attention (code-history variants)
  Var context;                       // c
  std::vector<Var> visit_attention;  // per-visit ñ x ñ maps (transformer variants)
  Var last_state;                    // RNN/BiRNN head input
};

class Predictor {
 public:
  explicit Predictor(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  Variant variant() const { return cfg_.variant; }
  const autoencoder::Autoencoder& encoder() const { return encoder_; }

  // Fresh initialization of every parameter of the variant.
  void init(ParameterSet& params, Rng& rng) const;
  std::size_t count_dim() const { return cfg_.dims.n(); }
  std::size_t context_dim() const;

  // {h_t^m}: m_t = x_t W_m fed through the code GRU from a zero state.
  std::vector<Var> encode_code_history(Binder& bind, const std::vector<ehr::VisitVector>& sequence) const;
  // alpha = softmax_t(u^T tanh(W_g g_t + b_g)) with g_t = [e^p; h_t^m];
  // returns alpha [1 x T] and the stacked g [T x 2 d_h].
  std::pair<Var, Var> joint_attention(Binder& bind, Var patient, const std::vector<Var>& code_states) const;

  // Logit of the positive class.
  Var logit(Binder& bind, const PatientExample& example, Mode mode, Rng& rng, ForwardTrace* trace = nullptr) const;
  // Mean BCE of sigmoid(logit) against the label.
  Var loss(Binder& bind, const PatientExample& example, Mode mode, Rng& rng) const;

 private:
  ModelConfig cfg_;
  autoencoder::Autoencoder encoder_;
  numkit::GruCell code_gru_;
  numkit::GruCell forward_gru_;
  numkit::GruCell backward_gru_;
};

// Pre-trained inputs for fine-tuning.
struct Pretrained {
  const ParameterSet* autoencoder = nullptr;  // encoder half is copied
  const DenseArray* code_embedding = nullptr;  // aligned W_m, OOV rows zero
};

// Initializes params for the variant and overwrites the encoder and W_m from
// the pre-trained inputs. Throws MissingPrerequisite naming the stage when a
// required input is absent, ConfigError on shape mismatch.
ParameterSet initial_parameters(const Predictor& model, const Pretrained& pretrained, std::uint64_t seed);

// SHA-256 over the encoder half (embed.*, encoder.*) of a parameter set.
std::string encoder_hash(const ParameterSet& params);

// sigmoid(logit) for each example in eval mode, parallel over patients.
std::vector<double> predict(const Predictor& model, ParameterSet& params,
                            const std::vector<const PatientExample*>& examples);

struct EpochRecord {
  std::size_t epoch = 0;  // 0 = before any update
  double train_loss = 0.0;
  double valid_auprc = 0.0;
  double valid_nll = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 100;
  numkit::AdadeltaConfig optimizer;
  std::uint64_t seed = 1;
  std::function<void(const EpochRecord&)> on_epoch;  // optional progress hook
};

struct Metrics {
  std::string variant;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  double auprc_valid = 0.0;
  double auprc_test = 0.0;
  double nll_test = 0.0;
  double wall_clock = 0.0;  // seconds
};

struct TrainResult {
  ParameterSet best_params;
  std::vector<EpochRecord> history;
  Metrics metrics;
  std::string initial_encoder_hash;  // encoder hash at step 0
};

// Mean-BCE training with Adadelta; the snapshot with the best validation
// AUPRC (earliest on ties) is kept and scored on the test split.
TrainResult train_model(const Predictor& model, ParameterSet params, const std::vector<PatientExample>& examples,
                        const TrainConfig& cfg);

std::string metrics_json(const Metrics& m, bool include_wall_clock = true);
std::string history_csv(const std::vector<EpochRecord>& history);

}  // namespace traceseq::predictor
