#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "traceseq/ehr/vectorize.hpp"
#include "traceseq/numkit/adadelta.hpp"
#include "traceseq/numkit/binder.hpp"
#include "traceseq/numkit/gru.hpp"
#include "traceseq/numkit/param.hpp"
#include "traceseq/numkit/tape.hpp"

namespace traceseq::autoencoder {

using numkit::Binder;
using numkit::DenseArray;
using numkit::Mode;
using numkit::ParameterSet;
using numkit::Rng;
using numkit::Tape;
using numkit::Var;

// How a visit's downsized embedding Z~ becomes the visit vector v_t.
enum class VisitEncoderKind {
  kTransformer,  // one encoder block, one head, then mean-pool over the ñ rows
  kDense,        // mean-pool Z~, then a relu fully-connected layer
};

struct Dims {
  // Feature layout, taken from the cohort's feature space.
  std::size_t codes = 0;
  std::size_t observations = 0;
  std::size_t demographics = 0;  // races + genders
  std::size_t numerics = 2;

  std::size_t n_tilde = 100;
  std::size_t d_z = 128;
  std::size_t d_emb = 128;
  std::size_t d_h = 128;
  std::size_t d_ff = 512;
  double dropout = 0.5;
  VisitEncoderKind visit_encoder = VisitEncoderKind::kTransformer;

  std::size_t n() const { return codes + observations + demographics + numerics; }
  static Dims for_space(const ehr::FeatureSpace& space);
};

// Parameter names. The encoder half (embed.*, encoder.*) is shared with the
// predictor; decoder.* is only used during pre-training.
namespace names {
inline const std::string kWx = "embed.w_x";
inline const std::string kWDown = "embed.w_down";
inline const std::string kTransformer = "encoder.transformer";
inline const std::string kDense = "encoder.fc";
inline const std::string kEncoderGru = "encoder.gru";
inline const std::string kDecoderGru = "decoder.gru";
inline const std::string kHeads = "decoder.head";
}  // namespace names

struct TransformerOutput {
  Var x;          // ñ x d_emb
  Var attention;  // ñ x ñ
};

struct EncodedSequence {
  std::vector<Var> visits;     // v_t
  Var patient;                 // e^p
  std::vector<Var> attention;  // per visit, empty for the dense encoder
};

struct HeadLosses {
  double codes = 0.0;
  double observations = 0.0;
  double demographics = 0.0;
  double numerics = 0.0;
};

struct ReconstructionLoss {
  Var total;         // mean over visits of the summed heads
  HeadLosses heads;  // each head's mean over visits (observation head over visits that have observations)
};

class Autoencoder {
 public:
  explicit Autoencoder(Dims dims);

  const Dims& dims() const { return dims_; }

  void init_encoder(ParameterSet& params, Rng& rng) const;
  void init_decoder(ParameterSet& params, Rng& rng) const;
  void init(ParameterSet& params, Rng& rng) const;

  // True for names belonging to the encoder half.
  static bool is_encoder_param(const std::string& name);

  // Z = W_x ⊙ x' (row i of W_x scaled by x'_i), Z~ = W~_z Z.
  Var embed_and_downsize(Binder& bind, Var x_prime) const;
  TransformerOutput transformer_encode(Binder& bind, Var z_tilde, Mode mode, Rng& rng) const;
  // v_t for one visit, through whichever visit encoder the dims select.
  Var visit_vector(Binder& bind, Var x_prime, Mode mode, Rng& rng, Var* attention = nullptr) const;
  EncodedSequence encode(Binder& bind, const std::vector<ehr::VisitVector>& sequence, Mode mode,
                         Rng& rng) const;
  ReconstructionLoss decode_and_loss(Binder& bind, Var patient,
                                     const std::vector<ehr::VisitVector>& targets) const;

  // Full pass: encode then decode against the same sequence.
  ReconstructionLoss loss(Binder& bind, const std::vector<ehr::VisitVector>& sequence, Mode mode,
                          Rng& rng) const;

 private:
  Dims dims_;
  numkit::GruCell encoder_gru_;
  numkit::GruCell decoder_gru_;
};

std::string visit_encoder_name(VisitEncoderKind kind);

// ---- pre-training -------------------------------------------------------

struct EpochLog;

struct PretrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 100;
  numkit::AdadeltaConfig optimizer;
  std::uint64_t seed = 1;
  std::function<void(const EpochLog&)> on_epoch;  // optional progress hook
};

struct EpochLog {
  std::size_t epoch = 0;  // 0 = before any update
  double train_loss = 0.0;
  double valid_loss = 0.0;
  HeadLosses train_heads;
};

struct PretrainResult {
  ParameterSet final_params;
  ParameterSet best_params;
  std::size_t best_epoch = 0;
  std::vector<EpochLog> log;
};

// Mean reconstruction loss over sequences in eval mode, evaluated in parallel
// across patients with a fixed-order reduction.
struct MeanLoss {
  double total = 0.0;
  HeadLosses heads;
};
MeanLoss mean_loss(const Autoencoder& model, ParameterSet& params,
                   const std::vector<std::vector<ehr::VisitVector>>& sequences);

PretrainResult pretrain_autoencoder(const Autoencoder& model, ParameterSet params,
                                    const std::vector<std::vector<ehr::VisitVector>>& train,
                                    const std::vector<std::vector<ehr::VisitVector>>& valid,
                                    const PretrainConfig& cfg);

std::string training_log_csv(const std::vector<EpochLog>& log);

// Throws DataError naming the first parameter or gradient holding a
// non-finite value, if any.
void check_finite(const ParameterSet& params, const std::string& context);

}  // namespace traceseq::autoencoder
