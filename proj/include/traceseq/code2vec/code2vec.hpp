#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "traceseq/ehr/record.hpp"
#include "traceseq/ehr/vocab.hpp"
#include "traceseq/numkit/adadelta.hpp"
#include "traceseq/numkit/param.hpp"

namespace traceseq::code2vec {

// One visit's codes paired with the codes of its neighbouring visits.
struct WindowInstance {
  std::vector<std::size_t> visit_codes;    // sorted, distinct
  std::vector<std::size_t> context_codes;  // union over visits within the window, sorted
};

// patients[p][t] holds the code indices of visit t. Instances with an empty
// context are skipped.
std::vector<WindowInstance> build_visit_windows(const std::vector<std::vector<std::vector<std::size_t>>>& patients,
                                                std::size_t window);

// Maps a raw corpus onto `vocab` (unknown codes dropped) before windowing.
std::vector<WindowInstance> build_visit_windows(const std::vector<ehr::RawPatient>& corpus,
                                                const ehr::Vocabulary& vocab, std::size_t window);

struct Med2VecConfig {
  std::size_t dim = 128;
  std::size_t epochs = 10;
  std::size_t batch_size = 100;
  numkit::AdadeltaConfig optimizer;
  std::uint64_t seed = 1;
};

struct CodeEmbeddingTable {
  ehr::Vocabulary vocab;
  numkit::DenseArray matrix;  // |vocab| x dim
};

struct Med2VecResult {
  CodeEmbeddingTable table;
  numkit::ParameterSet params;       // embedding, hidden bias and output layer
  std::vector<double> epoch_losses;  // mean loss before training, then after each epoch
};

inline constexpr const char* kEmbeddingParam = "code2vec.embedding";

// Visit representation relu(sum of the visit's embedding rows + b); a softmax
// layer on top predicts the normalized context-code distribution.
Med2VecResult train_code_embeddings(const std::vector<WindowInstance>& instances, const ehr::Vocabulary& vocab,
                                    const Med2VecConfig& cfg);

double mean_window_loss(numkit::ParameterSet& params, const std::vector<WindowInstance>& instances);

// Experiment code index -> pre-training row, or nullopt for OOV codes.
struct VocabularyAlignment {
  std::vector<std::string> experiment_codes;
  std::vector<std::optional<std::size_t>> pretrain_rows;

  std::size_t size() const { return experiment_codes.size(); }
  std::size_t oov_count() const;
};

VocabularyAlignment align_vocabularies(const ehr::Vocabulary& experiment, const ehr::Vocabulary& pretrain);

std::string alignment_json(const VocabularyAlignment& alignment);
VocabularyAlignment parse_alignment(const std::string& text);

// |experiment| x dim matrix whose OOV rows are zero; the initial value of the
// fine-tuned W_m.
numkit::DenseArray aligned_embedding(const CodeEmbeddingTable& table, const VocabularyAlignment& alignment);

// m = W_m x over the experiment vocabulary. Throws ConfigError when the
// alignment does not cover the experiment vocabulary.
numkit::DenseArray embed_codes(const numkit::DenseArray& x, const CodeEmbeddingTable& table,
                               const VocabularyAlignment& alignment);

void save_embeddings(const std::filesystem::path& dir, const Med2VecResult& result,
                     const VocabularyAlignment& alignment, std::uint64_t seed);

struct LoadedEmbeddings {
  CodeEmbeddingTable table;
  VocabularyAlignment alignment;
};
LoadedEmbeddings load_embeddings(const std::filesystem::path& dir);

}  // namespace traceseq::code2vec
