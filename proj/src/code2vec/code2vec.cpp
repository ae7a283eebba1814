#include "traceseq/code2vec/code2vec.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>

#include "traceseq/errors.hpp"
#include "traceseq/io.hpp"
#include "traceseq/numkit/checkpoint.hpp"
#include "traceseq/numkit/ops.hpp"

namespace traceseq::code2vec {

using numkit::DenseArray;
using numkit::Tape;
using numkit::Var;
using json = nlohmann::json;

namespace {

constexpr const char* kHiddenBias = "code2vec.hidden_bias";
constexpr const char* kOutWeight = "code2vec.out.weight";
constexpr const char* kOutBias = "code2vec.out.bias";

Var window_loss(Tape& tape, numkit::ParameterSet& params, const WindowInstance& inst) {
  const auto& emb = params.at(kEmbeddingParam);
  const std::size_t vocab = emb.value.rows();
  DenseArray x({vocab}, 0.0);
  for (auto i : inst.visit_codes) x[i] = 1.0;
  DenseArray target({vocab}, 0.0);
  for (auto i : inst.context_codes) target[i] = 1.0 / static_cast<double>(inst.context_codes.size());

  namespace ops = numkit::ops;
  Var hidden = ops::relu(
      ops::add(ops::matmul(tape.constant(std::move(x)), tape.parameter(params.at(kEmbeddingParam))),
               tape.parameter(params.at(kHiddenBias))));
  Var logits =
      ops::add(ops::matmul(hidden, tape.parameter(params.at(kOutWeight))), tape.parameter(params.at(kOutBias)));
  return ops::loss(ops::LossKind::kCeSoftmax, logits, target);
}

}  // namespace

std::vector<WindowInstance> build_visit_windows(const std::vector<std::vector<std::vector<std::size_t>>>& patients,
                                                std::size_t window) {
  std::vector<WindowInstance> out;
  for (const auto& visits : patients) {
    const std::size_t T = visits.size();
    for (std::size_t t = 0; t < T; ++t) {
      WindowInstance inst;
      inst.visit_codes = visits[t];
      std::sort(inst.visit_codes.begin(), inst.visit_codes.end());
      inst.visit_codes.erase(std::unique(inst.visit_codes.begin(), inst.visit_codes.end()), inst.visit_codes.end());
      const std::size_t lo = t >= window ? t - window : 0;
      const std::size_t hi = std::min(T - 1, t + window);
      for (std::size_t s = lo; s <= hi; ++s) {
        if (s != t) inst.context_codes.insert(inst.context_codes.end(), visits[s].begin(), visits[s].end());
      }
      std::sort(inst.context_codes.begin(), inst.context_codes.end());
      inst.context_codes.erase(std::unique(inst.context_codes.begin(), inst.context_codes.end()),
                               inst.context_codes.end());
      if (inst.context_codes.empty() || inst.visit_codes.empty()) continue;
      out.push_back(std::move(inst));
    }
  }
  return out;
}

std::vector<WindowInstance> build_visit_windows(const std::vector<ehr::RawPatient>& corpus,
                                                const ehr::Vocabulary& vocab, std::size_t window) {
  std::vector<std::vector<std::vector<std::size_t>>> indexed;
  indexed.reserve(corpus.size());
  for (const auto& p : corpus) {
    auto& visits = indexed.emplace_back();
    for (const auto& v : p.visits) {
      auto& codes = visits.emplace_back();
      for (const auto& c : v.codes) {
        if (auto idx = vocab.find(c)) codes.push_back(*idx);
      }
    }
  }
  return build_visit_windows(indexed, window);
}

double mean_window_loss(numkit::ParameterSet& params, const std::vector<WindowInstance>& instances) {
  double total = 0.0;
  for (const auto& inst : instances) {
    Tape tape;
    total += window_loss(tape, params, inst).item();
  }
  return instances.empty() ? 0.0 : total / static_cast<double>(instances.size());
}

Med2VecResult train_code_embeddings(const std::vector<WindowInstance>& instances, const ehr::Vocabulary& vocab,
                                    const Med2VecConfig& cfg) {
  if (instances.empty()) throw ValidationError("no code-embedding training instances");
  if (vocab.size() == 0 || cfg.dim == 0 || cfg.batch_size == 0) {
    throw ConfigError("code embedding needs a vocabulary, a positive dim and batch size");
  }
  for (const auto& inst : instances) {
    for (auto i : inst.visit_codes) {
      if (i >= vocab.size()) throw DataError("instance code index " + std::to_string(i) + " outside vocabulary");
    }
    for (auto i : inst.context_codes) {
      if (i >= vocab.size()) throw DataError("instance code index " + std::to_string(i) + " outside vocabulary");
    }
  }

  Med2VecResult result;
  auto& params = result.params;
  numkit::Rng rng(numkit::derive_seed(cfg.seed, 0));
  params.add(kEmbeddingParam, numkit::glorot_uniform(vocab.size(), cfg.dim, rng));
  params.add(kHiddenBias, DenseArray({cfg.dim}, 0.0));
  params.add(kOutWeight, numkit::glorot_uniform(cfg.dim, vocab.size(), rng));
  params.add(kOutBias, DenseArray({vocab.size()}, 0.0));

  result.epoch_losses.push_back(mean_window_loss(params, instances));
  std::vector<std::size_t> order(instances.size());
  std::iota(order.begin(), order.end(), 0);
  numkit::Rng shuffle_rng(numkit::derive_seed(cfg.seed, 1));
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double seed = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        Tape tape;
        tape.backward(window_loss(tape, params, instances[order[i]]), seed);
      }
      numkit::adadelta_step(params, cfg.optimizer);
    }
    result.epoch_losses.push_back(mean_window_loss(params, instances));
  }
  result.table.vocab = vocab;
  result.table.matrix = params.at(kEmbeddingParam).value;
  return result;
}

std::size_t VocabularyAlignment::oov_count() const {
  return static_cast<std::size_t>(
      std::count_if(pretrain_rows.begin(), pretrain_rows.end(), [](const auto& r) { return !r.has_value(); }));
}

VocabularyAlignment align_vocabularies(const ehr::Vocabulary& experiment, const ehr::Vocabulary& pretrain) {
  VocabularyAlignment a;
  a.experiment_codes = experiment.entries();
  for (const auto& code : a.experiment_codes) a.pretrain_rows.push_back(pretrain.find(code));
  return a;
}

std::string alignment_json(const VocabularyAlignment& alignment) {
  json rows = json::array();
  for (std::size_t i = 0; i < alignment.size(); ++i) {
    json r = {{"code", alignment.experiment_codes[i]}};
    r["pretrain_row"] = alignment.pretrain_rows[i] ? json(*alignment.pretrain_rows[i]) : json(nullptr);
    rows.push_back(std::move(r));
  }
  json doc = {{"experiment_codes", alignment.size()}, {"oov", alignment.oov_count()}, {"alignment", rows}};
  return doc.dump(2) + "\n";
}

VocabularyAlignment parse_alignment(const std::string& text) {
  VocabularyAlignment a;
  try {
    const auto doc = json::parse(text);
    for (const auto& r : doc.at("alignment")) {
      a.experiment_codes.push_back(r.at("code").get<std::string>());
      const auto& row = r.at("pretrain_row");
      a.pretrain_rows.push_back(row.is_null() ? std::nullopt : std::optional<std::size_t>(row.get<std::size_t>()));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed alignment map: ") + e.what());
  }
  return a;
}

DenseArray aligned_embedding(const CodeEmbeddingTable& table, const VocabularyAlignment& alignment) {
  const std::size_t dim = table.matrix.cols();
  DenseArray out({alignment.size(), dim}, 0.0);
  for (std::size_t i = 0; i < alignment.size(); ++i) {
    if (!alignment.pretrain_rows[i]) continue;
    const std::size_t r = *alignment.pretrain_rows[i];
    if (r >= table.matrix.rows()) throw DataError("alignment row " + std::to_string(r) + " outside the table");
    for (std::size_t j = 0; j < dim; ++j) out.at(i, j) = table.matrix.at(r, j);
  }
  return out;
}

DenseArray embed_codes(const DenseArray& x, const CodeEmbeddingTable& table, const VocabularyAlignment& alignment) {
  if (alignment.size() == 0 || alignment.size() != x.size()) {
    throw ConfigError("embed_codes: no vocabulary alignment for a " + std::to_string(x.size()) + "-code vector");
  }
  const auto aligned = aligned_embedding(table, alignment);
  Tape tape;
  return numkit::ops::matmul(tape.constant(x), tape.constant(aligned)).value();
}

void save_embeddings(const std::filesystem::path& dir, const Med2VecResult& result,
                     const VocabularyAlignment& alignment, std::uint64_t seed) {
  numkit::save_checkpoint(result.params, dir / "code2vec.json", seed);
  std::string vocab;
  for (const auto& e : result.table.vocab.entries()) vocab += e + "\n";
  io::write_atomic(dir / "pretrain_vocab.txt", vocab);
  io::write_atomic(dir / "alignment.json", alignment_json(alignment));
}

LoadedEmbeddings load_embeddings(const std::filesystem::path& dir) {
  LoadedEmbeddings out;
  auto ckpt = numkit::load_checkpoint(dir / "code2vec.json");
  std::vector<std::string> entries;
  std::string text = io::read_file(dir / "pretrain_vocab.txt");
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    entries.push_back(text.substr(pos, nl - pos));
    pos = nl == std::string::npos ? text.size() : nl + 1;
  }
  out.table.vocab = ehr::Vocabulary(std::move(entries));
  out.table.matrix = ckpt.params.at(kEmbeddingParam).value;
  if (out.table.matrix.rows() != out.table.vocab.size()) {
    throw DataError("embedding table rows do not match the pre-training vocabulary");
  }
  out.alignment = parse_alignment(io::read_file(dir / "alignment.json"));
  return out;
}

}  // namespace traceseq::code2vec
