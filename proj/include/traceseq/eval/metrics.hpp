#pragma once

#include <string>
#include <vector>

#include "traceseq/ehr/vectorize.hpp"
#include "traceseq/numkit/dense_array.hpp"

namespace traceseq::eval {

using numkit::DenseArray;

// Step-wise average precision. Patients are ranked by descending score and
// tied scores form one threshold group:
//   AP = sum over groups of (new positives / positives) * precision at the group
double auprc(const std::vector<double>& scores, const std::vector<int>& labels);

// Mean binary cross entropy with probabilities clamped to [1e-12, 1-1e-12].
double neg_log_likelihood(const std::vector<double>& scores, const std::vector<int>& labels);

struct AttentionMap {
  std::size_t visit_index = 0;
  DenseArray downsized;             // ñ x ñ
  DenseArray full;                  // n x n, W~^T A W~
  std::vector<std::size_t> active;  // features present in the visit
};

// W~^T A W~ for A (ñ x ñ) and W~ (ñ x n).
DenseArray backproject(const DenseArray& attention, const DenseArray& w_down);

AttentionMap backproject_attention(const DenseArray& attention, const DenseArray& w_down,
                                   std::vector<std::size_t> active, std::size_t visit_index);

// Nonzero positions of a visit's x' vector.
std::vector<std::size_t> active_features(const DenseArray& x_prime);

// visit_index,row_feature,col_feature,weight over each map's active features.
std::string attention_csv(const std::vector<AttentionMap>& maps, const ehr::FeatureSpace& space);

struct EmbeddingRow {
  std::string id;
  int label = 0;
  std::vector<double> values;
};

// id,label,e1..ed, rows sorted by id.
std::string embeddings_csv(std::vector<EmbeddingRow> rows);

}  // namespace traceseq::eval
