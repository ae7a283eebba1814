#include "traceseq/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "traceseq/errors.hpp"
#include "traceseq/numkit/kernels.hpp"

namespace traceseq::eval {

namespace {

void require_parallel(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("metric: " + std::to_string(scores.size()) + " scores vs " + std::to_string(labels.size()) +
                         " labels");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw ValidationError("metric: labels must be 0 or 1");
  }
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double auprc(const std::vector<double>& scores, const std::vector<int>& labels) {
  require_parallel(scores, labels);
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (positives == 0 || positives == labels.size()) throw ValidationError("auprc needs both classes");
  for (double s : scores) {
    if (!std::isfinite(s)) throw ValidationError("auprc: non-finite score");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  const double npos = static_cast<double>(positives);
  double tp = 0.0, fp = 0.0, ap = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double group_tp = 0.0, group_fp = 0.0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? group_tp : group_fp) += 1.0;
      ++j;
    }
    tp += group_tp;
    fp += group_fp;
    if (group_tp > 0.0) ap += (group_tp / npos) * (tp / (tp + fp));
    i = j;
  }
  return ap;
}

double neg_log_likelihood(const std::vector<double>& scores, const std::vector<int>& labels) {
  require_parallel(scores, labels);
  if (scores.empty()) throw ValidationError("neg_log_likelihood of an empty set");
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double p = std::clamp(scores[i], 1e-12, 1.0 - 1e-12);
    total -= labels[i] == 1 ? std::log(p) : std::log(1.0 - p);
  }
  return total / static_cast<double>(scores.size());
}

DenseArray backproject(const DenseArray& attention, const DenseArray& w_down) {
  if (attention.rank() != 2 || w_down.rank() != 2 || attention.rows() != attention.cols() ||
      attention.cols() != w_down.rows()) {
    throw DimensionError("backproject: attention " + numkit::shape_string(attention.shape()) + " vs projection " +
                         numkit::shape_string(w_down.shape()));
  }
  const std::size_t m = w_down.rows(), n = w_down.cols();
  DenseArray aw({m, n}, 0.0);
  numkit::kernels::matmul_nn(attention.data(), w_down.data(), aw.data(), m, m, n);
  DenseArray out({n, n}, 0.0);
  numkit::kernels::matmul_tn(w_down.data(), aw.data(), out.data(), n, m, n);
  return out;
}

AttentionMap backproject_attention(const DenseArray& attention, const DenseArray& w_down,
                                   std::vector<std::size_t> active, std::size_t visit_index) {
  AttentionMap map;
  map.visit_index = visit_index;
  map.downsized = attention;
  map.full = backproject(attention, w_down);
  for (auto i : active) {
    if (i >= map.full.rows()) throw DimensionError("backproject_attention: active feature outside the map");
  }
  map.active = std::move(active);
  return map;
}

std::vector<std::size_t> active_features(const DenseArray& x_prime) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < x_prime.size(); ++i) {
    if (x_prime[i] != 0.0) out.push_back(i);
  }
  return out;
}

std::string attention_csv(const std::vector<AttentionMap>& maps, const ehr::FeatureSpace& space) {
  std::ostringstream out;
  out << "visit_index,row_feature,col_feature,weight\n";
  for (const auto& m : maps) {
    for (auto r : m.active) {
      for (auto c : m.active) {
        out << m.visit_index << ',' << space.feature_name(r) << ',' << space.feature_name(c) << ','
            << format_double(m.full.at(r, c)) << '\n';
      }
    }
  }
  return out.str();
}

std::string embeddings_csv(std::vector<EmbeddingRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::ostringstream out;
  out << "id,label";
  const std::size_t width = rows.empty() ? 0 : rows.front().values.size();
  for (std::size_t j = 0; j < width; ++j) out << ",e" << j + 1;
  out << '\n';
  for (const auto& r : rows) {
    if (r.values.size() != width) throw DimensionError("embeddings_csv: ragged embedding rows");
    out << r.id << ',' << r.label;
    for (double v : r.values) out << ',' << format_double(v);
    out << '\n';
  }
  return out.str();
}

}  // namespace traceseq::eval
