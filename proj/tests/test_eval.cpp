#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "traceseq/errors.hpp"
#include "traceseq/eval/metrics.hpp"

using namespace traceseq;
using namespace traceseq::eval;

namespace {

// Average precision from first principles: for every distinct score taken as
// a threshold (highest first), count everything at or above it.
double brute_force_ap(const std::vector<double>& s, const std::vector<int>& y) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  const double npos = static_cast<double>(std::count(y.begin(), y.end(), 1));
  double ap = 0.0, prev_tp = 0.0;
  for (double t : thresholds) {
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) (y[i] == 1 ? tp : fp) += 1.0;
    }
    if (tp > prev_tp) ap += ((tp - prev_tp) / npos) * (tp / (tp + fp));
    prev_tp = tp;
  }
  return ap;
}

DenseArray random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  DenseArray a({r, c});
  for (auto& v : a.values()) v = u(rng);
  return a;
}

}  // namespace

TEST_CASE("auprc examples") {
  CHECK(auprc({0.9, 0.8, 0.3}, {1, 0, 1}) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(std::abs(auprc({0.9, 0.8, 0.3}, {1, 0, 1}) - 0.8333333333333333) < 1e-12);
  CHECK(auprc({0.9, 0.7, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
  // All tied: one threshold group, precision = prevalence.
  CHECK(auprc({0.5, 0.5, 0.5, 0.5}, {1, 0, 0, 0}) == doctest::Approx(0.25));
  CHECK_THROWS_AS(auprc({0.1, 0.2}, {1, 1}), ValidationError);
  CHECK_THROWS_AS(auprc({0.1, 0.2}, {0, 0}), ValidationError);
  CHECK_THROWS_AS(auprc({0.1}, {0, 1}), DimensionError);
}

TEST_CASE("auprc equals the exhaustive-threshold oracle") {
  std::mt19937_64 rng(3);
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 9;
    std::vector<double> s(n);
    std::vector<int> y(n);
    // Coarse scores so ties are common.
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 5) / 4.0;
      y[i] = static_cast<int>(rng() % 2);
    }
    y[0] = 1;
    y[1] = 0;
    CHECK(auprc(s, y) == brute_force_ap(s, y));
    ++checked;
  }
  CHECK(checked == 1000);
}

TEST_CASE("auprc under monotone transforms and tie permutations") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 30;
    std::vector<double> s(n), t(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::round(u(rng) * 10) / 10;
      t[i] = std::exp(3 * s[i]) - 7;
      y[i] = u(rng) < 0.3;
    }
    y[0] = 1;
    y[1] = 0;
    CHECK(auprc(s, y) == doctest::Approx(auprc(t, y)).epsilon(1e-14));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> sp(n);
    std::vector<int> yp(n);
    for (std::size_t i = 0; i < n; ++i) {
      sp[i] = s[perm[i]];
      yp[i] = y[perm[i]];
    }
    CHECK(auprc(sp, yp) == doctest::Approx(auprc(s, y)).epsilon(1e-14));
  }
}

TEST_CASE("random scores give prevalence") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  const std::size_t n = 100000;
  std::vector<double> s(n);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = u(rng);
    y[i] = i % 7 == 0;
  }
  CHECK(std::abs(auprc(s, y) - 1.0 / 7.0) < 0.02);
}

TEST_CASE("negative log likelihood") {
  CHECK(neg_log_likelihood({1.0, 0.0}, {1, 0}) < 1e-11);
  CHECK(neg_log_likelihood({0.5, 0.5, 0.5}, {1, 0, 1}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const std::vector<double> s = {0.9, 0.2, 0.6, 0.05};
  const std::vector<int> y = {1, 0, 0, 1};
  const double hand = -(std::log(0.9) + std::log(0.8) + std::log(0.4) + std::log(0.05)) / 4.0;
  CHECK(std::abs(neg_log_likelihood(s, y) - hand) < 1e-12);
  CHECK(std::isfinite(neg_log_likelihood({0.0}, {1})));
  CHECK_THROWS_AS(neg_log_likelihood({}, {}), ValidationError);
}

TEST_CASE("attention back-projection") {
  std::mt19937_64 rng(6);
  const std::size_t m = 4, n = 9;

  SUBCASE("identity projection") {
    DenseArray eye({n, n}, 0.0);
    for (std::size_t i = 0; i < n; ++i) eye.at(i, i) = 1.0;
    const auto a = random_matrix(n, n, rng);
    const auto out = backproject(a, eye);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(out[i] == a[i]);
  }
  SUBCASE("A = I gives the symmetric Gram matrix") {
    const auto w = random_matrix(m, n, rng);
    DenseArray eye({m, m}, 0.0);
    for (std::size_t i = 0; i < m; ++i) eye.at(i, i) = 1.0;
    const auto out = backproject(eye, w);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double g = 0.0;
        for (std::size_t k = 0; k < m; ++k) g += w.at(k, i) * w.at(k, j);
        CHECK(out.at(i, j) == doctest::Approx(g).epsilon(1e-13));
        CHECK(out.at(i, j) == out.at(j, i));
      }
    }
  }
  SUBCASE("linearity and total mass") {
    const auto w = random_matrix(m, n, rng);
    const auto a1 = random_matrix(m, m, rng), a2 = random_matrix(m, m, rng);
    DenseArray sum({m, m});
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = a1[i] + a2[i];
    const auto lhs = backproject(sum, w);
    const auto r1 = backproject(a1, w), r2 = backproject(a2, w);
    for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(std::abs(lhs[i] - (r1[i] + r2[i])) < 1e-12);

    // 1^T W^T A W 1 = (W 1)^T A (W 1).
    std::vector<double> w1(m, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t j = 0; j < n; ++j) w1[k] += w.at(k, j);
    }
    double quad = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) quad += w1[i] * a1.at(i, j) * w1[j];
    }
    double mass = 0.0;
    for (double v : r1.values()) mass += v;
    CHECK(std::abs(mass - quad) < 1e-10);
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(backproject(random_matrix(3, 3, rng), random_matrix(4, 9, rng)), DimensionError);
    CHECK_THROWS_AS(backproject(random_matrix(4, 3, rng), random_matrix(4, 9, rng)), DimensionError);
    CHECK_THROWS_AS(backproject_attention(random_matrix(4, 4, rng), random_matrix(4, 9, rng), {2, 9}, 0),
                    DimensionError);
  }
}

TEST_CASE("attention csv lists only active features") {
  const ehr::FeatureSpace space{
      ehr::CodeVocabulary({"dx_a", "dx_b", "rx_c"}, 1), ehr::ObservationVocabulary({"obs_x"}),
      ehr::Vocabulary({"r1", "r2"}), ehr::Vocabulary({"F", "M"})};
  REQUIRE(space.total_dim() == 10);
  std::mt19937_64 rng(7);
  DenseArray x({10}, 0.0);
  x[0] = 1.0;
  x[2] = 1.0;
  x[5] = 1.0;
  x[8] = 0.3;
  const auto active = active_features(x);
  CHECK(active == std::vector<std::size_t>{0, 2, 5, 8});
  const auto map = backproject_attention(random_matrix(3, 3, rng), random_matrix(3, 10, rng), active, 4);
  const auto csv = attention_csv({map}, space);
  CHECK(csv.rfind("visit_index,row_feature,col_feature,weight\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 16);
  CHECK(csv.find("dx_b") == std::string::npos);
  CHECK(csv.find("4,dx_a,rx_c,") != std::string::npos);
  CHECK(csv.find("4,race:r2,log_age,") != std::string::npos);
}

TEST_CASE("embedding export") {
  std::vector<EmbeddingRow> rows = {{"p3", 0, {0.5, -1.0}}, {"p1", 1, {0.25, 2.0}}};
  const auto csv = embeddings_csv(rows);
  CHECK(csv == "id,label,e1,e2\np1,1,0.25,2\np3,0,0.5,-1\n");
  std::reverse(rows.begin(), rows.end());
  CHECK(embeddings_csv(rows) == csv);
  rows[0].values.push_back(1.0);
  CHECK_THROWS_AS(embeddings_csv(rows), DimensionError);
}
