#include "traceseq/numkit/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace traceseq::numkit::kernels {

namespace {

std::atomic<int> g_threads{1};

inline void matmul_nn_row(const double* a, const double* b, double* c, std::size_t i, std::size_t k,
                          std::size_t n) {
  double* ci = c + i * n;
  const double* ai = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double aip = ai[p];
    if (aip == 0.0) continue;
    const double* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
  }
}

inline void matmul_nt_row(const double* a, const double* b, double* c, std::size_t i, std::size_t k,
                          std::size_t n) {
  const double* ai = a + i * k;
  double* ci = c + i * n;
  // Four dot products at a time; each still sums over p in order.
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const double* b0 = b + j * k;
    const double* b1 = b0 + k;
    const double* b2 = b1 + k;
    const double* b3 = b2 + k;
    double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double x = ai[p];
      acc0 += x * b0[p];
      acc1 += x * b1[p];
      acc2 += x * b2[p];
      acc3 += x * b3[p];
    }
    ci[j] += acc0;
    ci[j + 1] += acc1;
    ci[j + 2] += acc2;
    ci[j + 3] += acc3;
  }
  for (; j < n; ++j) {
    const double* bj = b + j * k;
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
    ci[j] += acc;
  }
}

inline void matmul_tn_row(const double* a, const double* b, double* c, std::size_t i, std::size_t m,
                          std::size_t k, std::size_t n) {
  double* ci = c + i * n;
  for (std::size_t p = 0; p < k; ++p) {
    const double api = a[p * m + i];
    if (api == 0.0) continue;
    const double* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
  }
}

inline void softmax_row(const double* x, double* y, std::size_t cols) {
  double mx = x[0];
  for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    y[j] = std::exp(x[j] - mx);
    sum += y[j];
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
}

inline void layer_norm_row(const double* x, const double* gain, const double* bias, double* y, double& mean_out,
                           double& inv_std_out, std::size_t cols, double eps) {
  double mean = 0.0;
  for (std::size_t j = 0; j < cols; ++j) mean += x[j];
  mean /= static_cast<double>(cols);
  double var = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    const double d = x[j] - mean;
    var += d * d;
  }
  var /= static_cast<double>(cols);
  const double inv_std = 1.0 / std::sqrt(var + eps);
  for (std::size_t j = 0; j < cols; ++j) y[j] = (x[j] - mean) * inv_std * gain[j] + bias[j];
  mean_out = mean;
  inv_std_out = inv_std;
}

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelWork = 1 << 14;

bool use_parallel(std::size_t rows, std::size_t work) { return threads() > 1 && rows > 1 && work >= kParallelWork; }

}  // namespace

void set_threads(int n) { g_threads.store(std::max(1, n)); }
int threads() { return g_threads.load(); }

int threads_from_env(int fallback) {
  const char* v = std::getenv("TRACE_SEQ_THREADS");
  if (!v || !*v) return fallback;
  try {
    const int n = std::stoi(v);
    return n >= 1 ? n : fallback;
  } catch (...) {
    return fallback;
  }
}

namespace serial {

void matmul_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_nn_row(a, b, c, i, k, n);
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_nt_row(a, b, c, i, k, n);
}

void matmul_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_tn_row(a, b, c, i, m, k, n);
}

void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) softmax_row(x + r * cols, y + r * cols, cols);
}

void layer_norm_rows(const double* x, const double* gain, const double* bias, double* y, LayerNormStats stats,
                     std::size_t rows, std::size_t cols, double eps) {
  for (std::size_t r = 0; r < rows; ++r) {
    layer_norm_row(x + r * cols, gain, bias, y + r * cols, stats.mean[r], stats.inv_std[r], cols, eps);
  }
}

}  // namespace serial

namespace parallel {

void matmul_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) num_threads(threads())
  for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_nn_row(a, b, c, static_cast<std::size_t>(i), k, n);
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) num_threads(threads())
  for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_nt_row(a, b, c, static_cast<std::size_t>(i), k, n);
}

void matmul_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) num_threads(threads())
  for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_tn_row(a, b, c, static_cast<std::size_t>(i), m, k, n);
}

void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) num_threads(threads())
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    const auto ur = static_cast<std::size_t>(r);
    softmax_row(x + ur * cols, y + ur * cols, cols);
  }
}

void layer_norm_rows(const double* x, const double* gain, const double* bias, double* y, LayerNormStats stats,
                     std::size_t rows, std::size_t cols, double eps) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) num_threads(threads())
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    const auto ur = static_cast<std::size_t>(r);
    layer_norm_row(x + ur * cols, gain, bias, y + ur * cols, stats.mean[ur], stats.inv_std[ur], cols, eps);
  }
}

}  // namespace parallel

void matmul_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  if (use_parallel(m, m * k * n)) {
    parallel::matmul_nn(a, b, c, m, k, n);
  } else {
    serial::matmul_nn(a, b, c, m, k, n);
  }
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  if (use_parallel(m, m * k * n)) {
    parallel::matmul_nt(a, b, c, m, k, n);
  } else {
    serial::matmul_nt(a, b, c, m, k, n);
  }
}

void matmul_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  if (use_parallel(m, m * k * n)) {
    parallel::matmul_tn(a, b, c, m, k, n);
  } else {
    serial::matmul_tn(a, b, c, m, k, n);
  }
}

void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols) {
  if (use_parallel(rows, rows * cols * 8)) {
    parallel::softmax_rows(x, y, rows, cols);
  } else {
    serial::softmax_rows(x, y, rows, cols);
  }
}

void layer_norm_rows(const double* x, const double* gain, const double* bias, double* y, LayerNormStats stats,
                     std::size_t rows, std::size_t cols, double eps) {
  if (use_parallel(rows, rows * cols * 8)) {
    parallel::layer_norm_rows(x, gain, bias, y, stats, rows, cols, eps);
  } else {
    serial::layer_norm_rows(x, gain, bias, y, stats, rows, cols, eps);
  }
}

}  // namespace traceseq::numkit::kernels
