#pragma once

#include <cstddef>

// Row-parallel dense kernels. Every kernel has a serial reference version
// and an OpenMP version that assigns whole output rows to threads and runs
// the same per-row loop, so both produce bit-identical results regardless of
// thread count. The dispatching entry points pick the OpenMP path when more
// than one thread is configured.
namespace traceseq::numkit::kernels {

// Thread cap for the parallel kernels (>= 1). Defaults to 1.
void set_threads(int n);
int threads();
// Reads TRACE_SEQ_THREADS; returns the fallback when unset or invalid.
int threads_from_env(int fallback = 1);

struct LayerNormStats {
  double* mean;     // rows
  double* inv_std;  // rows
};

namespace serial {
// c[m x n] += a[m x k] * b[k x n]
void matmul_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
// c[m x n] += a[m x k] * b[n x k]^T
void matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
// c[m x n] += a[k x m]^T * b[k x n]
void matmul_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols);
void layer_norm_rows(const double* x, const double* gain, const double* bias, double* y, LayerNormStats stats,
                     std::size_t rows, std::size_t cols, double eps);
}  // namespace serial

namespace parallel {
void matmul_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void matmul_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols);
void layer_norm_rows(const double* x, const double* gain, const double* bias, double* y, LayerNormStats stats,
                     std::size_t rows, std::size_t cols, double eps);
}  // namespace parallel

void matmul_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void matmul_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols);
void layer_norm_rows(const double* x, const double* gain, const double* bias, double* y, LayerNormStats stats,
                     std::size_t rows, std::size_t cols, double eps);

}  // namespace traceseq::numkit::kernels
