#include "traceseq/numkit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "traceseq/errors.hpp"
#include "traceseq/numkit/kernels.hpp"

namespace traceseq::numkit::ops {

namespace {

void require_same_shape(const char* op, const DenseArray& a, const DenseArray& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_matrix(const char* op, const DenseArray& a) {
  if (a.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
}

// Adds src into the gradient of `id` when that node wants one.
void accumulate(Tape& t, std::size_t id, const DenseArray& src) {
  if (!t.requires_grad(id)) return;
  auto& g = t.grad(id);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

LossKind parse_loss(std::string_view name) {
  if (name == "ce_softmax") return LossKind::kCeSoftmax;
  if (name == "bce") return LossKind::kBce;
  if (name == "mse") return LossKind::kMse;
  throw ConfigError("unknown loss '" + std::string(name) + "'");
}

Var matmul(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_matrix("matmul", bv);
  if (av.rank() > 2 || av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner extents differ for " + shape_string(av.shape()) + " x " +
                         shape_string(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  DenseArray out(av.rank() == 1 ? Shape{n} : Shape{m, n}, 0.0);
  kernels::matmul_nn(av.data(), bv.data(), out.data(), m, k, n);
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) kernels::matmul_nt(g.data(), t.value(ib).data(), t.grad(ia).data(), m, n, k);
    if (t.requires_grad(ib)) kernels::matmul_tn(t.value(ia).data(), g.data(), t.grad(ib).data(), k, m, n);
  });
}

Var matmul_nt(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_matrix("matmul_nt", av);
  require_matrix("matmul_nt", bv);
  if (av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: inner extents differ for " + shape_string(av.shape()) + " x " +
                         shape_string(bv.shape()) + "^T");
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  DenseArray out({m, n}, 0.0);
  kernels::matmul_nt(av.data(), bv.data(), out.data(), m, k, n);
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);  // m x n
    if (t.requires_grad(ia)) kernels::matmul_nn(g.data(), t.value(ib).data(), t.grad(ia).data(), m, n, k);
    if (t.requires_grad(ib)) kernels::matmul_tn(g.data(), t.value(ia).data(), t.grad(ib).data(), n, m, k);
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  DenseArray out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    accumulate(t, ia, g);
    accumulate(t, ib, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.value(), b.value());
  DenseArray out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    accumulate(t, ia, g);
    if (t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a.value(), b.value());
  DenseArray out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad(ia);
      const auto& bv = t.value(ib);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      const auto& av = t.value(ia);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double k) {
  DenseArray out = a.value();
  for (auto& v : out.values()) v *= k;
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, k](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += k * g[i];
  });
}

Var one_minus(Var a) {
  DenseArray out = a.value();
  for (auto& v : out.values()) v = 1.0 - v;
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] -= g[i];
  });
}

Var add_bias(Var x, Var bias) {
  const auto& xv = x.value();
  const auto& bv = bias.value();
  if (bv.rank() != 1 || bv.size() != xv.cols() || xv.rank() > 2) {
    throw DimensionError("add_bias: bias " + shape_string(bv.shape()) + " does not fit rows of " +
                         shape_string(xv.shape()));
  }
  DenseArray out = xv;
  const std::size_t rows = xv.rows(), cols = xv.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  }
  const std::size_t ix = x.id, ib = bias.id;
  return x.tape->record(std::move(out), {x, bias}, [ix, ib, rows, cols](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    accumulate(t, ix, g);
    if (t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
      }
    }
  });
}

Var activation(Activation kind, Var x) {
  DenseArray out = x.value();
  switch (kind) {
    case Activation::kSigmoid:
      for (auto& v : out.values()) v = sigmoid_scalar(v);
      break;
    case Activation::kTanh:
      for (auto& v : out.values()) v = std::tanh(v);
      break;
    case Activation::kRelu:
      for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
      break;
  }
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, kind](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& gx = t.grad(ix);
    switch (kind) {
      case Activation::kSigmoid:
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      case Activation::kTanh:
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      case Activation::kRelu:
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += y[i] > 0.0 ? g[i] : 0.0;
        break;
    }
  });
}

Var softmax_rows(Var x) {
  const auto& xv = x.value();
  if (xv.rank() > 2) throw DimensionError("softmax_rows: expected rank <= 2, got " + shape_string(xv.shape()));
  DenseArray out(xv.shape());
  const std::size_t rows = xv.rows(), cols = xv.cols();
  kernels::softmax_rows(xv.data(), out.data(), rows, cols);
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, rows, cols](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& gx = t.grad(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[o + c] * y[o + c];
      for (std::size_t c = 0; c < cols; ++c) gx[o + c] += y[o + c] * (g[o + c] - dot);
    }
  });
}

Var layer_norm_rows(Var x, Var gain, Var bias) {
  const auto& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (xv.rank() > 2) throw DimensionError("layer_norm_rows: expected rank <= 2, got " + shape_string(xv.shape()));
  if (cols < 2) throw DimensionError("layer_norm_rows: need at least 2 columns, got " + shape_string(xv.shape()));
  if (gain.value().shape() != Shape{cols} || bias.value().shape() != Shape{cols}) {
    throw DimensionError("layer_norm_rows: gain/bias " + shape_string(gain.value().shape()) + "/" +
                         shape_string(bias.value().shape()) + " do not match " + shape_string(xv.shape()));
  }
  DenseArray out(xv.shape());
  auto mean = std::make_shared<std::vector<double>>(rows);
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  kernels::layer_norm_rows(xv.data(), gain.value().data(), bias.value().data(), out.data(),
                           {mean->data(), inv_std->data()}, rows, cols, kLayerNormEps);
  const std::size_t ix = x.id, ig = gain.id, ib = bias.id;
  return x.tape->record(
      std::move(out), {x, gain, bias}, [ix, ig, ib, rows, cols, mean, inv_std](Tape& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& xv = t.value(ix);
        const auto& gv = t.value(ig);
        std::vector<double> xhat(cols), dxhat(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t o = r * cols;
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            xhat[c] = (xv[o + c] - (*mean)[r]) * (*inv_std)[r];
            dxhat[c] = g[o + c] * gv[c];
            sum_d += dxhat[c];
            sum_dx += dxhat[c] * xhat[c];
          }
          if (t.requires_grad(ix)) {
            auto& gx = t.grad(ix);
            const double k = (*inv_std)[r] / static_cast<double>(cols);
            for (std::size_t c = 0; c < cols; ++c) {
              gx[o + c] += k * (static_cast<double>(cols) * dxhat[c] - sum_d - xhat[c] * sum_dx);
            }
          }
          if (t.requires_grad(ig)) {
            auto& gg = t.grad(ig);
            for (std::size_t c = 0; c < cols; ++c) gg[c] += g[o + c] * xhat[c];
          }
          if (t.requires_grad(ib)) {
            auto& gb = t.grad(ib);
            for (std::size_t c = 0; c < cols; ++c) gb[c] += g[o + c];
          }
        }
      });
}

Var dropout(Var x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0,1), got " + std::to_string(rate));
  if (mode == Mode::kEval || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  std::bernoulli_distribution keep(1.0 - rate);
  for (auto& m : *mask) m = keep(rng) ? keep_scale : 0.0;
  DenseArray out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*mask)[i];
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, mask](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * (*mask)[i];
  });
}

Var scale_rows(Var w, Var x) {
  const auto& wv = w.value();
  const auto& xv = x.value();
  require_matrix("scale_rows", wv);
  if (xv.rank() != 1 || xv.size() != wv.rows()) {
    throw DimensionError("scale_rows: " + shape_string(xv.shape()) + " does not match rows of " +
                         shape_string(wv.shape()));
  }
  const std::size_t n = wv.rows(), d = wv.cols();
  DenseArray out(wv.shape(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = xv[i];
    if (s == 0.0) continue;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = s * wv[i * d + j];
  }
  const std::size_t iw = w.id, ix = x.id;
  return w.tape->record(std::move(out), {w, x}, [iw, ix, n, d](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(iw)) {
      const auto& xv = t.value(ix);
      auto& gw = t.grad(iw);
      for (std::size_t i = 0; i < n; ++i) {
        const double s = xv[i];
        if (s == 0.0) continue;
        for (std::size_t j = 0; j < d; ++j) gw[i * d + j] += s * g[i * d + j];
      }
    }
    if (t.requires_grad(ix)) {
      const auto& wv = t.value(iw);
      auto& gx = t.grad(ix);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += wv[i * d + j] * g[i * d + j];
        gx[i] += acc;
      }
    }
  });
}

Var project_scaled_rows(Var p, Var w, Var x) {
  const auto& pv = p.value();
  const auto& wv = w.value();
  const auto& xv = x.value();
  require_matrix("project_scaled_rows", pv);
  require_matrix("project_scaled_rows", wv);
  if (xv.rank() != 1 || xv.size() != wv.rows() || pv.cols() != wv.rows()) {
    throw DimensionError("project_scaled_rows: " + shape_string(pv.shape()) + " x diag(" + shape_string(xv.shape()) +
                         ") x " + shape_string(wv.shape()));
  }
  const std::size_t m = pv.rows(), n = wv.rows(), d = wv.cols();
  // Only features with a nonzero value contribute.
  auto active = std::make_shared<std::vector<std::size_t>>();
  for (std::size_t i = 0; i < n; ++i) {
    if (xv[i] != 0.0) active->push_back(i);
  }
  DenseArray out({m, d}, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    double* o = out.data() + r * d;
    for (auto i : *active) {
      const double s = pv[r * n + i] * xv[i];
      const double* wi = wv.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) o[j] += s * wi[j];
    }
  }
  const std::size_t ip = p.id, iw = w.id, ix = x.id;
  return p.tape->record(std::move(out), {p, w, x}, [ip, iw, ix, m, n, d, active](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& pv = t.value(ip);
    const auto& wv = t.value(iw);
    const auto& xv = t.value(ix);
    // gw_row[i] = sum_r P[r,i] g[r,:]  for each active i
    std::vector<double> gw_row(d);
    for (auto i : *active) {
      std::fill(gw_row.begin(), gw_row.end(), 0.0);
      for (std::size_t r = 0; r < m; ++r) {
        const double pri = pv[r * n + i];
        const double* gr = g.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) gw_row[j] += pri * gr[j];
      }
      const double* wi = wv.data() + i * d;
      if (t.requires_grad(iw)) {
        auto& gw = t.grad(iw);
        for (std::size_t j = 0; j < d; ++j) gw[i * d + j] += xv[i] * gw_row[j];
      }
      if (t.requires_grad(ix)) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += wi[j] * gw_row[j];
        t.grad(ix)[i] += acc;
      }
      if (t.requires_grad(ip)) {
        auto& gp = t.grad(ip);
        for (std::size_t r = 0; r < m; ++r) {
          const double* gr = g.data() + r * d;
          double acc = 0.0;
          for (std::size_t j = 0; j < d; ++j) acc += gr[j] * wi[j];
          gp[r * n + i] += xv[i] * acc;
        }
      }
    }
    // Inactive features have x_i = 0; their input gradient is P[:,i]^T g W[i,:]^T.
    if (t.requires_grad(ix)) {
      auto& gx = t.grad(ix);
      std::size_t next = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (next < active->size() && (*active)[next] == i) {
          ++next;
          continue;
        }
        const double* wi = wv.data() + i * d;
        double acc = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
          const double pri = pv[r * n + i];
          if (pri == 0.0) continue;
          const double* gr = g.data() + r * d;
          double dot = 0.0;
          for (std::size_t j = 0; j < d; ++j) dot += gr[j] * wi[j];
          acc += pri * dot;
        }
        gx[i] += acc;
      }
    }
  });
}

Var mean_pool_rows(Var x) {
  const auto& xv = x.value();
  if (xv.empty()) throw ValidationError("mean_pool_rows: empty input");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  DenseArray out({cols}, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += xv[r * cols + c];
  }
  const double inv = 1.0 / static_cast<double>(rows);
  for (auto& v : out.values()) v *= inv;
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, rows, cols, inv](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[c] * inv;
    }
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ValidationError("concat: no inputs");
  std::vector<double> values;
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // (id, length)
  for (const auto& p : parts) {
    const auto& v = p.value();
    if (v.rank() != 1) throw DimensionError("concat: expected vectors, got " + shape_string(v.shape()));
    values.insert(values.end(), v.values().begin(), v.values().end());
    spans.emplace_back(p.id, v.size());
  }
  return parts.front().tape->record(DenseArray::vector(std::move(values)), parts,
                                    [spans](Tape& t, std::size_t self) {
                                      const auto& g = t.grad(self);
                                      std::size_t off = 0;
                                      for (const auto& [id, len] : spans) {
                                        if (t.requires_grad(id)) {
                                          auto& gi = t.grad(id);
                                          for (std::size_t i = 0; i < len; ++i) gi[i] += g[off + i];
                                        }
                                        off += len;
                                      }
                                    });
}

Var slice(Var x, std::size_t offset, std::size_t length) {
  const auto& xv = x.value();
  if (xv.rank() != 1 || offset + length > xv.size() || length == 0) {
    throw DimensionError("slice [" + std::to_string(offset) + ", +" + std::to_string(length) + ") out of " +
                         shape_string(xv.shape()));
  }
  std::vector<double> values(xv.values().begin() + static_cast<std::ptrdiff_t>(offset),
                             xv.values().begin() + static_cast<std::ptrdiff_t>(offset + length));
  const std::size_t ix = x.id;
  return x.tape->record(DenseArray::vector(std::move(values)), {x}, [ix, offset, length](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(ix);
    for (std::size_t i = 0; i < length; ++i) gx[offset + i] += g[i];
  });
}

Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw ValidationError("stack_rows: no inputs");
  const std::size_t cols = rows.front().size();
  std::vector<double> values;
  values.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    const auto& v = r.value();
    if (v.rank() != 1 || v.size() != cols) {
      throw DimensionError("stack_rows: row " + shape_string(v.shape()) + " differs from [" + std::to_string(cols) +
                           "]");
    }
    values.insert(values.end(), v.values().begin(), v.values().end());
  }
  std::vector<std::size_t> ids;
  for (const auto& r : rows) ids.push_back(r.id);
  return rows.front().tape->record(DenseArray::matrix(rows.size(), cols, std::move(values)), rows,
                                   [ids, cols](Tape& t, std::size_t self) {
                                     const auto& g = t.grad(self);
                                     for (std::size_t r = 0; r < ids.size(); ++r) {
                                       if (!t.requires_grad(ids[r])) continue;
                                       auto& gr = t.grad(ids[r]);
                                       for (std::size_t c = 0; c < cols; ++c) gr[c] += g[r * cols + c];
                                     }
                                   });
}

Var reshape(Var x, Shape shape) {
  DenseArray out = x.value();
  out.reshape(std::move(shape));
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix](Tape& t, std::size_t self) { accumulate(t, ix, t.grad(self)); });
}

Var add_n(const std::vector<Var>& terms) {
  if (terms.empty()) throw ValidationError("add_n: no inputs");
  DenseArray out = terms.front().value();
  for (std::size_t k = 1; k < terms.size(); ++k) {
    const auto& v = terms[k].value();
    require_same_shape("add_n", out, v);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
  }
  std::vector<std::size_t> ids;
  for (const auto& term : terms) ids.push_back(term.id);
  return terms.front().tape->record(std::move(out), terms, [ids](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    for (auto id : ids) accumulate(t, id, g);
  });
}

Var loss(LossKind kind, Var pred, const DenseArray& target) {
  const auto& pv = pred.value();
  if (pv.shape() != target.shape()) {
    throw DimensionError("loss: prediction " + shape_string(pv.shape()) + " vs target " +
                         shape_string(target.shape()));
  }
  const std::size_t n = pv.size();
  const double lo = kProbClamp, hi = 1.0 - kProbClamp;
  auto tgt = std::make_shared<DenseArray>(target);
  const std::size_t ip = pred.id;

  switch (kind) {
    case LossKind::kCeSoftmax: {
      if (pv.rank() != 1) throw DimensionError("ce_softmax: expected a vector, got " + shape_string(pv.shape()));
      double total = 0.0;
      for (double t : target.values()) {
        if (t < 0.0) throw ValidationError("ce_softmax target has a negative entry");
        total += t;
      }
      if (std::abs(total - 1.0) > 1e-9) {
        throw ValidationError("ce_softmax target must sum to 1, sums to " + std::to_string(total));
      }
      auto prob = std::make_shared<std::vector<double>>(n);
      kernels::serial::softmax_rows(pv.data(), prob->data(), 1, n);
      double value = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (target[i] != 0.0) value -= target[i] * std::log(std::clamp((*prob)[i], lo, hi));
      }
      return pred.tape->record(DenseArray::scalar(value), {pred}, [ip, prob, tgt, n, lo, hi](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        auto& gx = t.grad(ip);
        const auto& p = *prob;
        bool clamped = false;
        for (std::size_t i = 0; i < n; ++i) clamped = clamped || ((*tgt)[i] != 0.0 && (p[i] < lo || p[i] > hi));
        if (!clamped) {
          double tsum = 0.0;
          for (std::size_t i = 0; i < n; ++i) tsum += (*tgt)[i];
          for (std::size_t i = 0; i < n; ++i) gx[i] += g * (p[i] * tsum - (*tgt)[i]);
          return;
        }
        std::vector<double> dp(n, 0.0);
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          if ((*tgt)[i] != 0.0 && p[i] >= lo && p[i] <= hi) dp[i] = -(*tgt)[i] / p[i];
          dot += dp[i] * p[i];
        }
        for (std::size_t i = 0; i < n; ++i) gx[i] += g * p[i] * (dp[i] - dot);
      });
    }
    case LossKind::kBce: {
      for (double t : target.values()) {
        if (t < 0.0 || t > 1.0) throw ValidationError("bce target outside [0,1]");
      }
      double value = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double p = std::clamp(pv[i], lo, hi);
        value -= target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p);
      }
      value /= static_cast<double>(n);
      return pred.tape->record(DenseArray::scalar(value), {pred}, [ip, tgt, n, lo, hi](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0] / static_cast<double>(n);
        const auto& pv = t.value(ip);
        auto& gx = t.grad(ip);
        for (std::size_t i = 0; i < n; ++i) {
          const double p = pv[i];
          if (p < lo || p > hi) continue;
          const double y = (*tgt)[i];
          gx[i] += g * (-y / p + (1.0 - y) / (1.0 - p));
        }
      });
    }
    case LossKind::kMse: {
      double value = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = pv[i] - target[i];
        value += d * d;
      }
      value /= static_cast<double>(n);
      return pred.tape->record(DenseArray::scalar(value), {pred}, [ip, tgt, n](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0] * 2.0 / static_cast<double>(n);
        const auto& pv = t.value(ip);
        auto& gx = t.grad(ip);
        for (std::size_t i = 0; i < n; ++i) gx[i] += g * (pv[i] - (*tgt)[i]);
      });
    }
  }
  throw ConfigError("unknown loss kind");
}

}  // namespace traceseq::numkit::ops
