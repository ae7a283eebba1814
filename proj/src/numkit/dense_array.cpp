#include "traceseq/numkit/dense_array.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "traceseq/errors.hpp"

namespace traceseq::numkit {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

namespace {
void check_extents(const Shape& shape) {
  if (shape.empty()) throw DimensionError("array shape must have at least one extent");
  for (auto e : shape) {
    if (e == 0) throw DimensionError("array extents must be positive, got " + shape_string(shape));
  }
}
}  // namespace

DenseArray::DenseArray(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  values_.assign(shape_size(shape_), fill);
}

DenseArray::DenseArray(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  check_extents(shape_);
  if (values_.size() != shape_size(shape_)) {
    throw DimensionError("value count " + std::to_string(values_.size()) + " does not match shape " +
                         shape_string(shape_));
  }
}

DenseArray DenseArray::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return DenseArray({n}, std::move(values));
}

DenseArray DenseArray::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return DenseArray({rows, cols}, std::move(values));
}

std::size_t DenseArray::rows() const {
  if (shape_.size() == 1) return 1;
  return shape_[0];
}

std::size_t DenseArray::cols() const { return shape_.back(); }

void DenseArray::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

void DenseArray::reshape(Shape shape) {
  if (shape_size(shape) != values_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
}

bool DenseArray::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

DenseArray zeros_like(const DenseArray& a) { return DenseArray(a.shape(), 0.0); }

double max_abs_diff(const DenseArray& a, const DenseArray& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace traceseq::numkit
