#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace traceseq::numkit {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

// Row-major array of doubles. Rank 1 arrays behave as row vectors
// (1 x size) wherever a matrix is expected.
class DenseArray {
 public:
  DenseArray() = default;
  explicit DenseArray(Shape shape, double fill = 0.0);
  DenseArray(Shape shape, std::vector<double> values);

  static DenseArray vector(std::vector<double> values);
  static DenseArray matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static DenseArray scalar(double v) { return DenseArray({1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  // Matrix view: rank-1 arrays are 1 x n.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  void fill(double v);
  void reshape(Shape shape);
  bool all_finite() const;

  bool operator==(const DenseArray& other) const = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

DenseArray zeros_like(const DenseArray& a);
double max_abs_diff(const DenseArray& a, const DenseArray& b);

}  // namespace traceseq::numkit
