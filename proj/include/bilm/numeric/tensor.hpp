#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bilm/errors.hpp"
#include "bilm/rng.hpp"

namespace bilm {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(Shape s) {
  std::ostringstream os;
  os << s.rows << "x" << s.cols;
  return os.str();
}

// Dense row-major matrix of doubles with an optional gradient slot of the
// same shape. Vectors are 1xn or nx1 tensors.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : shape_{rows, cols}, values_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
      : shape_{rows, cols}, values_(std::move(values)) {
    if (values_.size() != shape_.size()) {
      throw DimensionError("tensor of shape " + to_string(shape_) + " given " +
                           std::to_string(values_.size()) + " values");
    }
  }
  Tensor(std::initializer_list<std::initializer_list<double>> rows) {
    shape_.rows = rows.size();
    shape_.cols = rows.size() ? rows.begin()->size() : 0;
    values_.reserve(shape_.size());
    for (const auto& r : rows) {
      if (r.size() != shape_.cols) throw DimensionError("ragged tensor literal");
      values_.insert(values_.end(), r.begin(), r.end());
    }
  }

  Shape shape() const { return shape_; }
  std::size_t rows() const { return shape_.rows; }
  std::size_t cols() const { return shape_.cols; }
  std::size_t size() const { return values_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * shape_.cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * shape_.cols + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  bool has_grad() const { return grad_enabled_; }
  void enable_grad() {
    grad_.assign(values_.size(), 0.0);
    grad_enabled_ = true;
  }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  void fill_uniform(Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : values_) v = dist(rng);
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

 private:
  Shape shape_;
  std::vector<double> values_;
  std::vector<double> grad_;
  bool grad_enabled_ = false;
};

inline void require_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

}  // namespace bilm
