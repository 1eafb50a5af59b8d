#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "proxprop/errors.hpp"

namespace proxprop {

using Shape = std::vector<std::size_t>;

/// Dense row-major array of doubles.
///
/// Rank-2 tensors are the workhorse: activations are stored as
/// features x batch (one column per sample), parameters as
/// out x (fan_in + 1) with the bias in the last column.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor(Shape{rows, cols}, fill);
  }
  static Tensor identity(std::size_t n);
  /// Builds a matrix from nested rows; all rows must have equal length.
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Matrix accessors. Rank-1 tensors behave as column vectors.
  std::size_t rows() const;
  std::size_t cols() const;
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }

  double& operator[](std::size_t k) { return data_[k]; }
  double operator[](std::size_t k) const { return data_[k]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* row(std::size_t i) { return data_.data() + i * cols(); }
  const double* row(std::size_t i) const { return data_.data() + i * cols(); }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  /// Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;
  bool all_finite() const noexcept;
  void fill(double value);

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);
Tensor operator*(double s, Tensor a);

std::string shape_string(const Shape& shape);
/// Throws DimensionError naming `context` when shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* context);

/// Flat inner product <a, b> over all entries.
double dot(const Tensor& a, const Tensor& b);
/// Frobenius norm.
double norm(const Tensor& a);
/// y += alpha * x
void axpy(double alpha, const Tensor& x, Tensor& y);
Tensor transpose(const Tensor& a);
double max_abs(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);
/// ||a - b|| / max(||b||, floor)
double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-300);

/// Horizontal concatenation of the given columns of a matrix.
Tensor select_columns(const Tensor& a, std::span<const std::size_t> columns);

}  // namespace proxprop
