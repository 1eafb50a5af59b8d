#pragma once

#include <cstddef>
#include <string>

#include "proxprop/kernels.hpp"
#include "proxprop/tensor.hpp"

namespace proxprop::nn {

/// Geometry of one sample's features. Fully connected layers use
/// channels = n, height = width = 1.
struct FeatureShape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t size() const { return channels * height * width; }
  friend bool operator==(const FeatureShape&, const FeatureShape&) = default;
};

std::string to_string(const FeatureShape& s);

enum class LinearKind { fully_connected, conv2d };

/// A parametric linear transfer phi(theta, a).
///
/// Every kind is expressed through a lowering a -> P(a) so that
///   phi(theta, a)                = theta * P(a)
///   param adjoint  (r, a)        = r * P(a)^T
/// with theta stored as out_rows x (patch_size [+ 1]). For fully connected
/// layers P(a) = [a; 1^T]; for convolutions P(a) is the im2col patch matrix
/// with an appended ones row. Without bias the ones row is dropped.
class LinearTransfer {
 public:
  static LinearTransfer fully_connected(std::size_t in, std::size_t out, bool bias = true);
  static LinearTransfer conv2d(FeatureShape in, std::size_t out_channels, std::size_t kernel,
                               std::size_t stride = 1, std::size_t padding = 0, bool bias = true);

  LinearKind kind() const { return kind_; }
  bool has_bias() const { return bias_; }
  const FeatureShape& input_shape() const { return in_; }
  FeatureShape output_shape() const;
  std::size_t in_features() const { return in_.size(); }
  std::size_t out_features() const { return output_shape().size(); }
  /// Shape of theta.
  Shape param_shape() const;
  /// Number of inputs feeding one output, used for initialization.
  std::size_t fan_in() const;
  /// Output pixels per sample (1 for fully connected).
  std::size_t out_pixels() const;
  const kernels::ConvGeometry& geometry() const { return geom_; }

  /// P(a): rows = patch_size (+1 with bias), cols = out_pixels * batch.
  Tensor lower(const Tensor& a) const;

  /// phi(theta, a), shaped out_features x batch.
  Tensor apply(const Tensor& theta, const Tensor& a) const;
  Tensor apply_lowered(const Tensor& theta, const Tensor& lowered) const;

  /// (grad_theta phi(., a)) applied to an output-shaped residual; theta-shaped.
  Tensor param_adjoint(const Tensor& residual, const Tensor& a) const;
  Tensor param_adjoint_lowered(const Tensor& residual, const Tensor& lowered) const;

  /// (grad_a phi(theta, .)) applied to an output-shaped residual; shaped like a.
  Tensor input_adjoint(const Tensor& theta, const Tensor& residual) const;

  std::string describe() const;

 private:
  LinearTransfer(LinearKind kind, FeatureShape in, std::size_t out_channels,
                 kernels::ConvGeometry geom, bool bias)
      : kind_(kind), in_(in), out_channels_(out_channels), geom_(geom), bias_(bias) {}

  void check_theta(const Tensor& theta, const char* context) const;
  void check_input(const Tensor& a, const char* context) const;
  void check_output(const Tensor& r, const char* context) const;

  LinearKind kind_;
  FeatureShape in_;
  std::size_t out_channels_;
  kernels::ConvGeometry geom_;
  bool bias_;
};

enum class NonlinearKind { relu, tanh, maxpool2d };

/// A parameter-free transfer sigma.
class Nonlinearity {
 public:
  static Nonlinearity relu() { return Nonlinearity(NonlinearKind::relu, {}, 0, 0); }
  static Nonlinearity tanh() { return Nonlinearity(NonlinearKind::tanh, {}, 0, 0); }
  static Nonlinearity maxpool(FeatureShape in, std::size_t window, std::size_t stride);

  NonlinearKind kind() const { return kind_; }
  bool elementwise() const { return kind_ != NonlinearKind::maxpool2d; }
  /// Output geometry for a given input geometry.
  FeatureShape output_shape(const FeatureShape& in) const;

  Tensor apply(const Tensor& x) const;
  /// Elementwise derivative sigma'(x); only for elementwise kinds.
  Tensor derivative(const Tensor& x) const;
  /// J_sigma(x) v
  Tensor jacobian_apply(const Tensor& x, const Tensor& v) const;
  /// J_sigma(x)^T w. ReLU uses sigma'(0) = 0; maxpool routes to the first
  /// maximal entry of each window in scan order.
  Tensor jacobian_adjoint_apply(const Tensor& x, const Tensor& w) const;

  std::string describe() const;

 private:
  Nonlinearity(NonlinearKind kind, FeatureShape in, std::size_t window, std::size_t stride)
      : kind_(kind), in_(in), window_(window), stride_(stride) {}

  // Flat input row index of each output entry's maximal window element.
  std::vector<std::size_t> argmax_rows(const Tensor& x) const;
  void check_pool_input(const Tensor& x) const;

  NonlinearKind kind_;
  FeatureShape in_;
  std::size_t window_;
  std::size_t stride_;
};

}  // namespace proxprop::nn
