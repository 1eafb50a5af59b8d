#include "proxprop/layers.hpp"

#include <algorithm>
#include <cmath>

#include "proxprop/linalg.hpp"

namespace proxprop::nn {

using kernels::Trans;

std::string to_string(const FeatureShape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

LinearTransfer LinearTransfer::fully_connected(std::size_t in, std::size_t out, bool bias) {
  if (in == 0 || out == 0) throw DimensionError("fully_connected: zero-width layer");
  return LinearTransfer(LinearKind::fully_connected, FeatureShape{in, 1, 1}, out,
                        kernels::ConvGeometry{}, bias);
}

LinearTransfer LinearTransfer::conv2d(FeatureShape in, std::size_t out_channels, std::size_t kernel,
                                      std::size_t stride, std::size_t padding, bool bias) {
  kernels::ConvGeometry g{in.channels, in.height, in.width, kernel, kernel, stride, padding};
  if (out_channels == 0 || in.size() == 0 || !g.valid()) {
    throw DimensionError("conv2d: invalid geometry for input " + to_string(in));
  }
  return LinearTransfer(LinearKind::conv2d, in, out_channels, g, bias);
}

FeatureShape LinearTransfer::output_shape() const {
  if (kind_ == LinearKind::fully_connected) return FeatureShape{out_channels_, 1, 1};
  return FeatureShape{out_channels_, geom_.out_h(), geom_.out_w()};
}

Shape LinearTransfer::param_shape() const { return Shape{out_channels_, fan_in() + (bias_ ? 1 : 0)}; }

std::size_t LinearTransfer::fan_in() const {
  return kind_ == LinearKind::fully_connected ? in_.size() : geom_.patch_size();
}

std::size_t LinearTransfer::out_pixels() const {
  return kind_ == LinearKind::fully_connected ? 1 : geom_.out_h() * geom_.out_w();
}

void LinearTransfer::check_theta(const Tensor& theta, const char* context) const {
  if (theta.shape() != param_shape()) {
    throw DimensionError(std::string(context) + ": parameter shape " +
                         shape_string(theta.shape()) + ", expected " + shape_string(param_shape()));
  }
}

void LinearTransfer::check_input(const Tensor& a, const char* context) const {
  if (a.rank() != 2 || a.rows() != in_features()) {
    throw DimensionError(std::string(context) + ": input shape " + shape_string(a.shape()) +
                         ", expected " + std::to_string(in_features()) + " rows");
  }
}

void LinearTransfer::check_output(const Tensor& r, const char* context) const {
  if (r.rank() != 2 || r.rows() != out_features()) {
    throw DimensionError(std::string(context) + ": output-side shape " + shape_string(r.shape()) +
                         ", expected " + std::to_string(out_features()) + " rows");
  }
}

Tensor LinearTransfer::lower(const Tensor& a) const {
  check_input(a, "lower");
  const std::size_t batch = a.cols();
  const std::size_t patch = fan_in();
  const std::size_t cols = out_pixels() * batch;
  Tensor lowered = Tensor::matrix(patch + (bias_ ? 1 : 0), cols);
  if (kind_ == LinearKind::fully_connected) {
    std::copy(a.data(), a.data() + a.size(), lowered.data());
  } else {
    kernels::im2col(geom_, {a.data(), a.rows(), a.cols()}, {lowered.data(), patch, cols});
  }
  if (bias_) std::fill(lowered.row(patch), lowered.row(patch) + cols, 1.0);
  return lowered;
}

Tensor LinearTransfer::apply(const Tensor& theta, const Tensor& a) const {
  check_theta(theta, "phi");
  return apply_lowered(theta, lower(a));
}

Tensor LinearTransfer::apply_lowered(const Tensor& theta, const Tensor& lowered) const {
  check_theta(theta, "phi");
  const std::size_t batch = lowered.cols() / out_pixels();
  return linalg::gemm(theta, lowered).reshaped(Shape{out_features(), batch});
}

Tensor LinearTransfer::param_adjoint(const Tensor& residual, const Tensor& a) const {
  check_output(residual, "phi_param_adjoint");
  if (residual.cols() != a.cols()) throw DimensionError("phi_param_adjoint: batch sizes differ");
  return param_adjoint_lowered(residual, lower(a));
}

Tensor LinearTransfer::param_adjoint_lowered(const Tensor& residual, const Tensor& lowered) const {
  check_output(residual, "phi_param_adjoint");
  const Tensor r = residual.reshaped(Shape{out_channels_, out_pixels() * residual.cols()});
  if (r.cols() != lowered.cols()) throw DimensionError("phi_param_adjoint: batch sizes differ");
  return linalg::gemm(r, lowered, Trans::no, Trans::yes);
}

Tensor LinearTransfer::input_adjoint(const Tensor& theta, const Tensor& residual) const {
  check_theta(theta, "phi_input_adjoint");
  check_output(residual, "phi_input_adjoint");
  const std::size_t patch = fan_in();
  const std::size_t batch = residual.cols();
  Tensor weights = Tensor::matrix(out_channels_, patch);
  for (std::size_t i = 0; i < out_channels_; ++i)
    std::copy(theta.row(i), theta.row(i) + patch, weights.row(i));
  const Tensor r = residual.reshaped(Shape{out_channels_, out_pixels() * batch});
  Tensor patch_grad = linalg::gemm(weights, r, Trans::yes, Trans::no);
  if (kind_ == LinearKind::fully_connected) return patch_grad;
  Tensor grad = Tensor::matrix(in_features(), batch);
  kernels::col2im(geom_, {patch_grad.data(), patch_grad.rows(), patch_grad.cols()},
                  {grad.data(), grad.rows(), grad.cols()});
  return grad;
}

std::string LinearTransfer::describe() const {
  if (kind_ == LinearKind::fully_connected) {
    return "fc(" + std::to_string(in_.size()) + "->" + std::to_string(out_channels_) + ")";
  }
  return "conv(" + to_string(in_) + "->" + std::to_string(out_channels_) + "@" +
         std::to_string(geom_.kernel_h) + "x" + std::to_string(geom_.kernel_w) + ",s" +
         std::to_string(geom_.stride) + ",p" + std::to_string(geom_.padding) + ")";
}

// ---------------------------------------------------------------------------

Nonlinearity Nonlinearity::maxpool(FeatureShape in, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0 || window > in.height || window > in.width) {
    throw DimensionError("maxpool: window does not fit input " + to_string(in));
  }
  return Nonlinearity(NonlinearKind::maxpool2d, in, window, stride);
}

FeatureShape Nonlinearity::output_shape(const FeatureShape& in) const {
  if (elementwise()) return in;
  if (!(in == in_)) throw DimensionError("maxpool: built for " + to_string(in_) + ", got " + to_string(in));
  return FeatureShape{in.channels, (in.height - window_) / stride_ + 1,
                      (in.width - window_) / stride_ + 1};
}

void Nonlinearity::check_pool_input(const Tensor& x) const {
  if (x.rank() != 2 || x.rows() != in_.size()) {
    throw DimensionError("maxpool: input shape " + shape_string(x.shape()) + " vs " + to_string(in_));
  }
}

std::vector<std::size_t> Nonlinearity::argmax_rows(const Tensor& x) const {
  check_pool_input(x);
  const FeatureShape out = output_shape(in_);
  const std::size_t batch = x.cols();
  std::vector<std::size_t> arg(out.size() * batch);
  for (std::size_t c = 0; c < out.channels; ++c) {
    for (std::size_t oy = 0; oy < out.height; ++oy) {
      for (std::size_t ox = 0; ox < out.width; ++ox) {
        const std::size_t o = (c * out.height + oy) * out.width + ox;
        for (std::size_t n = 0; n < batch; ++n) {
          std::size_t best = (c * in_.height + oy * stride_) * in_.width + ox * stride_;
          double best_value = x(best, n);
          for (std::size_t wy = 0; wy < window_; ++wy) {
            for (std::size_t wx = 0; wx < window_; ++wx) {
              const std::size_t r = (c * in_.height + oy * stride_ + wy) * in_.width + ox * stride_ + wx;
              if (x(r, n) > best_value) {
                best_value = x(r, n);
                best = r;
              }
            }
          }
          arg[o * batch + n] = best;
        }
      }
    }
  }
  return arg;
}

Tensor Nonlinearity::apply(const Tensor& x) const {
  switch (kind_) {
    case NonlinearKind::relu: {
      Tensor y = x;
      for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
      return y;
    }
    case NonlinearKind::tanh: {
      Tensor y = x;
      for (double& v : y.values()) v = std::tanh(v);
      return y;
    }
    case NonlinearKind::maxpool2d: {
      const auto arg = argmax_rows(x);
      const std::size_t batch = x.cols();
      Tensor y = Tensor::matrix(arg.size() / std::max<std::size_t>(batch, 1), batch);
      for (std::size_t k = 0; k < arg.size(); ++k) y[k] = x(arg[k], k % batch);
      return y;
    }
  }
  return {};
}

Tensor Nonlinearity::derivative(const Tensor& x) const {
  Tensor d = x;
  switch (kind_) {
    case NonlinearKind::relu:
      for (double& v : d.values()) v = v > 0.0 ? 1.0 : 0.0;
      return d;
    case NonlinearKind::tanh:
      for (double& v : d.values()) {
        const double t = std::tanh(v);
        v = 1.0 - t * t;
      }
      return d;
    case NonlinearKind::maxpool2d:
      break;
  }
  throw InputError("derivative: maxpool is not elementwise");
}

Tensor Nonlinearity::jacobian_apply(const Tensor& x, const Tensor& v) const {
  require_same_shape(x, v, "jacobian_apply");
  if (elementwise()) {
    Tensor d = derivative(x);
    for (std::size_t k = 0; k < d.size(); ++k) d[k] *= v[k];
    return d;
  }
  const auto arg = argmax_rows(x);
  const std::size_t batch = x.cols();
  Tensor y = Tensor::matrix(arg.size() / std::max<std::size_t>(batch, 1), batch);
  for (std::size_t k = 0; k < arg.size(); ++k) y[k] = v(arg[k], k % batch);
  return y;
}

Tensor Nonlinearity::jacobian_adjoint_apply(const Tensor& x, const Tensor& w) const {
  if (elementwise()) {
    require_same_shape(x, w, "jacobian_adjoint_apply");
    Tensor d = derivative(x);
    for (std::size_t k = 0; k < d.size(); ++k) d[k] *= w[k];
    return d;
  }
  const auto arg = argmax_rows(x);
  const std::size_t batch = x.cols();
  if (w.rank() != 2 || w.cols() != batch || w.size() != arg.size()) {
    throw DimensionError("maxpool adjoint: output-side shape " + shape_string(w.shape()));
  }
  Tensor g(x.shape());
  for (std::size_t k = 0; k < arg.size(); ++k) g(arg[k], k % batch) += w[k];
  return g;
}

std::string Nonlinearity::describe() const {
  switch (kind_) {
    case NonlinearKind::relu:
      return "relu";
    case NonlinearKind::tanh:
      return "tanh";
    case NonlinearKind::maxpool2d:
      return "maxpool(" + std::to_string(window_) + ",s" + std::to_string(stride_) + ")";
  }
  return "?";
}

}  // namespace proxprop::nn
