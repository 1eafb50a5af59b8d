#pragma once

#include <memory>
#include <span>
#include <vector>

#include "proxprop/linalg.hpp"
#include "proxprop/network.hpp"
#include "proxprop/penalty.hpp"

namespace proxprop::prox {

enum class ProxMode { exact, cg };

struct ProxConfig {
  double tau_theta = 1.0;
  ProxMode mode = ProxMode::cg;
  int cg_iterations = 3;
  /// Relative residual at which CG stops early (exact-mode parity bound).
  double cg_tol = 1e-10;

  static ProxConfig exact(double tau_theta = 0.05) { return {tau_theta, ProxMode::exact, 0, 1e-10}; }
  static ProxConfig cg(int iterations, double tau_theta = 1.0) {
    return {tau_theta, ProxMode::cg, iterations, 1e-10};
  }
  /// Throws ConfigError on a non-positive tau_theta or CG iteration count.
  void validate() const;
};

/// M = I / tau_theta + (grad phi(., a)) (grad phi(., a))^*, applied matrix-free
/// through the layer's lowering of the captured activation.
class OperatorM {
 public:
  OperatorM(const nn::LinearTransfer& transfer, const Tensor& a, double tau_theta);

  Tensor apply(const Tensor& v) const;
  double tau_theta() const { return tau_theta_; }
  const Shape& shape() const { return shape_; }
  const nn::LinearTransfer& transfer() const { return transfer_; }
  /// Lowered activation P(a) the operator was built from.
  const Tensor& lowered() const { return *lowered_; }
  linalg::LinearOperator as_operator() const;
  /// (grad phi)(grad phi)^* alone, without the identity shift.
  linalg::LinearOperator gram_operator() const;

 private:
  nn::LinearTransfer transfer_;
  std::shared_ptr<const Tensor> lowered_;
  double tau_theta_;
  Shape shape_;
};

/// apply_M(opM, v) = v / tau_theta + phi_param_adjoint(phi_of_param(v, a), a)
Tensor apply_M(const OperatorM& op, const Tensor& v);

/// Half-step targets of the backward sweep for step size tau (rho = gamma = 1/tau).
penalty::HalfStep backward_sweep(const nn::Network& net, const nn::ForwardCache& cache,
                                 std::span<const int> labels, double tau);

/// argmin_theta 1/2 ||phi(theta, a) - z_target||^2 + 1/(2 tau_theta) ||theta - theta_k||^2
/// in closed form:
///   theta = (z_target P^T + theta_k / tau_theta) (P P^T + I / tau_theta)^{-1}
/// with P the ones-augmented activation. Fully connected layers only.
Tensor prox_step_exact(const nn::LinearTransfer& transfer, const Tensor& theta, const Tensor& a,
                       const Tensor& z_target, double tau_theta);

struct CgProxResult {
  Tensor theta;
  /// The CG solution v of M v = -g (so theta = theta_k + v).
  Tensor step;
  /// g = phi_param_adjoint(phi(theta_k, a) - z_target, a).
  Tensor gradient;
  int iterations = 0;
};

/// Same minimization approximated by k_cg CG iterations from zero on M v = -g.
CgProxResult prox_step_cg(const nn::LinearTransfer& transfer, const Tensor& theta, const Tensor& a,
                          const Tensor& z_target, double tau_theta, int k_cg,
                          double tol = 1e-10);

/// ProxProp as a first-order oracle: explicit gradient for the last stage,
/// theta_k - prox(theta_k) for every hidden stage, with the sweep run at
/// tau = 1. Network parameters are not modified.
nn::DirectionSet proxprop_directions(const nn::Network& net, const Tensor& x,
                                     std::span<const int> labels, const ProxConfig& config);

}  // namespace proxprop::prox
