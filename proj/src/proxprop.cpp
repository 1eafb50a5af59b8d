#include "proxprop/proxprop.hpp"

#include <cmath>

namespace proxprop::prox {

using kernels::Trans;
using nn::DirectionSet;

void ProxConfig::validate() const {
  if (!(tau_theta > 0.0) || !std::isfinite(tau_theta)) throw ConfigError("tau_theta must be positive");
  if (mode == ProxMode::cg && cg_iterations < 1) throw ConfigError("CG iteration count must be >= 1");
  if (!(cg_tol >= 0.0)) throw ConfigError("cg_tol must be non-negative");
}

OperatorM::OperatorM(const nn::LinearTransfer& transfer, const Tensor& a, double tau_theta)
    : transfer_(transfer),
      lowered_(std::make_shared<const Tensor>(transfer.lower(a))),
      tau_theta_(tau_theta),
      shape_(transfer.param_shape()) {
  if (!(tau_theta > 0.0)) throw InputError("OperatorM: tau_theta must be positive");
}

Tensor OperatorM::apply(const Tensor& v) const {
  if (v.shape() != shape_) {
    throw DimensionError("apply_M: got " + shape_string(v.shape()) + ", expected " + shape_string(shape_));
  }
  Tensor out = transfer_.param_adjoint_lowered(transfer_.apply_lowered(v, *lowered_), *lowered_);
  axpy(1.0 / tau_theta_, v, out);
  return out;
}

linalg::LinearOperator OperatorM::as_operator() const {
  return {shape_, [self = *this](const Tensor& v) { return self.apply(v); }};
}

linalg::LinearOperator OperatorM::gram_operator() const {
  return {shape_, [self = *this](const Tensor& v) {
            if (v.shape() != self.shape_) throw DimensionError("gram_operator: shape mismatch");
            return self.transfer_.param_adjoint_lowered(
                self.transfer_.apply_lowered(v, *self.lowered_), *self.lowered_);
          }};
}

Tensor apply_M(const OperatorM& op, const Tensor& v) { return op.apply(v); }

penalty::HalfStep backward_sweep(const nn::Network& net, const nn::ForwardCache& cache,
                                 std::span<const int> labels, double tau) {
  if (!(tau > 0.0)) throw InputError("backward_sweep: tau must be positive");
  return penalty::backward_half_steps(net, cache, labels, penalty::PenaltyParams::backprop_regime(tau));
}

Tensor prox_step_exact(const nn::LinearTransfer& transfer, const Tensor& theta, const Tensor& a,
                       const Tensor& z_target, double tau_theta) {
  if (transfer.kind() != nn::LinearKind::fully_connected) {
    throw ConfigError("prox_step_exact: only fully connected layers have a closed-form prox here");
  }
  if (!(tau_theta > 0.0)) throw InputError("prox_step_exact: tau_theta must be positive");
  if (theta.shape() != transfer.param_shape()) throw DimensionError("prox_step_exact: parameter shape mismatch");
  if (z_target.rows() != transfer.out_features() || z_target.cols() != a.cols()) {
    throw DimensionError("prox_step_exact: target shape " + shape_string(z_target.shape()));
  }
  const Tensor lowered = transfer.lower(a);
  const double inv_tau = 1.0 / tau_theta;

  // System matrix of size (fan_in + 1), independent of the batch size.
  Tensor system = linalg::gemm(lowered, lowered, Trans::no, Trans::yes);
  for (std::size_t i = 0; i < system.rows(); ++i) system(i, i) += inv_tau;
  Tensor rhs = linalg::gemm(z_target, lowered, Trans::no, Trans::yes);
  axpy(inv_tau, theta, rhs);

  return transpose(linalg::direct_spd_solve(system, transpose(rhs)));
}

CgProxResult prox_step_cg(const nn::LinearTransfer& transfer, const Tensor& theta, const Tensor& a,
                          const Tensor& z_target, double tau_theta, int k_cg, double tol) {
  if (k_cg < 1) throw InputError("prox_step_cg: k_cg must be >= 1");
  const OperatorM op(transfer, a, tau_theta);
  if (theta.shape() != op.shape()) throw DimensionError("prox_step_cg: parameter shape mismatch");

  if (z_target.rows() != transfer.out_features() || z_target.cols() != a.cols()) {
    throw DimensionError("prox_step_cg: target shape " + shape_string(z_target.shape()));
  }
  CgProxResult result;
  // phi(theta_k, a) - z_target equals tau * dJ/dz at the sweep targets.
  result.gradient = transfer.param_adjoint_lowered(
      transfer.apply_lowered(theta, op.lowered()) - z_target, op.lowered());
  Tensor rhs = result.gradient;
  rhs *= -1.0;
  linalg::CgResult cg = linalg::cg_solve(op.as_operator(), rhs, k_cg, tol);
  result.iterations = cg.iterations;
  result.step = std::move(cg.x);
  result.theta = theta + result.step;
  return result;
}

DirectionSet proxprop_directions(const nn::Network& net, const Tensor& x, std::span<const int> labels,
                                 const ProxConfig& config) {
  config.validate();
  const nn::ForwardCache cache = nn::forward(net, x);
  const std::size_t S = net.num_stages();
  DirectionSet dirs;
  dirs.directions.resize(S);
  dirs.updates.assign(S, DirectionSet::Update::implicit_step);
  dirs.updates[S - 1] = DirectionSet::Update::explicit_step;
  if (cache.diverged) {
    for (std::size_t s = 0; s < S; ++s) dirs.directions[s] = Tensor(net.theta(s).shape());
    dirs.diverged = true;
    return dirs;
  }

  const penalty::HalfStep half = backward_sweep(net, cache, labels, 1.0);
  dirs.directions[S - 1] = half.last_theta_grad;

  // Hidden-stage solves are independent once the sweep targets exist.
  for (std::size_t s = 0; s + 1 < S; ++s) {
    const nn::LinearTransfer& lin = net.stage(s).linear;
    const Tensor& a = cache.stages[s].input;
    if (config.mode == ProxMode::exact) {
      if (lin.kind() != nn::LinearKind::fully_connected) {
        throw ConfigError("exact ProxProp supports fully connected layers only; use cg mode");
      }
      dirs.directions[s] = net.theta(s) - prox_step_exact(lin, net.theta(s), a, half.z_half[s], config.tau_theta);
    } else {
      CgProxResult r = prox_step_cg(lin, net.theta(s), a, half.z_half[s], config.tau_theta,
                                    config.cg_iterations, config.cg_tol);
      dirs.directions[s] = std::move(r.step);
      dirs.directions[s] *= -1.0;
    }
  }
  dirs.diverged = half.diverged;
  for (const Tensor& d : dirs.directions) dirs.diverged = dirs.diverged || !d.all_finite();
  return dirs;
}

}  // namespace proxprop::prox
