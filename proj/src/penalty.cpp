#include "proxprop/penalty.hpp"

#include <cmath>

namespace proxprop::penalty {

using nn::ForwardCache;
using nn::Network;

Activations feasible_activations(const ForwardCache& cache) {
  Activations vars;
  const std::size_t S = cache.stages.size();
  for (std::size_t s = 0; s < S; ++s) vars.a.push_back(cache.stages[s].input);
  for (std::size_t s = 0; s + 1 < S; ++s) vars.z.push_back(cache.stages[s].z);
  return vars;
}

double penalty_energy(const Network& net, const std::vector<Tensor>& theta, const Activations& vars,
                      std::span<const int> labels, double rho, double gamma) {
  const std::size_t S = net.num_stages();
  if (theta.size() != S || vars.a.size() != S || vars.z.size() + 1 != S) {
    throw DimensionError("penalty_energy: expected " + std::to_string(S) + " parameter blocks, " +
                         std::to_string(S) + " activations and " + std::to_string(S - 1) +
                         " pre-activations");
  }
  const Tensor logits = net.stage(S - 1).linear.apply(theta[S - 1], vars.a[S - 1]);
  double energy = nn::loss_softmax_xent(logits, labels).loss;
  for (std::size_t s = 0; s + 1 < S; ++s) {
    if (vars.z[s].rows() != net.stage(s).linear.out_features() || vars.z[s].cols() != vars.a[s].cols()) {
      throw DimensionError("penalty_energy: pre-activation " + std::to_string(s) + " has shape " +
                           shape_string(vars.z[s].shape()));
    }
    const Tensor coupling = net.stage(s).linear.apply(theta[s], vars.a[s]) - vars.z[s];
    Tensor activation_gap = nn::apply_sigma(net, s, vars.z[s]);
    require_same_shape(activation_gap, vars.a[s + 1], "penalty_energy");
    activation_gap -= vars.a[s + 1];
    energy += 0.5 * gamma * dot(activation_gap, activation_gap) + 0.5 * rho * dot(coupling, coupling);
  }
  return energy;
}

HalfStep backward_half_steps(const Network& net, const ForwardCache& cache,
                             std::span<const int> labels, const PenaltyParams& params) {
  nn::check_cache(net, cache);
  const std::size_t S = net.num_stages();
  const std::size_t last = S - 1;
  const double tau = params.tau;

  HalfStep half;
  half.a_half.resize(S);
  half.z_half.resize(S - 1);

  const nn::LossResult loss = nn::loss_softmax_xent(cache.logits(), labels);
  half.loss = loss.loss;
  const Tensor& a_last = cache.stages[last].input;

  // (a) simultaneous gradient step in (theta_last, a_last) from the pre-update state.
  half.last_theta_grad = net.stage(last).linear.param_adjoint(loss.grad_logits, a_last);
  if (S >= 2) {
    half.a_half[last] = a_last;
    axpy(-tau, net.stage(last).linear.input_adjoint(net.theta(last), loss.grad_logits),
         half.a_half[last]);
  }

  // (b) The forward state is feasible: sigma(z_s) == a_{s+1} and
  // phi(theta_s, a_s) == z_s hold exactly as computed, so the penalty terms
  // that measure those gaps contribute zero gradient here.
  for (std::size_t s = last; s-- > 0;) {
    const nn::StageCache& sc = cache.stages[s];
    const Tensor gap = cache.stages[s + 1].input - half.a_half[s + 1];
    Tensor grad_z = nn::sigma_adjoint(net, cache, s, gap);
    grad_z *= params.gamma;
    half.z_half[s] = sc.z;
    axpy(-tau, grad_z, half.z_half[s]);

    if (s >= 1) {
      Tensor grad_a = net.stage(s).linear.input_adjoint(net.theta(s), sc.z - half.z_half[s]);
      grad_a *= params.rho;
      half.a_half[s] = sc.input;
      axpy(-tau, grad_a, half.a_half[s]);
    }
  }

  half.diverged = cache.diverged || !std::isfinite(half.loss) || !half.last_theta_grad.all_finite();
  for (const Tensor& z : half.z_half) half.diverged = half.diverged || !z.all_finite();
  return half;
}

StepResult penalty_backprop_step(const Network& net, const Tensor& x, std::span<const int> labels,
                                 const PenaltyParams& params) {
  if (!(params.tau > 0.0)) throw InputError("penalty_backprop_step: tau must be positive");
  const ForwardCache cache = nn::forward(net, x);
  StepResult result;
  result.theta = net.params();
  if (cache.diverged) {
    result.diverged = true;
    return result;
  }
  result.half = backward_half_steps(net, cache, labels, params);
  const std::size_t last = net.num_stages() - 1;
  axpy(-params.tau, result.half.last_theta_grad, result.theta[last]);

  // (c) gradient step in theta_s on rho/2 ||phi(theta_s, a_s) - z_half_s||^2,
  // evaluated at the forward activations where phi(theta_s, a_s) = z_s.
  for (std::size_t s = 0; s < last; ++s) {
    const nn::StageCache& sc = cache.stages[s];
    const Tensor grad = net.stage(s).linear.param_adjoint(sc.z - result.half.z_half[s], sc.input);
    axpy(-params.tau * params.rho, grad, result.theta[s]);
  }
  result.diverged = result.half.diverged;
  for (const Tensor& t : result.theta) result.diverged = result.diverged || !t.all_finite();
  return result;
}

StepResult penalty_backprop_step(const Network& net, const Tensor& x, std::span<const int> labels,
                                 double tau) {
  return penalty_backprop_step(net, x, labels, PenaltyParams::backprop_regime(tau));
}

}  // namespace proxprop::penalty
