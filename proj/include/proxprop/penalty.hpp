#pragma once

#include <span>
#include <vector>

#include "proxprop/network.hpp"

namespace proxprop::penalty {

/// Weights of the quadratic penalty energy and the step size of the
/// sequential gradient steps taken on it.
struct PenaltyParams {
  double rho = 1.0;
  double gamma = 1.0;
  double tau = 1.0;

  /// rho = gamma = 1/tau, where the sequential steps reproduce gradient descent.
  static PenaltyParams backprop_regime(double tau) { return {1.0 / tau, 1.0 / tau, tau}; }
};

/// Auxiliary variables of the penalty energy. Stage indices follow the
/// network: a[s] is the input of stage s (a[0] = X, fixed), z[s] is the
/// pre-activation of hidden stage s (s < num_stages - 1).
struct Activations {
  std::vector<Tensor> a;
  std::vector<Tensor> z;
};

/// The (a, z) recorded by a forward pass, a feasible point of the constraints.
Activations feasible_activations(const nn::ForwardCache& cache);

/// E(theta, a, z) =  L_y(phi(theta_last, a_last))
///                 + sum_hidden gamma/2 ||sigma(z_s) - a_{s+1}||^2 + rho/2 ||phi(theta_s, a_s) - z_s||^2
double penalty_energy(const nn::Network& net, const std::vector<Tensor>& theta,
                      const Activations& vars, std::span<const int> labels, double rho,
                      double gamma);

/// Intermediate quantities of one backward sequence of gradient steps on E.
struct HalfStep {
  /// a_half[s]: updated input of stage s, for s >= 1 (a_half[0] is left empty).
  std::vector<Tensor> a_half;
  /// z_half[s]: updated pre-activation of hidden stage s.
  std::vector<Tensor> z_half;
  /// Gradient of the loss with respect to the last stage's parameters.
  Tensor last_theta_grad;
  double loss = 0.0;
  bool diverged = false;
};

/// Steps (a) and (b) from the forward state recorded in `cache`: a gradient
/// step on E in a_last, then for each hidden stage from the top down a
/// gradient step in z_s followed by one in a_s (using the updated z_s).
HalfStep backward_half_steps(const nn::Network& net, const nn::ForwardCache& cache,
                             std::span<const int> labels, const PenaltyParams& params);

struct StepResult {
  std::vector<Tensor> theta;
  HalfStep half;
  bool diverged = false;
};

/// One forward pass followed by the full sequence of gradient steps on E;
/// returns the new parameters. With PenaltyParams::backprop_regime(tau) the
/// result equals theta - tau * grad J.
StepResult penalty_backprop_step(const nn::Network& net, const Tensor& x,
                                 std::span<const int> labels, const PenaltyParams& params);
StepResult penalty_backprop_step(const nn::Network& net, const Tensor& x,
                                 std::span<const int> labels, double tau);

}  // namespace proxprop::penalty
