#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "proxprop/penalty.hpp"
#include "proxprop/verify.hpp"

using namespace proxprop;
using namespace proxprop::penalty;
using nn::NonlinearKind;

namespace {

std::vector<Tensor> gd_step(const nn::Network& net, const Tensor& x, std::span<const int> labels, double tau) {
  const nn::DirectionSet g = nn::backprop_grad(net, nn::forward(net, x), labels);
  std::vector<Tensor> out = net.params();
  for (std::size_t s = 0; s < out.size(); ++s) axpy(-tau, g.directions[s], out[s]);
  return out;
}

double max_block_rel(const std::vector<Tensor>& a, const std::vector<Tensor>& b, const std::vector<Tensor>& base) {
  double worst = 0.0;
  for (std::size_t s = 0; s < a.size(); ++s)
    worst = std::max(worst, relative_error(a[s] - base[s], b[s] - base[s], 1e-300));
  return worst;
}

double min_abs_hidden_preactivation(const nn::Network& net, const Tensor& x) {
  const nn::ForwardCache c = nn::forward(net, x);
  double m = INFINITY;
  for (std::size_t s = 0; s + 1 < net.num_stages(); ++s)
    for (double v : c.stages[s].z.values()) m = std::min(m, std::abs(v));
  return m;
}

}  // namespace

TEST(PenaltyEnergy, FeasiblePointEqualsLoss) {
  const verify::Problem p = verify::random_problem(1, 2, 8, 5, NonlinearKind::tanh);
  const nn::ForwardCache c = nn::forward(p.net, p.x);
  const double j = nn::loss_softmax_xent(c.logits(), p.labels).loss;
  const Activations vars = feasible_activations(c);
  EXPECT_NEAR(penalty_energy(p.net, p.net.params(), vars, p.labels, 3.0, 7.0), j, 1e-14);
}

TEST(PenaltyEnergy, PerturbedPreactivationAddsExactTerms) {
  const verify::Problem p = verify::random_problem(2, 2, 8, 5, NonlinearKind::tanh);
  const nn::ForwardCache c = nn::forward(p.net, p.x);
  Activations vars = feasible_activations(c);
  const double j = penalty_energy(p.net, p.net.params(), vars, p.labels, 1.0, 1.0);
  std::mt19937_64 rng(3);
  const Tensor delta = verify::random_normal(vars.z[0].rows(), vars.z[0].cols(), rng, 0.1);
  vars.z[0] += delta;
  const double rho = 2.5, gamma = 0.7;
  const Tensor gap = nn::apply_sigma(p.net, 0, vars.z[0]) - vars.a[1];
  const double expected = j + 0.5 * gamma * dot(gap, gap) + 0.5 * rho * dot(delta, delta);
  EXPECT_NEAR(penalty_energy(p.net, p.net.params(), vars, p.labels, rho, gamma), expected, 1e-12);
}

TEST(PenaltyEnergy, ZeroWeightsLeaveOnlyTheLoss) {
  const verify::Problem p = verify::random_problem(4, 2, 6, 4, NonlinearKind::relu);
  const nn::ForwardCache c = nn::forward(p.net, p.x);
  Activations vars = feasible_activations(c);
  for (Tensor& z : vars.z) z *= 3.0;
  for (std::size_t s = 1; s < vars.a.size(); ++s) vars.a[s] *= -2.0;
  const std::size_t last = p.net.num_stages() - 1;
  const Tensor logits = p.net.stage(last).linear.apply(p.net.theta(last), vars.a[last]);
  EXPECT_DOUBLE_EQ(penalty_energy(p.net, p.net.params(), vars, p.labels, 0.0, 0.0),
                   nn::loss_softmax_xent(logits, p.labels).loss);
}

TEST(PenaltyEnergy, ShapeMismatchThrows) {
  const verify::Problem p = verify::random_problem(5, 1, 6, 4, NonlinearKind::relu);
  Activations vars = feasible_activations(nn::forward(p.net, p.x));
  vars.z.clear();
  EXPECT_THROW(penalty_energy(p.net, p.net.params(), vars, p.labels, 1.0, 1.0), DimensionError);
}

TEST(PenaltyStep, StationaryPointLeavesParametersUnchanged) {
  // Zero parameters and two identical samples with opposite labels: dJ = 0.
  const nn::Network net = nn::make_mlp(std::vector<std::size_t>{3, 4, 2}, NonlinearKind::tanh);
  const Tensor x = Tensor::from_rows({{1, 1}, {2, 2}, {-1, -1}});
  const std::vector<int> labels = {0, 1};
  const StepResult r = penalty_backprop_step(net, x, labels, 0.5);
  EXPECT_EQ(r.theta, net.params());
}

TEST(PenaltyStep, EqualsGradientDescentOnTanhNets) {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    std::mt19937_64 rng(seed);
    const double tau = std::exp(std::uniform_real_distribution<double>(std::log(0.05), std::log(2.0))(rng));
    const verify::Problem p = verify::random_problem(seed, 2, 16, 8, NonlinearKind::tanh);
    const StepResult r = penalty_backprop_step(p.net, p.x, p.labels, tau);
    ASSERT_FALSE(r.diverged);
    EXPECT_LE(max_block_rel(r.theta, gd_step(p.net, p.x, p.labels, tau), p.net.params()), 1e-10) << "seed " << seed;
  }
}

TEST(PenaltyStep, EqualsGradientDescentOnReluNetsAwayFromKinks) {
  int tested = 0;
  for (std::uint64_t seed = 100; seed < 400 && tested < 50; ++seed) {
    const verify::Problem p = verify::random_problem(seed, 2, 12, 6, NonlinearKind::relu);
    if (min_abs_hidden_preactivation(p.net, p.x) < 1e-3) continue;
    const StepResult r = penalty_backprop_step(p.net, p.x, p.labels, 0.3);
    EXPECT_LE(max_block_rel(r.theta, gd_step(p.net, p.x, p.labels, 0.3), p.net.params()), 1e-10) << "seed " << seed;
    ++tested;
  }
  EXPECT_GE(tested, 50);
}

TEST(PenaltyStep, OtherWeightsBreakTheEquivalence) {
  const verify::Problem p = verify::random_problem(7, 2, 10, 6, NonlinearKind::tanh);
  const double tau = 0.5;
  const StepResult r = penalty_backprop_step(p.net, p.x, p.labels, PenaltyParams{2.0 / tau, 1.0 / tau, tau});
  EXPECT_GT(max_block_rel(r.theta, gd_step(p.net, p.x, p.labels, tau), p.net.params()), 1e-6);
}

TEST(PenaltyStep, BacktrackedDifferencesEqualScaledChainRule) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const verify::Problem p = verify::random_problem(seed, 3, 10, 6, NonlinearKind::tanh);
    const double tau = 0.2 + 0.1 * static_cast<double>(seed);
    const nn::ForwardCache c = nn::forward(p.net, p.x);
    const HalfStep h = backward_half_steps(p.net, c, p.labels, PenaltyParams::backprop_regime(tau));
    const nn::LossResult loss = nn::loss_softmax_xent(c.logits(), p.labels);
    const std::vector<Tensor> deltas = nn::backprop_deltas(p.net, c, loss.grad_logits);
    for (std::size_t s = 0; s + 1 < p.net.num_stages(); ++s)
      EXPECT_LE(relative_error(c.stages[s].z - h.z_half[s], tau * deltas[s]), 1e-9) << "seed " << seed;
  }
}

TEST(PenaltyStep, UpdateIsLinearInTau) {
  const verify::Problem p = verify::random_problem(11, 2, 10, 6, NonlinearKind::tanh);
  const StepResult one = penalty_backprop_step(p.net, p.x, p.labels, 0.125);
  const StepResult two = penalty_backprop_step(p.net, p.x, p.labels, 0.25);
  for (std::size_t s = 0; s < p.net.num_stages(); ++s) {
    const Tensor d1 = one.theta[s] - p.net.theta(s);
    const Tensor d2 = two.theta[s] - p.net.theta(s);
    EXPECT_LE(max_abs_diff(d2, 2.0 * d1), 1e-12 * std::max(1.0, max_abs(d2)));
  }
}

TEST(PenaltyStep, NonPositiveTauThrows) {
  const verify::Problem p = verify::random_problem(12, 1, 4, 3, NonlinearKind::tanh);
  EXPECT_THROW(penalty_backprop_step(p.net, p.x, p.labels, 0.0), InputError);
}
