#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "proxprop/network.hpp"
#include "proxprop/proxprop.hpp"

namespace proxprop::verify {

using Record = nlohmann::json;

// ---- random problem generators --------------------------------------------

Tensor random_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0);
std::vector<int> random_labels(std::size_t n, std::size_t classes, std::mt19937_64& rng);

/// Fully connected net with 1 + hidden_layers linear layers, widths drawn
/// from [2, max_width], weights from init_uniform scaled by `weight_scale`.
nn::Network random_mlp(std::mt19937_64& rng, std::size_t hidden_layers, std::size_t max_width,
                       nn::NonlinearKind activation, double weight_scale = 1.0);

/// A random network together with a batch drawn for it.
struct Problem {
  nn::Network net;
  Tensor x;
  std::vector<int> labels;
};
Problem random_problem(std::uint64_t seed, std::size_t max_hidden, std::size_t max_width,
                       std::size_t max_batch, nn::NonlinearKind activation, double weight_scale = 1.0);

/// Loss J at the given parameter set.
double loss_at(const nn::Network& net, const std::vector<Tensor>& params, const Tensor& x,
               std::span<const int> labels);

// ---- finite differences -----------------------------------------------------

struct FiniteDiffOptions {
  double h = 1e-5;
  /// Coordinates sampled per parameter block (all of them when the block is smaller).
  std::size_t max_coords = 500;
  std::uint64_t seed = 0;
};

/// Central differences on a deterministic coordinate sample. Unsampled
/// entries of `estimate` are zero; `coords[s]` lists the flat indices probed.
struct FiniteDiffGrad {
  nn::DirectionSet estimate;
  std::vector<std::vector<std::size_t>> coords;
};
FiniteDiffGrad finite_diff_grad(const nn::Network& net, const Tensor& x, std::span<const int> labels,
                                const FiniteDiffOptions& options = {});

struct GradientCheck {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coords = 0;
};
/// |analytic - fd| / max(|analytic|, |fd|, floor) over the sampled coordinates.
GradientCheck gradient_check(const nn::DirectionSet& analytic, const FiniteDiffGrad& fd, double floor);

// ---- descent angles ---------------------------------------------------------

/// Eigenvalue range of M_l; lambda_min(M^-1)/lambda_max(M^-1) equals
/// lambda_min(M)/lambda_max(M).
struct SpectralBounds {
  double lambda_min_m = 0.0;
  double lambda_max_m = 0.0;
  double ratio() const { return lambda_min_m / lambda_max_m; }
};

/// lambda_min(M) >= 1/tau_theta and lambda_max(M) = 1/tau_theta + lambda_max(gram),
/// with the Gram maximum from power iteration.
SpectralBounds spectral_bounds(const prox::OperatorM& op, int power_iters = 300, std::uint64_t seed = 0);

struct LayerDescent {
  std::optional<double> cos_alpha;  // absent when either norm < 1e-14
  double norm_grad = 0.0;
  double norm_dir = 0.0;
  std::optional<double> lower_bound;
  bool violation = false;    // cos_alpha <= 0
  bool below_bound = false;  // cos_alpha < lower_bound - slack
};

struct DescentReport {
  std::vector<LayerDescent> layers;
  bool any_violation() const;
  bool any_below_bound() const;
};

DescentReport descent_report(const nn::DirectionSet& dirs, const nn::DirectionSet& grads,
                             const std::vector<std::optional<SpectralBounds>>& bounds = {},
                             double bound_slack = 1e-8);

// ---- penalty / gradient descent equivalence ---------------------------------

struct EquivalenceCase {
  std::uint64_t seed = 0;
  std::size_t layers = 0;
  double tau = 0.0;
  double deviation = 0.0;
};

struct EquivalenceReport {
  std::vector<EquivalenceCase> cases;
  double max_deviation = 0.0;
  bool pass = false;
};

/// For each seed: random tanh net (<= 3 linear layers, widths <= 16, batch
/// <= 8); compares the penalty step with rho = rho_scale / tau against
/// theta - tau * grad. Deviation is ||update_pen - update_gd|| / ||update_gd||.
EquivalenceReport prop1_harness(std::span<const std::uint64_t> seeds, double rho_scale = 1.0, double tol = 1e-9);

// ---- data conditioning ------------------------------------------------------

struct GramConditioning {
  double lambda_max = 0.0;
  double lambda_min = 0.0;
  double ratio = 0.0;
  double lambda_max_dense = 0.0;
};

/// Extreme eigenvalues of X X^T (X is features x samples). lambda_max by
/// matrix-free power iteration; lambda_min by a dense eigendecomposition of
/// the features x features Gram matrix. Fewer samples than features, or a
/// numerically singular Gram matrix, reports lambda_min = 0 and ratio = inf.
GramConditioning gram_conditioning(const Tensor& x, int power_iters = 200, std::uint64_t seed = 0);

// ---- property suites --------------------------------------------------------

struct SuiteResult {
  std::string name;
  bool pass = false;
  Record metrics;
  std::string summary;
};

SuiteResult suite_penalty_equivalence(std::size_t seeds = 50);
SuiteResult suite_gradient(std::size_t seeds = 20, std::size_t coords = 200);
SuiteResult suite_metric_identity(std::size_t nets = 20);
SuiteResult suite_cg_exact(std::size_t instances = 40);
SuiteResult suite_descent(std::size_t nets = 100);
SuiteResult suite_spectral(std::size_t instances = 50);
SuiteResult suite_prox_decrease(std::size_t instances = 50);

/// Suites above in order; names are penalty_equivalence, gradient, metric_identity, cg_exact,
/// descent, spectral, prox_decrease.
std::vector<std::string> suite_names();
SuiteResult run_suite(const std::string& name);

Record to_record(const SuiteResult& r);

}  // namespace proxprop::verify
