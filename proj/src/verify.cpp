#include "proxprop/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <numeric>

#include "proxprop/linalg.hpp"
#include "proxprop/penalty.hpp"

namespace proxprop::verify {

using kernels::Trans;
using nn::DirectionSet;
using nn::NonlinearKind;

namespace {

std::size_t uniform_size(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double log_uniform(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  return std::exp(u(rng));
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

double flat_norm(const std::vector<Tensor>& ts) {
  double s = 0.0;
  for (const Tensor& t : ts) s += dot(t, t);
  return std::sqrt(s);
}

}  // namespace

Tensor random_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> gauss(0.0, scale);
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.values()) v = gauss(rng);
  return t;
}

std::vector<int> random_labels(std::size_t n, std::size_t classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, static_cast<int>(classes) - 1);
  std::vector<int> labels(n);
  for (int& y : labels) y = pick(rng);
  return labels;
}

nn::Network random_mlp(std::mt19937_64& rng, std::size_t hidden_layers, std::size_t max_width,
                       NonlinearKind activation, double weight_scale) {
  std::vector<std::size_t> widths;
  for (std::size_t i = 0; i <= hidden_layers; ++i) widths.push_back(uniform_size(rng, 2, max_width));
  widths.push_back(uniform_size(rng, 2, std::min<std::size_t>(max_width, 5)));
  nn::Network net = nn::make_mlp(widths, activation);
  net.init_uniform(rng());
  if (weight_scale != 1.0) {
    for (Tensor& t : net.params()) t *= weight_scale;
  }
  return net;
}

Problem random_problem(std::uint64_t seed, std::size_t max_hidden, std::size_t max_width,
                       std::size_t max_batch, NonlinearKind activation, double weight_scale) {
  std::mt19937_64 rng(seed);
  const std::size_t hidden = uniform_size(rng, 1, max_hidden);
  Problem p{random_mlp(rng, hidden, max_width, activation, weight_scale), {}, {}};
  const std::size_t batch = uniform_size(rng, 1, max_batch);
  p.x = random_normal(p.net.input_features(), batch, rng);
  p.labels = random_labels(batch, p.net.num_classes(), rng);
  return p;
}

double loss_at(const nn::Network& net, const std::vector<Tensor>& params, const Tensor& x,
               std::span<const int> labels) {
  return nn::loss_softmax_xent(nn::forward(net, params, x).logits(), labels).loss;
}

FiniteDiffGrad finite_diff_grad(const nn::Network& net, const Tensor& x, std::span<const int> labels,
                                const FiniteDiffOptions& options) {
  if (!(options.h > 0.0)) throw InputError("finite_diff_grad: h must be positive");
  std::mt19937_64 rng(options.seed);
  std::vector<Tensor> params = net.params();
  FiniteDiffGrad fd;
  fd.estimate.updates.assign(params.size(), DirectionSet::Update::explicit_step);
  for (std::size_t s = 0; s < params.size(); ++s) {
    fd.estimate.directions.emplace_back(params[s].shape());
    std::vector<std::size_t> idx(params[s].size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > options.max_coords) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_coords);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      const double saved = params[s][i];
      params[s][i] = saved + options.h;
      const double plus = loss_at(net, params, x, labels);
      params[s][i] = saved - options.h;
      const double minus = loss_at(net, params, x, labels);
      params[s][i] = saved;
      fd.estimate.directions[s][i] = (plus - minus) / (2.0 * options.h);
    }
    fd.coords.push_back(std::move(idx));
  }
  return fd;
}

GradientCheck gradient_check(const DirectionSet& analytic, const FiniteDiffGrad& fd, double floor) {
  if (analytic.size() != fd.estimate.size()) throw DimensionError("gradient_check: block counts differ");
  GradientCheck out;
  for (std::size_t s = 0; s < analytic.size(); ++s) {
    require_same_shape(analytic.directions[s], fd.estimate.directions[s], "gradient_check");
    for (std::size_t i : fd.coords[s]) {
      const double a = analytic.directions[s][i];
      const double f = fd.estimate.directions[s][i];
      const double err = std::abs(a - f);
      out.max_abs_error = std::max(out.max_abs_error, err);
      out.max_rel_error = std::max(out.max_rel_error, err / std::max({std::abs(a), std::abs(f), floor}));
      ++out.coords;
    }
  }
  return out;
}

SpectralBounds spectral_bounds(const prox::OperatorM& op, int power_iters, std::uint64_t seed) {
  const double gram_max = linalg::power_iteration(op.gram_operator(), power_iters, seed);
  return SpectralBounds{1.0 / op.tau_theta(), 1.0 / op.tau_theta() + gram_max};
}

bool DescentReport::any_violation() const {
  return std::any_of(layers.begin(), layers.end(), [](const LayerDescent& l) { return l.violation; });
}

bool DescentReport::any_below_bound() const {
  return std::any_of(layers.begin(), layers.end(), [](const LayerDescent& l) { return l.below_bound; });
}

DescentReport descent_report(const DirectionSet& dirs, const DirectionSet& grads,
                             const std::vector<std::optional<SpectralBounds>>& bounds, double bound_slack) {
  if (dirs.size() != grads.size()) throw DimensionError("descent_report: block counts differ");
  if (!bounds.empty() && bounds.size() != dirs.size()) throw DimensionError("descent_report: bounds size");
  constexpr double kTiny = 1e-14;
  DescentReport report;
  for (std::size_t s = 0; s < dirs.size(); ++s) {
    require_same_shape(dirs.directions[s], grads.directions[s], "descent_report");
    LayerDescent l;
    l.norm_dir = norm(dirs.directions[s]);
    l.norm_grad = norm(grads.directions[s]);
    if (!bounds.empty() && bounds[s]) l.lower_bound = bounds[s]->ratio();
    if (l.norm_dir >= kTiny && l.norm_grad >= kTiny) {
      const double c = dot(dirs.directions[s], grads.directions[s]) / (l.norm_dir * l.norm_grad);
      l.cos_alpha = std::clamp(c, -1.0, 1.0);
      l.violation = *l.cos_alpha <= 0.0;
      l.below_bound = l.lower_bound && *l.cos_alpha < *l.lower_bound - bound_slack;
    } else {
      // A vanishing direction against a live gradient is not a descent direction.
      l.violation = l.norm_grad >= kTiny;
    }
    report.layers.push_back(l);
  }
  return report;
}

EquivalenceReport prop1_harness(std::span<const std::uint64_t> seeds, double rho_scale, double tol) {
  if (seeds.empty()) throw InputError("prop1_harness: no seeds");
  EquivalenceReport report;
  for (std::uint64_t seed : seeds) {
    std::mt19937_64 rng(seed);
    const std::size_t linear_layers = uniform_size(rng, 1, 3);
    std::vector<std::size_t> widths;
    for (std::size_t i = 0; i < linear_layers; ++i) widths.push_back(uniform_size(rng, 1, 16));
    widths.push_back(uniform_size(rng, 2, 16));
    nn::Network net = nn::make_mlp(widths, NonlinearKind::tanh);
    net.init_uniform(rng());
    const std::size_t batch = uniform_size(rng, 1, 8);
    const Tensor x = random_normal(net.input_features(), batch, rng);
    const std::vector<int> labels = random_labels(batch, net.num_classes(), rng);
    const double tau = log_uniform(rng, 0.05, 2.0);

    const DirectionSet grad = nn::backprop_grad(net, nn::forward(net, x), labels);
    const penalty::PenaltyParams params{rho_scale / tau, 1.0 / tau, tau};
    const penalty::StepResult step = penalty::penalty_backprop_step(net, x, labels, params);

    std::vector<Tensor> gap;
    std::vector<Tensor> gd_update;
    for (std::size_t s = 0; s < net.num_stages(); ++s) {
      Tensor gd = grad.directions[s];
      gd *= -tau;
      gap.push_back(step.theta[s] - net.theta(s) - gd);
      gd_update.push_back(std::move(gd));
    }
    const double scale = flat_norm(gd_update);
    EquivalenceCase c{seed, net.num_stages(), tau, scale > 0.0 ? flat_norm(gap) / scale : flat_norm(gap)};
    if (step.diverged) c.deviation = std::numeric_limits<double>::infinity();
    report.max_deviation = std::max(report.max_deviation, c.deviation);
    report.cases.push_back(c);
  }
  report.pass = report.max_deviation <= tol;
  return report;
}

GramConditioning gram_conditioning(const Tensor& x, int power_iters, std::uint64_t seed) {
  if (x.rank() != 2 || x.size() == 0) throw InputError("gram_conditioning: X must be a nonempty matrix");
  const std::size_t d = x.rows();
  const linalg::LinearOperator gram{Shape{d, 1}, [&x](const Tensor& v) {
                                      return linalg::gemm(x, linalg::gemm(x, v, Trans::yes, Trans::no));
                                    }};
  GramConditioning out;
  out.lambda_max = linalg::power_iteration(gram, power_iters, seed);

  const std::vector<double> eig = linalg::symmetric_eigenvalues(linalg::gemm(x, x, Trans::no, Trans::yes));
  out.lambda_max_dense = eig.back();
  const double singular = static_cast<double>(d) * std::numeric_limits<double>::epsilon() * eig.back();
  out.lambda_min = (x.cols() < d || eig.front() <= singular) ? 0.0 : eig.front();
  out.ratio = out.lambda_min > 0.0 ? out.lambda_max / out.lambda_min : std::numeric_limits<double>::infinity();
  return out;
}

// ---- suites -------------------------------------------------------------------

SuiteResult suite_penalty_equivalence(std::size_t seeds) {
  std::vector<std::uint64_t> s(seeds);
  std::iota(s.begin(), s.end(), std::uint64_t{0});
  const EquivalenceReport main = prop1_harness(s);
  // Negative control: a mismatched rho must be detected.
  const EquivalenceReport control = prop1_harness(std::span(s).first(std::min<std::size_t>(seeds, 10)), 2.0);
  SuiteResult r{"penalty_equivalence", main.pass && control.max_deviation > 1e-6, {}, {}};
  r.metrics = {{"seeds", seeds},
               {"max_deviation", main.max_deviation},
               {"tolerance", 1e-9},
               {"control_max_deviation", control.max_deviation}};
  r.summary = "max relative deviation " + sci(main.max_deviation) + " over " +
              std::to_string(seeds) + " seeds";
  return r;
}

namespace {
constexpr double kGradientFloor = 1e-6;
}

SuiteResult suite_gradient(std::size_t seeds, std::size_t coords) {
  double worst = 0.0;
  double worst_abs = 0.0;
  std::size_t total = 0;
  for (std::size_t seed = 0; seed < seeds; ++seed) {
    const Problem p = random_problem(1000 + seed, 2, 12, 8, NonlinearKind::tanh);
    const DirectionSet grad = nn::backprop_grad(p.net, nn::forward(p.net, p.x), p.labels);
    const FiniteDiffGrad fd = finite_diff_grad(p.net, p.x, p.labels, {1e-5, coords, seed});
    const GradientCheck c = gradient_check(grad, fd, kGradientFloor);
    worst = std::max(worst, c.max_rel_error);
    worst_abs = std::max(worst_abs, c.max_abs_error);
    total += c.coords;
  }
  SuiteResult r{"gradient", worst <= 1e-5, {}, {}};
  r.metrics = {{"seeds", seeds},          {"coords_checked", total},     {"max_rel_error", worst},
               {"max_abs_error", worst_abs}, {"denominator_floor", kGradientFloor}, {"tolerance", 1e-5}};
  r.summary = "max relative error " + sci(worst) + " over " + std::to_string(total) + " coordinates";
  return r;
}

SuiteResult suite_metric_identity(std::size_t nets) {
  double worst = 0.0;
  std::size_t layers = 0;
  for (std::size_t i = 0; i < nets; ++i) {
    const NonlinearKind act = i % 2 == 0 ? NonlinearKind::tanh : NonlinearKind::relu;
    const Problem p = random_problem(2000 + i, 2, 10, 8, act);
    std::mt19937_64 rng(7000 + i);
    const double tau_theta = log_uniform(rng, 0.01, 10.0);
    const nn::ForwardCache cache = nn::forward(p.net, p.x);
    const DirectionSet grad = nn::backprop_grad(p.net, cache, p.labels);
    const DirectionSet dirs = prox::proxprop_directions(p.net, p.x, p.labels, prox::ProxConfig::exact(tau_theta));
    const std::size_t S = p.net.num_stages();
    for (std::size_t s = 0; s + 1 < S; ++s) {
      const prox::OperatorM op(p.net.stage(s).linear, cache.stages[s].input, tau_theta);
      worst = std::max(worst, relative_error(op.apply(dirs.directions[s]), grad.directions[s], 1e-300));
      ++layers;
    }
    worst = std::max(worst, relative_error(dirs.directions[S - 1], grad.directions[S - 1], 1e-300));
  }
  SuiteResult r{"metric_identity", worst <= 1e-8, {}, {}};
  r.metrics = {{"nets", nets}, {"hidden_layers", layers}, {"max_rel_residual", worst}, {"tolerance", 1e-8}};
  r.summary = "max ||M g - grad|| / ||grad|| = " + sci(worst);
  return r;
}

SuiteResult suite_cg_exact(std::size_t instances) {
  double worst = 0.0;
  std::size_t max_dim = 0;
  for (std::size_t i = 0; i < instances; ++i) {
    std::mt19937_64 rng(3000 + i);
    const std::size_t out = uniform_size(rng, 1, 8);
    const std::size_t in = uniform_size(rng, 1, 64 / out - 1);
    const nn::LinearTransfer lin = nn::LinearTransfer::fully_connected(in, out);
    const std::size_t batch = uniform_size(rng, 1, 12);
    const double tau_theta = log_uniform(rng, 0.01, 100.0);
    const Tensor theta = random_normal(out, in + 1, rng);
    const Tensor a = random_normal(in, batch, rng);
    const Tensor z = random_normal(out, batch, rng);
    const std::size_t dim = theta.size();
    max_dim = std::max(max_dim, dim);
    const Tensor exact = prox::prox_step_exact(lin, theta, a, z, tau_theta);
    const prox::CgProxResult cg = prox::prox_step_cg(lin, theta, a, z, tau_theta, static_cast<int>(dim));
    worst = std::max(worst, relative_error(cg.theta, exact));
  }
  SuiteResult r{"cg_exact", worst <= 1e-8, {}, {}};
  r.metrics = {{"instances", instances}, {"max_param_dim", max_dim}, {"max_rel_error", worst}, {"tolerance", 1e-8}};
  r.summary = "max relative gap CG(k=dim) vs closed form " + sci(worst);
  return r;
}

SuiteResult suite_descent(std::size_t nets) {
  const std::vector<int> cg_steps = {1, 3, 5, 10};
  std::size_t violations = 0;
  std::size_t below = 0;
  std::size_t checked = 0;
  double min_cos = 1.0;
  double min_margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < nets; ++i) {
    const NonlinearKind act = i % 2 == 0 ? NonlinearKind::tanh : NonlinearKind::relu;
    const Problem p = random_problem(4000 + i, 3, 12, 10, act);
    std::mt19937_64 rng(8000 + i);
    const double tau_theta = log_uniform(rng, 0.01, 100.0);
    const nn::ForwardCache cache = nn::forward(p.net, p.x);
    const DirectionSet grad = nn::backprop_grad(p.net, cache, p.labels);
    const std::size_t S = p.net.num_stages();

    auto tally = [&](const DescentReport& rep) {
      for (const LayerDescent& l : rep.layers) {
        if (l.cos_alpha) {
          ++checked;
          min_cos = std::min(min_cos, *l.cos_alpha);
          if (l.lower_bound) min_margin = std::min(min_margin, *l.cos_alpha - *l.lower_bound);
        }
        violations += l.violation ? 1 : 0;
        below += l.below_bound ? 1 : 0;
      }
    };

    for (int k : cg_steps) {
      tally(descent_report(prox::proxprop_directions(p.net, p.x, p.labels, prox::ProxConfig::cg(k)), grad));
    }
    std::vector<std::optional<SpectralBounds>> bounds(S);
    for (std::size_t s = 0; s + 1 < S; ++s) {
      bounds[s] = spectral_bounds(prox::OperatorM(p.net.stage(s).linear, cache.stages[s].input, tau_theta), 300, i);
    }
    tally(descent_report(prox::proxprop_directions(p.net, p.x, p.labels, prox::ProxConfig::exact(tau_theta)), grad,
                         bounds));
  }
  SuiteResult r{"descent", violations == 0 && below == 0, {}, {}};
  r.metrics = {{"nets", nets},        {"layer_checks", checked},  {"violations", violations},
               {"below_bound", below}, {"min_cos_alpha", min_cos}, {"min_exact_margin", min_margin}};
  r.summary = std::to_string(violations) + " angle violations, " + std::to_string(below) +
              " bound violations, min cos " + sci(min_cos);
  return r;
}

SuiteResult suite_spectral(std::size_t instances) {
  const double taus[] = {0.01, 1.0, 100.0};
  double worst_power = std::numeric_limits<double>::infinity();  // min over instances of tau - lambda_max(M^-1)
  double worst_dense = std::numeric_limits<double>::infinity();
  std::size_t conv = 0;
  for (std::size_t i = 0; i < instances; ++i) {
    std::mt19937_64 rng(5000 + i);
    const double tau_theta = taus[i % 3];
    nn::LinearTransfer lin = nn::LinearTransfer::fully_connected(1, 1);
    if (i % 5 == 4) {
      const nn::FeatureShape in{uniform_size(rng, 1, 2), uniform_size(rng, 3, 5), uniform_size(rng, 3, 5)};
      lin = nn::LinearTransfer::conv2d(in, uniform_size(rng, 1, 2), 3, 1, 1, true);
      ++conv;
    } else {
      lin = nn::LinearTransfer::fully_connected(uniform_size(rng, 1, 12), uniform_size(rng, 1, 4));
    }
    const std::size_t batch = uniform_size(rng, 1, 16);
    const double scale = std::pow(10.0, std::uniform_real_distribution<double>(-1.0, 1.0)(rng));
    const Tensor a = random_normal(lin.in_features(), batch, rng, scale);
    const prox::OperatorM op(lin, a, tau_theta);

    const double lmin_power = linalg::inverse_power_iteration(op.as_operator(), 200, i);
    const double lmin_dense = linalg::symmetric_eigenvalues(linalg::materialize(op.as_operator())).front();
    worst_power = std::min(worst_power, tau_theta - 1.0 / lmin_power);
    worst_dense = std::min(worst_dense, tau_theta - 1.0 / lmin_dense);
  }
  SuiteResult r{"spectral", worst_power >= -1e-8 && worst_dense >= -1e-8, {}, {}};
  r.metrics = {{"instances", instances},
               {"conv_instances", conv},
               {"min_tau_minus_lmax_inv_power", worst_power},
               {"min_tau_minus_lmax_inv_dense", worst_dense}};
  r.summary = "min(tau_theta - lambda_max(M^-1)) power " + sci(worst_power) + ", dense " +
              sci(worst_dense);
  return r;
}

SuiteResult suite_prox_decrease(std::size_t instances) {
  const double taus[] = {0.01, 1.0, 100.0};
  std::size_t violations = 0;
  std::size_t checks = 0;
  double worst_excess = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < instances; ++i) {
    const NonlinearKind act = i % 2 == 0 ? NonlinearKind::tanh : NonlinearKind::relu;
    const Problem p = random_problem(6000 + i, 2, 10, 8, act, 2.0);
    const nn::ForwardCache cache = nn::forward(p.net, p.x);
    const penalty::HalfStep half = prox::backward_sweep(p.net, cache, p.labels, 1.0);
    penalty::Activations vars = penalty::feasible_activations(cache);
    vars.z = half.z_half;
    const double e0 = penalty::penalty_energy(p.net, p.net.params(), vars, p.labels, 1.0, 1.0);
    for (double tau_theta : taus) {
      std::vector<Tensor> theta = p.net.params();
      double prox_term = 0.0;
      for (std::size_t s = 0; s + 1 < p.net.num_stages(); ++s) {
        theta[s] = prox::prox_step_exact(p.net.stage(s).linear, p.net.theta(s), vars.a[s], vars.z[s], tau_theta);
        const Tensor delta = theta[s] - p.net.theta(s);
        prox_term += 0.5 / tau_theta * dot(delta, delta);
      }
      const double e1 = penalty::penalty_energy(p.net, theta, vars, p.labels, 1.0, 1.0);
      const double excess = e1 + prox_term - e0;
      worst_excess = std::max(worst_excess, excess);
      violations += excess > 1e-12 * std::max(1.0, std::abs(e0)) ? 1 : 0;
      ++checks;
    }

    // Proximal point iteration on a fixed least-squares block.
    std::mt19937_64 rng(9000 + i);
    const nn::LinearTransfer& lin = p.net.stage(0).linear;
    const Tensor& a = vars.a[0];
    const Tensor target = random_normal(lin.out_features(), a.cols(), rng, 3.0);
    for (double tau_theta : taus) {
      Tensor theta = p.net.theta(0);
      auto f = [&](const Tensor& t) {
        const Tensor r = lin.apply(t, a) - target;
        return 0.5 * dot(r, r);
      };
      double prev = f(theta);
      for (int it = 0; it < 20; ++it) {
        theta = prox::prox_step_exact(lin, theta, a, target, tau_theta);
        const double cur = f(theta);
        violations += cur > prev + 1e-12 * std::max(1.0, std::abs(prev)) ? 1 : 0;
        ++checks;
        prev = cur;
      }
    }
  }
  SuiteResult r{"prox_decrease", violations == 0, {}, {}};
  r.metrics = {{"instances", instances},
               {"checks", checks},
               {"violations", violations},
               {"worst_energy_excess", worst_excess}};
  r.summary = std::to_string(violations) + " violations in " + std::to_string(checks) + " checks";
  return r;
}

std::vector<std::string> suite_names() {
  return {"penalty_equivalence", "gradient", "metric_identity", "cg_exact", "descent", "spectral", "prox_decrease"};
}

SuiteResult run_suite(const std::string& name) {
  static const std::map<std::string, std::function<SuiteResult()>> table = {
      {"penalty_equivalence", [] { return suite_penalty_equivalence(); }},
      {"gradient", [] { return suite_gradient(); }},
      {"metric_identity", [] { return suite_metric_identity(); }},
      {"cg_exact", [] { return suite_cg_exact(); }},
      {"descent", [] { return suite_descent(); }},
      {"spectral", [] { return suite_spectral(); }},
      {"prox_decrease", [] { return suite_prox_decrease(); }},
  };
  const auto it = table.find(name);
  if (it == table.end()) throw ConfigError("unknown verify suite '" + name + "'");
  return it->second();
}

Record to_record(const SuiteResult& r) {
  Record rec = {{"record", "verify"}, {"suite", r.name}, {"pass", r.pass}, {"summary", r.summary}};
  for (const auto& [k, v] : r.metrics.items()) rec[k] = v;
  return rec;
}

}  // namespace proxprop::verify
