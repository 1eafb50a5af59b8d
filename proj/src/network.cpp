#include "proxprop/network.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace proxprop::nn {

Network::Network(std::vector<Stage> stages) : stages_(std::move(stages)) {
  if (stages_.empty()) throw DimensionError("network needs at least one linear stage");
  if (!stages_.back().activations.empty()) {
    throw DimensionError("the last stage feeds the loss and must not have nonlinearities");
  }
  FeatureShape current = stages_.front().linear.input_shape();
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const LinearTransfer& lin = stages_[s].linear;
    const FeatureShape& expected = lin.input_shape();
    const bool composes = lin.kind() == LinearKind::fully_connected
                              ? expected.size() == current.size()
                              : expected == current;
    if (!composes) {
      throw DimensionError("stage " + std::to_string(s) + " expects input " + to_string(expected) +
                           " but receives " + to_string(current));
    }
    current = lin.output_shape();
    for (const Nonlinearity& act : stages_[s].activations) current = act.output_shape(current);
  }
  params_.reserve(stages_.size());
  for (const Stage& st : stages_) params_.emplace_back(st.linear.param_shape());
}

std::size_t Network::input_features() const { return stages_.front().linear.in_features(); }

std::size_t Network::num_classes() const { return stages_.back().linear.out_features(); }

FeatureShape Network::activation_input_shape(std::size_t s, std::size_t j) const {
  FeatureShape shape = stages_.at(s).linear.output_shape();
  for (std::size_t k = 0; k < j; ++k) shape = stages_[s].activations.at(k).output_shape(shape);
  return shape;
}

void Network::set_params(std::vector<Tensor> params) {
  if (params.size() != stages_.size()) throw DimensionError("set_params: wrong number of blocks");
  for (std::size_t s = 0; s < params.size(); ++s) {
    if (params[s].shape() != stages_[s].linear.param_shape()) {
      throw DimensionError("set_params: block " + std::to_string(s) + " has shape " +
                           shape_string(params[s].shape()));
    }
  }
  params_ = std::move(params);
}

std::size_t Network::num_parameters() const {
  std::size_t n = 0;
  for (const Tensor& p : params_) n += p.size();
  return n;
}

void Network::init_uniform(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(stages_[s].linear.fan_in()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : params_[s].values()) v = dist(rng);
  }
}

std::string Network::describe() const {
  std::string out;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    if (s) out += " -> ";
    out += stages_[s].linear.describe();
    for (const Nonlinearity& act : stages_[s].activations) out += " -> " + act.describe();
  }
  return out + " -> softmax_xent";
}

Network make_mlp(std::span<const std::size_t> widths, NonlinearKind activation, bool bias) {
  if (widths.size() < 2) throw DimensionError("make_mlp: need at least input and output widths");
  if (activation == NonlinearKind::maxpool2d) throw InputError("make_mlp: maxpool is not an MLP activation");
  std::vector<Stage> stages;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    Stage st{LinearTransfer::fully_connected(widths[i], widths[i + 1], bias), {}};
    if (i + 2 < widths.size()) {
      st.activations.push_back(activation == NonlinearKind::relu ? Nonlinearity::relu()
                                                                 : Nonlinearity::tanh());
    }
    stages.push_back(std::move(st));
  }
  return Network(std::move(stages));
}

const Tensor& ForwardCache::nonlinearity_input(std::size_t s, std::size_t j) const {
  const StageCache& sc = stages.at(s);
  return j == 0 ? sc.z : sc.internal.at(j - 1);
}

ForwardCache forward(const Network& net, const std::vector<Tensor>& params, const Tensor& x) {
  if (params.size() != net.num_stages()) throw DimensionError("forward: wrong number of parameter blocks");
  if (x.rank() != 2 || x.rows() != net.input_features()) {
    throw DimensionError("forward: input shape " + shape_string(x.shape()) + ", expected " +
                         std::to_string(net.input_features()) + " rows");
  }
  ForwardCache cache;
  cache.batch = x.cols();
  cache.stages.resize(net.num_stages());
  const Tensor* a = &x;
  for (std::size_t s = 0; s < net.num_stages(); ++s) {
    const Stage& st = net.stage(s);
    StageCache& sc = cache.stages[s];
    sc.input = *a;
    sc.z = st.linear.apply(params[s], sc.input);
    if (st.activations.empty()) {
      sc.output = sc.z;
    } else {
      Tensor h = st.activations[0].apply(sc.z);
      for (std::size_t j = 1; j < st.activations.size(); ++j) {
        Tensor next = st.activations[j].apply(h);
        sc.internal.push_back(std::move(h));
        h = std::move(next);
      }
      sc.output = std::move(h);
    }
    if (!sc.output.all_finite() || !sc.z.all_finite()) cache.diverged = true;
    a = &sc.output;
  }
  return cache;
}

ForwardCache forward(const Network& net, const Tensor& x) { return forward(net, net.params(), x); }

Tensor predict(const Network& net, const Tensor& x) {
  if (x.rank() != 2 || x.rows() != net.input_features()) {
    throw DimensionError("predict: input shape " + shape_string(x.shape()));
  }
  Tensor a = x;
  for (std::size_t s = 0; s < net.num_stages(); ++s) {
    a = net.stage(s).linear.apply(net.theta(s), a);
    for (const Nonlinearity& act : net.stage(s).activations) a = act.apply(a);
  }
  return a;
}

Tensor apply_sigma(const Network& net, std::size_t s, const Tensor& z) {
  Tensor h = z;
  for (const Nonlinearity& act : net.stage(s).activations) h = act.apply(h);
  return h;
}

Tensor sigma_adjoint(const Network& net, const ForwardCache& cache, std::size_t s, const Tensor& w) {
  const auto& acts = net.stage(s).activations;
  Tensor g = w;
  for (std::size_t j = acts.size(); j-- > 0;) {
    g = acts[j].jacobian_adjoint_apply(cache.nonlinearity_input(s, j), g);
  }
  return g;
}

namespace {

void check_labels(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || labels.size() != logits.cols()) {
    throw DimensionError("loss: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_string(logits.shape()));
  }
  const int k = static_cast<int>(logits.rows());
  for (int y : labels) {
    if (y < 0 || y >= k) throw InputError("loss: label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
  }
}

}  // namespace

LossResult loss_softmax_xent(const Tensor& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  const std::size_t k = logits.rows();
  const std::size_t n = logits.cols();
  LossResult out;
  out.grad_logits = Tensor::matrix(k, n);
  if (n == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) m = std::max(m, logits(i, j));
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) sum += std::exp(logits(i, j) - m);
    const double log_z = m + std::log(sum);
    total += log_z - logits(static_cast<std::size_t>(labels[j]), j);
    for (std::size_t i = 0; i < k; ++i) {
      const double p = std::exp(logits(i, j) - log_z);
      out.grad_logits(i, j) = (p - (static_cast<int>(i) == labels[j] ? 1.0 : 0.0)) * inv_n;
    }
  }
  out.loss = total * inv_n;
  return out;
}

BatchScore score_batch(const Tensor& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  BatchScore score;
  const std::size_t k = logits.rows();
  for (std::size_t j = 0; j < logits.cols(); ++j) {
    double m = -std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t i = 0; i < k; ++i) {
      if (logits(i, j) > m) {
        m = logits(i, j);
        arg = i;
      }
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) sum += std::exp(logits(i, j) - m);
    score.loss_sum += m + std::log(sum) - logits(static_cast<std::size_t>(labels[j]), j);
    if (static_cast<int>(arg) == labels[j]) ++score.correct;
  }
  return score;
}

void check_cache(const Network& net, const ForwardCache& cache) {
  if (cache.stages.size() != net.num_stages()) {
    throw ConsistencyError("forward cache has " + std::to_string(cache.stages.size()) +
                           " stages, network has " + std::to_string(net.num_stages()));
  }
  for (std::size_t s = 0; s < net.num_stages(); ++s) {
    const StageCache& sc = cache.stages[s];
    const LinearTransfer& lin = net.stage(s).linear;
    if (sc.input.rank() != 2 || sc.input.rows() != lin.in_features() || sc.input.cols() != cache.batch ||
        sc.z.rows() != lin.out_features() || sc.z.cols() != cache.batch ||
        sc.internal.size() + 1 != std::max<std::size_t>(net.stage(s).activations.size(), 1)) {
      throw ConsistencyError("forward cache stage " + std::to_string(s) +
                             " does not match the network");
    }
  }
}

std::vector<Tensor> backprop_deltas(const Network& net, const ForwardCache& cache,
                                    const Tensor& grad_logits) {
  check_cache(net, cache);
  const std::size_t S = net.num_stages();
  std::vector<Tensor> deltas(S);
  deltas[S - 1] = grad_logits;
  for (std::size_t s = S - 1; s > 0; --s) {
    const Tensor da = net.stage(s).linear.input_adjoint(net.theta(s), deltas[s]);
    deltas[s - 1] = sigma_adjoint(net, cache, s - 1, da);
  }
  return deltas;
}

DirectionSet backprop_grad(const Network& net, const ForwardCache& cache,
                           std::span<const int> labels) {
  check_cache(net, cache);
  const LossResult loss = loss_softmax_xent(cache.logits(), labels);
  const std::vector<Tensor> deltas = backprop_deltas(net, cache, loss.grad_logits);
  DirectionSet grads;
  grads.diverged = cache.diverged || !std::isfinite(loss.loss);
  for (std::size_t s = 0; s < net.num_stages(); ++s) {
    grads.directions.push_back(net.stage(s).linear.param_adjoint(deltas[s], cache.stages[s].input));
    grads.updates.push_back(DirectionSet::Update::explicit_step);
  }
  return grads;
}

Tensor phi_param_adjoint(const Network& net, std::size_t s, const Tensor& residual, const Tensor& a) {
  return net.stage(s).linear.param_adjoint(residual, a);
}

Tensor phi_of_param(const Network& net, std::size_t s, const Tensor& theta_like, const Tensor& a) {
  return net.stage(s).linear.apply(theta_like, a);
}

}  // namespace proxprop::nn
