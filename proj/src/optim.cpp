#include "proxprop/optim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace proxprop::optim {

using nn::DirectionSet;

void OptimizerSpec::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
  if (kind == OptimizerKind::nesterov && !(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("nesterov momentum must be in [0, 1)");
  }
  if (kind == OptimizerKind::adam &&
      !(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0)) {
    throw ConfigError("adam needs beta1, beta2 in [0, 1) and eps > 0");
  }
}

namespace {

void check_shapes(const std::vector<Tensor>& params, const DirectionSet& dirs) {
  if (params.size() != dirs.size()) throw DimensionError("optimizer: parameter/direction block counts differ");
  for (std::size_t s = 0; s < params.size(); ++s) require_same_shape(params[s], dirs.directions[s], "optimizer");
}

void ensure_buffers(std::vector<Tensor>& buffers, const std::vector<Tensor>& params) {
  if (buffers.empty()) {
    for (const Tensor& p : params) buffers.emplace_back(p.shape());
  }
  if (buffers.size() != params.size()) throw DimensionError("optimizer: state does not match parameters");
  for (std::size_t s = 0; s < params.size(); ++s) require_same_shape(buffers[s], params[s], "optimizer state");
}

}  // namespace

void sgd_apply(OptimizerState& state, std::vector<Tensor>& params, const DirectionSet& dirs) {
  check_shapes(params, dirs);
  for (std::size_t s = 0; s < params.size(); ++s) axpy(-state.spec.learning_rate, dirs.directions[s], params[s]);
  ++state.step;
}

void nesterov_apply(OptimizerState& state, std::vector<Tensor>& params, const DirectionSet& dirs) {
  check_shapes(params, dirs);
  ensure_buffers(state.first, params);
  const double mu = state.spec.momentum;
  const double tau = state.spec.learning_rate;
  for (std::size_t s = 0; s < params.size(); ++s) {
    double* m = state.first[s].data();
    double* theta = params[s].data();
    const double* d = dirs.directions[s].data();
    for (std::size_t k = 0; k < params[s].size(); ++k) {
      m[k] = mu * m[k] + d[k];
      theta[k] -= tau * (mu * m[k] + d[k]);
    }
  }
  ++state.step;
}

void adam_apply(OptimizerState& state, std::vector<Tensor>& params, const DirectionSet& dirs) {
  check_shapes(params, dirs);
  ensure_buffers(state.first, params);
  ensure_buffers(state.second, params);
  const OptimizerSpec& o = state.spec;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t s = 0; s < params.size(); ++s) {
    double* m = state.first[s].data();
    double* v = state.second[s].data();
    double* theta = params[s].data();
    const double* g = dirs.directions[s].data();
    for (std::size_t k = 0; k < params[s].size(); ++k) {
      m[k] = o.beta1 * m[k] + (1.0 - o.beta1) * g[k];
      v[k] = o.beta2 * v[k] + (1.0 - o.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      theta[k] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.eps);
    }
  }
}

void apply(OptimizerState& state, std::vector<Tensor>& params, const DirectionSet& dirs) {
  switch (state.spec.kind) {
    case OptimizerKind::sgd:
      return sgd_apply(state, params, dirs);
    case OptimizerKind::nesterov:
      return nesterov_apply(state, params, dirs);
    case OptimizerKind::adam:
      return adam_apply(state, params, dirs);
  }
}

DirectionSet compute_directions(const Oracle& oracle, const nn::Network& net, const Tensor& x,
                                std::span<const int> labels) {
  if (const auto* p = std::get_if<ProxPropOracle>(&oracle)) {
    return prox::proxprop_directions(net, x, labels, p->config);
  }
  const nn::ForwardCache cache = nn::forward(net, x);
  if (cache.diverged) {
    DirectionSet dirs;
    for (const Tensor& t : net.params()) dirs.directions.emplace_back(t.shape());
    dirs.updates.assign(net.num_stages(), DirectionSet::Update::explicit_step);
    dirs.diverged = true;
    return dirs;
  }
  return nn::backprop_grad(net, cache, labels);
}

std::string oracle_name(const Oracle& oracle) {
  if (const auto* p = std::get_if<ProxPropOracle>(&oracle)) {
    return p->config.mode == prox::ProxMode::exact ? "proxprop_exact"
                                                   : "proxprop_cg" + std::to_string(p->config.cg_iterations);
  }
  return "backprop";
}

Evaluation evaluate(const nn::Network& net, const data::Dataset& d, std::size_t chunk) {
  Evaluation ev;
  if (d.size() == 0) {
    ev.loss = std::numeric_limits<double>::quiet_NaN();
    ev.accuracy = std::numeric_limits<double>::quiet_NaN();
    return ev;
  }
  chunk = std::max<std::size_t>(chunk, 1);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < d.size(); begin += chunk) {
    const std::size_t end = std::min(d.size(), begin + chunk);
    std::vector<std::size_t> cols(end - begin);
    std::iota(cols.begin(), cols.end(), begin);
    const Tensor logits = nn::predict(net, select_columns(d.x, cols));
    const auto score = nn::score_batch(
        logits, std::span<const int>(d.labels).subspan(begin, end - begin));
    loss_sum += score.loss_sum;
    correct += score.correct;
  }
  ev.loss = loss_sum / static_cast<double>(d.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(d.size());
  return ev;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

namespace {

void validate_run(const nn::Network& net, const data::Dataset& train_set, const data::Dataset& val_set,
                  const TrainOptions& options, const Oracle& oracle) {
  if (train_set.size() == 0) throw ConfigError("training set is empty");
  if (options.batch_size == 0) throw ConfigError("batch size must be positive");
  options.optimizer.validate();
  if (const auto* p = std::get_if<ProxPropOracle>(&oracle)) {
    p->config.validate();
    if (p->config.mode == prox::ProxMode::exact) {
      for (const nn::Stage& st : net.stages()) {
        if (st.linear.kind() != nn::LinearKind::fully_connected) {
          throw ConfigError("exact ProxProp needs a fully connected network");
        }
      }
    }
  }
  for (const data::Dataset* d : {&train_set, &val_set}) {
    if (d->size() == 0) continue;
    if (d->features() != net.input_features()) {
      throw ConfigError("dataset has " + std::to_string(d->features()) + " features, network expects " +
                        std::to_string(net.input_features()));
    }
    for (int y : d->labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= net.num_classes()) {
        throw ConfigError("label " + std::to_string(y) + " exceeds the network's class count");
      }
    }
  }
}

bool all_finite(const std::vector<Tensor>& params) {
  return std::all_of(params.begin(), params.end(), [](const Tensor& t) { return t.all_finite(); });
}

}  // namespace

TrainLog train(nn::Network& net, const data::Dataset& train_set, const data::Dataset& val_set,
               const TrainOptions& options, const Oracle& oracle,
               const std::function<void(const EpochRecord&)>& on_epoch) {
  validate_run(net, train_set, val_set, options, oracle);
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&start] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  TrainLog log;
  auto record = [&](std::size_t epoch, bool diverged) {
    EpochRecord r;
    r.epoch = epoch;
    const Evaluation tr = evaluate(net, train_set, options.eval_chunk);
    r.train_loss = tr.loss;
    r.val_accuracy = evaluate(net, val_set, options.eval_chunk).accuracy;
    r.diverged = diverged || !std::isfinite(tr.loss) || !all_finite(net.params());
    r.elapsed_seconds = elapsed();
    log.records.push_back(r);
    log.diverged = r.diverged;
    if (on_epoch) on_epoch(r);
  };

  record(0, false);
  if (log.diverged) return log;

  OptimizerState state(options.optimizer);
  std::mt19937_64 shuffle_rng(options.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    bool diverged = false;
    for (std::size_t begin = 0; begin < order.size() && !diverged; begin += options.batch_size) {
      const std::size_t end = std::min(order.size(), begin + options.batch_size);
      const std::span<const std::size_t> cols(order.data() + begin, end - begin);
      const Tensor xb = select_columns(train_set.x, cols);
      std::vector<int> yb(cols.size());
      for (std::size_t j = 0; j < cols.size(); ++j) yb[j] = train_set.labels[cols[j]];

      nn::DirectionSet dirs;
      try {
        dirs = compute_directions(oracle, net, xb, yb);
      } catch (const NumericalError&) {
        diverged = true;
        break;
      }
      if (dirs.diverged) {
        diverged = true;
        break;
      }
      apply(state, net.params(), dirs);
      diverged = !all_finite(net.params());
    }
    record(epoch, diverged);
    if (log.diverged) break;
  }
  return log;
}

}  // namespace proxprop::optim
