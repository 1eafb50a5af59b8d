#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <variant>
#include <vector>

#include "proxprop/data.hpp"
#include "proxprop/network.hpp"
#include "proxprop/proxprop.hpp"

namespace proxprop::optim {

enum class OptimizerKind { sgd, nesterov, adam };

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::sgd;
  double learning_rate = 0.01;
  double momentum = 0.9;  // nesterov
  double beta1 = 0.9;     // adam
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerSpec sgd(double lr) { return {OptimizerKind::sgd, lr}; }
  static OptimizerSpec nesterov(double lr, double mu) { return {OptimizerKind::nesterov, lr, mu}; }
  static OptimizerSpec adam(double lr) { return {OptimizerKind::adam, lr}; }
  void validate() const;
};

/// Buffers are allocated lazily on the first apply, shaped like the parameters.
struct OptimizerState {
  OptimizerSpec spec;
  std::vector<Tensor> first;   // momentum buffer / Adam first moment
  std::vector<Tensor> second;  // Adam second moment
  long step = 0;

  explicit OptimizerState(OptimizerSpec s) : spec(s) { spec.validate(); }
};

/// theta <- theta - tau * d
void sgd_apply(OptimizerState& state, std::vector<Tensor>& params, const nn::DirectionSet& dirs);
/// m <- mu m + d;  theta <- theta - tau (mu m + d)
void nesterov_apply(OptimizerState& state, std::vector<Tensor>& params, const nn::DirectionSet& dirs);
/// Bias-corrected Adam with the direction in place of the gradient.
void adam_apply(OptimizerState& state, std::vector<Tensor>& params, const nn::DirectionSet& dirs);
/// Dispatches on state.spec.kind.
void apply(OptimizerState& state, std::vector<Tensor>& params, const nn::DirectionSet& dirs);

/// Plain gradients from the chain rule.
struct BackpropOracle {};
/// M^{-1}-preconditioned directions from proximal steps on the hidden layers.
struct ProxPropOracle {
  prox::ProxConfig config;
};
using Oracle = std::variant<BackpropOracle, ProxPropOracle>;

nn::DirectionSet compute_directions(const Oracle& oracle, const nn::Network& net, const Tensor& x,
                                    std::span<const int> labels);
std::string oracle_name(const Oracle& oracle);

struct TrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 500;
  std::uint64_t seed = 0;
  OptimizerSpec optimizer;
  /// Samples per chunk when evaluating the full-batch loss.
  std::size_t eval_chunk = 1000;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double elapsed_seconds = 0.0;
  bool diverged = false;
};

struct TrainLog {
  std::vector<EpochRecord> records;
  bool diverged = false;
  double initial_loss() const { return records.front().train_loss; }
  double final_loss() const { return records.back().train_loss; }
};

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Mean loss and accuracy over the whole dataset using current parameters.
Evaluation evaluate(const nn::Network& net, const data::Dataset& d, std::size_t chunk = 1000);

/// Deterministic Fisher-Yates permutation of [0, n).
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

/// Minibatch training. Records epoch 0 (initial evaluation) and one record
/// per epoch; stops early and marks the run diverged when the loss or a
/// parameter becomes non-finite. `on_epoch` (optional) sees each record.
TrainLog train(nn::Network& net, const data::Dataset& train_set, const data::Dataset& val_set,
               const TrainOptions& options, const Oracle& oracle,
               const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace proxprop::optim
