#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "proxprop/layers.hpp"
#include "proxprop/tensor.hpp"

namespace proxprop::nn {

using Labels = std::vector<int>;

/// One linear transfer followed by zero or more nonlinearities. The last
/// stage of a network has no nonlinearities; its output is the logits.
struct Stage {
  LinearTransfer linear;
  std::vector<Nonlinearity> activations;
};

/// Per-parameter-block update directions produced by an oracle.
struct DirectionSet {
  enum class Update { explicit_step, implicit_step };

  std::vector<Tensor> directions;
  std::vector<Update> updates;
  bool diverged = false;

  std::size_t size() const { return directions.size(); }
};

/// Feed-forward chain phi -> sigma -> phi -> ... -> phi -> softmax cross-entropy.
///
/// Stage s (0-based) corresponds to layer l = s + 1: it maps a_{l-1} to z_l.
/// Parameters are held separately from the stage geometry so oracles can
/// work on candidate parameter sets without copying the network.
class Network {
 public:
  Network() = default;
  /// Validates that adjacent shapes compose; parameters start at zero.
  explicit Network(std::vector<Stage> stages);

  std::size_t num_stages() const { return stages_.size(); }
  const Stage& stage(std::size_t s) const { return stages_.at(s); }
  const std::vector<Stage>& stages() const { return stages_; }
  std::size_t input_features() const;
  std::size_t num_classes() const;
  /// Input geometry of stage s's nonlinearity j.
  FeatureShape activation_input_shape(std::size_t s, std::size_t j) const;

  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  Tensor& theta(std::size_t s) { return params_.at(s); }
  const Tensor& theta(std::size_t s) const { return params_.at(s); }
  /// Replaces all parameters, checking shapes.
  void set_params(std::vector<Tensor> params);
  std::size_t num_parameters() const;

  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
  void init_uniform(std::uint64_t seed);

  std::string describe() const;

 private:
  std::vector<Stage> stages_;
  std::vector<Tensor> params_;
};

/// Fully connected network with the given widths and one activation kind
/// between linear layers (widths.size() >= 2).
Network make_mlp(std::span<const std::size_t> widths, NonlinearKind activation,
                 bool bias = true);

/// Activations recorded during a forward pass.
struct StageCache {
  Tensor input;                  // a_{l-1}
  Tensor z;                      // z_l = phi(theta_l, a_{l-1})
  std::vector<Tensor> internal;  // outputs of all but the last nonlinearity
  Tensor output;                 // a_l = sigma(z_l); equals z for the last stage
};

struct ForwardCache {
  std::vector<StageCache> stages;
  std::size_t batch = 0;
  bool diverged = false;

  const Tensor& logits() const { return stages.back().output; }
  /// Input to nonlinearity j of stage s.
  const Tensor& nonlinearity_input(std::size_t s, std::size_t j) const;
};

ForwardCache forward(const Network& net, const Tensor& x);
/// Forward pass with an explicit parameter set shaped like net.params().
ForwardCache forward(const Network& net, const std::vector<Tensor>& params, const Tensor& x);
/// Logits only, no cache retained.
Tensor predict(const Network& net, const Tensor& x);

/// sigma of stage s applied to a pre-activation (composition of its nonlinearities).
Tensor apply_sigma(const Network& net, std::size_t s, const Tensor& z);
/// J_sigma(z)^T w for stage s, using the cached nonlinearity inputs.
Tensor sigma_adjoint(const Network& net, const ForwardCache& cache, std::size_t s, const Tensor& w);

struct LossResult {
  double loss = 0.0;
  Tensor grad_logits;
};

/// Mean softmax cross-entropy with a max-shifted log-sum-exp.
LossResult loss_softmax_xent(const Tensor& logits, std::span<const int> labels);
/// Summed (not averaged) loss and the number of correct argmax predictions.
struct BatchScore {
  double loss_sum = 0.0;
  std::size_t correct = 0;
};
BatchScore score_batch(const Tensor& logits, std::span<const int> labels);

/// dJ/dz for each stage's pre-activation, given dJ/dlogits.
std::vector<Tensor> backprop_deltas(const Network& net, const ForwardCache& cache,
                                    const Tensor& grad_logits);
/// Classical chain-rule gradient with respect to every theta_l.
DirectionSet backprop_grad(const Network& net, const ForwardCache& cache,
                           std::span<const int> labels);

/// (grad_theta phi(., a)) residual for stage s.
Tensor phi_param_adjoint(const Network& net, std::size_t s, const Tensor& residual, const Tensor& a);
/// phi(theta_like, a) for stage s.
Tensor phi_of_param(const Network& net, std::size_t s, const Tensor& theta_like, const Tensor& a);

/// Throws ConsistencyError if `cache` was not produced by `net` on a batch of this size.
void check_cache(const Network& net, const ForwardCache& cache);

}  // namespace proxprop::nn
