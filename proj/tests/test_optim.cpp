#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "proxprop/data.hpp"
#include "proxprop/optim.hpp"
#include "proxprop/verify.hpp"

using namespace proxprop;
using namespace proxprop::optim;

namespace {

nn::DirectionSet dirs_of(std::vector<Tensor> d) {
  nn::DirectionSet s;
  s.updates.assign(d.size(), nn::DirectionSet::Update::explicit_step);
  s.directions = std::move(d);
  return s;
}

std::vector<Tensor> random_blocks(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return {verify::random_normal(3, 4, rng), verify::random_normal(2, 5, rng)};
}

std::vector<Tensor> scalar(double v) { return {Tensor::from_rows({{v}})}; }

data::Split blob_split(std::uint64_t seed) {
  const data::Dataset d = data::synth_blobs(250, 2, seed);
  return {data::slice(d, 0, 200), data::slice(d, 200, 250)};
}

nn::Network blob_net(std::uint64_t seed) {
  nn::Network net = nn::make_mlp(std::vector<std::size_t>{2, 16, 2}, nn::NonlinearKind::relu);
  net.init_uniform(seed);
  return net;
}

}  // namespace

TEST(Sgd, Examples) {
  std::vector<Tensor> p = random_blocks(1);
  const std::vector<Tensor> orig = p;
  OptimizerState s(OptimizerSpec::sgd(0.3));
  sgd_apply(s, p, dirs_of({Tensor(orig[0].shape()), Tensor(orig[1].shape())}));
  EXPECT_EQ(p, orig);

  OptimizerState one(OptimizerSpec::sgd(1.0));
  sgd_apply(one, p, dirs_of(orig));
  EXPECT_EQ(max_abs(p[0]) + max_abs(p[1]), 0.0);

  std::vector<Tensor> q = orig;
  const std::vector<Tensor> g = random_blocks(2);
  sgd_apply(s, q, dirs_of(g));
  for (std::size_t b = 0; b < q.size(); ++b)
    for (std::size_t i = 0; i < q[b].size(); ++i)
      EXPECT_NEAR(q[b].values()[i], orig[b].values()[i] - 0.3 * g[b].values()[i], 1e-15);
  EXPECT_EQ(s.step, 2);
}

TEST(Nesterov, ZeroMomentumIsSgd) {
  std::vector<Tensor> a = random_blocks(3), b = a;
  OptimizerState n(OptimizerSpec::nesterov(0.2, 0.0));
  OptimizerState s(OptimizerSpec::sgd(0.2));
  for (std::uint64_t k = 0; k < 3; ++k) {
    const nn::DirectionSet d = dirs_of(random_blocks(10 + k));
    nesterov_apply(n, a, d);
    sgd_apply(s, b, d);
  }
  EXPECT_EQ(a, b);
}

TEST(Nesterov, FirstStepByHand) {
  std::vector<Tensor> p = scalar(0.0);
  OptimizerState n(OptimizerSpec::nesterov(1.0, 0.9));
  nesterov_apply(n, p, dirs_of(scalar(1.0)));
  EXPECT_DOUBLE_EQ(n.first[0](0, 0), 1.0);
  EXPECT_DOUBLE_EQ(p[0](0, 0), -1.9);
}

TEST(Nesterov, TwoStepRecursion) {
  const double mu = 0.7, tau = 0.05, d = 1.3;
  std::vector<Tensor> p = scalar(2.0);
  OptimizerState n(OptimizerSpec::nesterov(tau, mu));
  double m = 0.0, theta = 2.0;
  for (int k = 0; k < 2; ++k) {
    nesterov_apply(n, p, dirs_of(scalar(d)));
    m = mu * m + d;
    theta = theta - tau * (mu * m + d);
    EXPECT_NEAR(p[0](0, 0), theta, 1e-14);
  }
  ASSERT_EQ(n.first[0].shape(), p[0].shape());
}

TEST(Adam, ZeroDirectionNeverMoves) {
  std::vector<Tensor> p = random_blocks(4);
  const std::vector<Tensor> orig = p;
  OptimizerState a(OptimizerSpec::adam(0.1));
  for (int k = 0; k < 5; ++k) adam_apply(a, p, dirs_of({Tensor(orig[0].shape()), Tensor(orig[1].shape())}));
  EXPECT_EQ(p, orig);
  EXPECT_EQ(a.step, 5);
}

TEST(Adam, FirstStepHasMagnitudeTau) {
  std::vector<Tensor> p = random_blocks(5);
  const std::vector<Tensor> orig = p;
  const std::vector<Tensor> g = random_blocks(6);
  OptimizerState a(OptimizerSpec::adam(1e-3));
  adam_apply(a, p, dirs_of(g));
  for (std::size_t b = 0; b < p.size(); ++b)
    for (std::size_t i = 0; i < p[b].size(); ++i) {
      const double step = orig[b].values()[i] - p[b].values()[i];
      const double gi = g[b].values()[i];
      EXPECT_NEAR(step, 1e-3 * gi / (std::abs(gi) + 1e-8), 1e-15);
      EXPECT_NEAR(std::abs(step), 1e-3, 1e-3 * 1e-6 / std::abs(gi));
    }
}

TEST(Adam, ThreeStepScalarRecursion) {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, tau = 0.01;
  const double gs[3] = {0.5, -2.0, 0.25};
  std::vector<Tensor> p = scalar(1.0);
  OptimizerState a(OptimizerSpec::adam(tau));
  double m = 0, v = 0, theta = 1.0;
  for (int t = 1; t <= 3; ++t) {
    const double g = gs[t - 1];
    adam_apply(a, p, dirs_of(scalar(g)));
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    theta -= tau * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    EXPECT_NEAR(p[0](0, 0), theta, 1e-14);
  }
}

TEST(Optimizers, ShapeAndConfigErrors) {
  std::vector<Tensor> p = random_blocks(7);
  OptimizerState s(OptimizerSpec::sgd(0.1));
  EXPECT_THROW(sgd_apply(s, p, dirs_of({p[0]})), DimensionError);
  EXPECT_THROW(sgd_apply(s, p, dirs_of({p[1], p[0]})), DimensionError);
  OptimizerState n(OptimizerSpec::nesterov(0.1, 0.9));
  EXPECT_THROW(nesterov_apply(n, p, dirs_of({p[0]})), DimensionError);
  OptimizerState a(OptimizerSpec::adam(0.1));
  EXPECT_THROW(adam_apply(a, p, dirs_of({p[0], p[0]})), DimensionError);
  EXPECT_THROW(OptimizerState(OptimizerSpec::sgd(0.0)), ConfigError);
  EXPECT_THROW(OptimizerState(OptimizerSpec::nesterov(0.1, 1.0)), ConfigError);
  OptimizerSpec bad = OptimizerSpec::adam(0.1);
  bad.beta2 = 1.0;
  EXPECT_THROW(OptimizerState{bad}, ConfigError);
}

TEST(Train, ZeroEpochsRecordsInitialEvaluation) {
  const data::Split sp = blob_split(1);
  nn::Network net = blob_net(1);
  const std::vector<Tensor> before = net.params();
  TrainOptions opts;
  opts.epochs = 0;
  const TrainLog log = train(net, sp.train, sp.validation, opts, BackpropOracle{});
  ASSERT_EQ(log.records.size(), 1u);
  EXPECT_EQ(log.records[0].epoch, 0u);
  EXPECT_EQ(net.params(), before);
  EXPECT_NEAR(log.initial_loss(), evaluate(net, sp.train).loss, 1e-15);
}

TEST(Train, SeparableBlobsReachHighAccuracyWithEitherOracle) {
  const data::Split sp = blob_split(2);
  const std::vector<Oracle> oracles = {BackpropOracle{}, ProxPropOracle{prox::ProxConfig::cg(3)},
                                       ProxPropOracle{prox::ProxConfig::exact(0.05)}};
  for (const Oracle& o : oracles) {
    nn::Network net = blob_net(3);
    TrainOptions opts;
    opts.epochs = 30;
    opts.batch_size = 20;
    opts.optimizer = OptimizerSpec::sgd(0.1);
    const TrainLog log = train(net, sp.train, sp.validation, opts, o);
    EXPECT_FALSE(log.diverged);
    ASSERT_EQ(log.records.size(), 31u);
    for (std::size_t e = 0; e < log.records.size(); ++e) EXPECT_EQ(log.records[e].epoch, e);
    EXPECT_GE(evaluate(net, sp.train).accuracy, 0.99) << oracle_name(o);
    EXPECT_LT(log.final_loss(), log.initial_loss());
  }
}

TEST(Train, IdenticalSeedsGiveIdenticalLogs) {
  const data::Split sp = blob_split(4);
  auto run = [&](std::uint64_t seed) {
    nn::Network net = blob_net(5);
    TrainOptions opts;
    opts.epochs = 4;
    opts.batch_size = 32;
    opts.seed = seed;
    opts.optimizer = OptimizerSpec::nesterov(0.05, 0.9);
    TrainLog log = train(net, sp.train, sp.validation, opts, ProxPropOracle{prox::ProxConfig::cg(3)});
    return std::make_pair(log, net.params());
  };
  const auto a = run(9), b = run(9), c = run(10);
  ASSERT_EQ(a.first.records.size(), b.first.records.size());
  for (std::size_t e = 0; e < a.first.records.size(); ++e) {
    EXPECT_EQ(a.first.records[e].train_loss, b.first.records[e].train_loss);
    EXPECT_EQ(a.first.records[e].val_accuracy, b.first.records[e].val_accuracy);
  }
  EXPECT_EQ(a.second, b.second);
  EXPECT_NE(a.second, c.second);
}

TEST(Train, OneFullBatchStepEqualsCompositeUpdate) {
  const data::Split sp = blob_split(6);
  nn::Network net = blob_net(7);
  nn::Network ref = net;
  TrainOptions opts;
  opts.epochs = 1;
  opts.batch_size = sp.train.size();
  opts.seed = 11;
  opts.optimizer = OptimizerSpec::sgd(0.5);
  const ProxPropOracle oracle{prox::ProxConfig::exact(0.05)};
  train(net, sp.train, sp.validation, opts, oracle);

  std::vector<std::size_t> order(sp.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(11);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> labels;
  for (std::size_t i : order) labels.push_back(sp.train.labels[i]);
  const nn::DirectionSet d = prox::proxprop_directions(ref, select_columns(sp.train.x, order), labels, oracle.config);
  for (std::size_t s = 0; s < ref.num_stages(); ++s) axpy(-0.5, d.directions[s], ref.theta(s));
  EXPECT_EQ(net.params(), ref.params());
}

TEST(Train, DivergenceStopsTheRun) {
  const data::Split sp = blob_split(8);
  nn::Network net = blob_net(9);
  TrainOptions opts;
  opts.epochs = 10;
  opts.batch_size = 10;
  opts.optimizer = OptimizerSpec::sgd(1e300);
  const TrainLog log = train(net, sp.train, sp.validation, opts, BackpropOracle{});
  EXPECT_TRUE(log.diverged);
  EXPECT_TRUE(log.records.back().diverged);
  EXPECT_LT(log.records.size(), 11u);
  for (std::size_t e = 0; e + 1 < log.records.size(); ++e) EXPECT_FALSE(log.records[e].diverged);
}

TEST(Train, ConfigErrorsBeforeCompute) {
  const data::Split sp = blob_split(10);
  nn::Network net = blob_net(11);
  const std::vector<Tensor> before = net.params();
  TrainOptions opts;
  opts.batch_size = 0;
  EXPECT_THROW(train(net, sp.train, sp.validation, opts, BackpropOracle{}), ConfigError);
  opts.batch_size = 10;
  EXPECT_THROW(train(net, data::slice(sp.train, 0, 0), sp.validation, opts, BackpropOracle{}), ConfigError);
  EXPECT_THROW(train(net, sp.train, sp.validation, opts, ProxPropOracle{prox::ProxConfig::cg(0)}), ConfigError);
  nn::Network wide = nn::make_mlp(std::vector<std::size_t>{3, 4, 2}, nn::NonlinearKind::relu);
  EXPECT_THROW(train(wide, sp.train, sp.validation, opts, BackpropOracle{}), ConfigError);
  data::Dataset bad_labels = sp.train;
  bad_labels.labels[0] = 5;
  EXPECT_THROW(train(net, bad_labels, sp.validation, opts, BackpropOracle{}), ConfigError);
  opts.optimizer.learning_rate = -1.0;
  EXPECT_THROW(train(net, sp.train, sp.validation, opts, BackpropOracle{}), ConfigError);
  EXPECT_EQ(net.params(), before);
}

TEST(Train, ShuffledIndicesArePermutations) {
  std::vector<std::size_t> p = shuffled_indices(50, 3);
  EXPECT_EQ(p, shuffled_indices(50, 3));
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(p[i], i);
}
