#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "proxprop/data.hpp"
#include "proxprop/network.hpp"
#include "proxprop/optim.hpp"

namespace proxprop::run {

inline constexpr const char* kVersion = "0.1.0";

/// Environment variable consulted when no CIFAR-10 directory is configured.
inline constexpr const char* kDataDirEnv = "PROXPROP_DATA_DIR";

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  // dataset: cifar10 | csv | blobs | moons
  std::string dataset = "blobs";
  std::string data_dir;          // cifar10; falls back to $PROXPROP_DATA_DIR
  std::string csv_path;          // csv
  std::size_t subset = 5000;     // cifar10 training samples
  std::size_t val_size = 1000;   // cifar10 validation samples (taken after the training subset)
  double val_fraction = 0.1;     // other datasets: trailing fraction held out
  std::size_t samples = 200;     // blobs, moons
  std::size_t classes = 3;       // blobs
  double noise = 0.1;            // moons
  std::uint64_t data_seed = 0;

  std::string arch = "2-16-3";
  std::string activation = "relu";  // MLP strings only
  bool bias = true;

  std::string oracle = "backprop";  // backprop | proxprop_exact | proxprop_cg<k>
  double tau = 0.01;                // outer learning rate
  std::optional<double> tau_theta;  // default 0.05 (exact) / 1 (cg)
  std::string optimizer = "sgd";    // sgd | nesterov | adam
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  std::size_t batch_size = 500;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  std::string out;         // JSONL log path; the CSV mirror replaces the extension
  bool wall_time = false;  // write elapsed seconds into the CSV mirror

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Flags that reproduce the configuration through the command line.
std::string to_command_line(const TrainConfig& c);

/// Parses "3072-500-120-500-10" (fully connected, `activation` between
/// layers) or a bracketed stack such as "[3x32x32]-conv8k5p2-relu-pool2-fc10".
/// Conv tokens: conv<out>k<kernel>[s<stride>][p<pad>]; pool<w>[s<stride>];
/// relu; tanh; fc<out>. Parameters are left at zero.
nn::Network parse_architecture(const std::string& arch, nn::NonlinearKind activation, bool bias = true);
nn::NonlinearKind parse_activation(const std::string& name);
optim::Oracle parse_oracle(const std::string& name, std::optional<double> tau_theta);
optim::OptimizerSpec make_optimizer(const TrainConfig& c);

data::Split load_data(const TrainConfig& c);
/// Network for the configuration, initialized from `seed`.
nn::Network build_network(const TrainConfig& c, const data::Dataset& sample);

struct RunResult {
  optim::TrainLog log;
  int exit_code = 0;  // 0 completed, 2 diverged
};

/// Trains on an already loaded split; writes the logs when `c.out` is set.
RunResult run(const TrainConfig& c, const data::Split& split);
/// Loads the data and trains.
RunResult run(const TrainConfig& c);

std::filesystem::path csv_path_for(const std::string& out);
void write_csv(std::ostream& os, const optim::TrainLog& log, bool wall_time);

struct SweepCell {
  std::string oracle;
  double tau = 0.0;
  std::optional<double> final_loss;  // empty: diverged or failed
  double initial_loss = 0.0;
  std::string error;
};

struct SweepTable {
  std::vector<std::string> oracles;
  std::vector<double> taus;
  std::vector<SweepCell> cells;  // oracle-major

  const SweepCell& at(std::size_t oracle, std::size_t tau) const { return cells.at(oracle * taus.size() + tau); }
};

/// Runs every (oracle, tau) cell from the same initialization; cells run on
/// `workers` threads. Per-cell failures are recorded as diverged.
SweepTable stability_sweep(const TrainConfig& base, const data::Split& split, const std::vector<double>& taus,
                           const std::vector<std::string>& oracles, std::size_t workers = 1);
/// One row per oracle, one column per tau; diverged cells read DIVERGED.
void write_sweep_csv(std::ostream& os, const SweepTable& table);

}  // namespace proxprop::run
