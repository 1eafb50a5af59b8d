// proxprop: train, sweep, verify, probe-conditioning.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "proxprop/errors.hpp"
#include "proxprop/kernels.hpp"
#include "proxprop/run.hpp"
#include "proxprop/verify.hpp"

namespace {

using proxprop::run::TrainConfig;

struct Flags {
  TrainConfig config;
  double tau_theta = 1.0;
  bool no_bias = false;
};

void add_config_flag(CLI::App* app) {
  // Expanded by expand_config before parsing; declared here for --help.
  app->add_option("--config", "key=value file (one per line); flags override it");
}

bool is_flag_token(const std::string& arg) { return arg.size() > 2 && arg.compare(0, 2, "--") == 0; }

// Rewrites `<verb> ... --config FILE ...` into `<verb> --key=value ... ...`,
// dropping file keys that are also given on the command line.
std::vector<std::string> expand_config(const CLI::App& app, std::vector<std::string> args) {
  auto verb = std::find_if(args.begin(), args.end(), [&](const std::string& a) {
    return app.get_subcommand_no_throw(a) != nullptr;
  });
  if (verb == args.end()) return args;
  const CLI::App* sub = app.get_subcommand_no_throw(*verb);
  const std::size_t at = static_cast<std::size_t>(verb - args.begin());

  std::string path;
  std::set<const CLI::Option*> given;
  for (std::size_t i = at + 1; i < args.size();) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      continue;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      continue;
    }
    if (is_flag_token(args[i])) {
      if (const CLI::Option* op = sub->get_option_no_throw(args[i].substr(0, args[i].find('=')))) given.insert(op);
    }
    ++i;
  }
  if (path.empty()) return args;

  std::ifstream in(path);
  if (!in) throw proxprop::run::IoError("cannot read config file " + path);
  std::vector<std::string> injected;
  for (const CLI::ConfigItem& item : CLI::ConfigINI().from_config(in)) {
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == sub->get_name())) continue;
    const CLI::Option* op = sub->get_option_no_throw("--" + item.name);
    if (op == nullptr) throw proxprop::ConfigError("unknown key '" + item.name + "' in " + path);
    if (given.count(op) > 0) continue;
    std::string value;
    for (const std::string& v : item.inputs) value += (value.empty() ? "" : ",") + v;
    injected.push_back("--" + item.name + "=" + value);
  }
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(at + 1), injected.begin(), injected.end());
  return args;
}

void add_data_flags(CLI::App* app, Flags& f) {
  TrainConfig& c = f.config;
  app->add_option("--dataset", c.dataset, "cifar10 | csv | blobs | moons")->capture_default_str();
  app->add_option("--data-dir,--data_dir", c.data_dir, "CIFAR-10 binary batch directory")
      ->envname(proxprop::run::kDataDirEnv);
  app->add_option("--csv,--csv_path", c.csv_path, "CSV file: label followed by features per line");
  app->add_option("--subset", c.subset, "CIFAR-10 training samples")->capture_default_str();
  app->add_option("--val-size,--val_size", c.val_size, "CIFAR-10 validation samples")->capture_default_str();
  app->add_option("--val-fraction,--val_fraction", c.val_fraction, "held-out fraction (non-CIFAR)")
      ->capture_default_str();
  app->add_option("--samples", c.samples, "synthetic sample count")->capture_default_str();
  app->add_option("--classes", c.classes, "blob classes")->capture_default_str();
  app->add_option("--noise", c.noise, "moons noise")->capture_default_str();
  app->add_option("--data-seed,--data_seed", c.data_seed, "synthetic data seed")->capture_default_str();
  app->add_option("--threads", c.threads, "kernel threads")->capture_default_str();
}

void add_train_flags(CLI::App* app, Flags& f) {
  TrainConfig& c = f.config;
  add_data_flags(app, f);
  app->add_option("--arch", c.arch, "e.g. 3072-500-120-500-10 or [3x32x32]-conv8k5p2-relu-pool2-fc10")
      ->capture_default_str();
  app->add_option("--activation", c.activation, "relu | tanh (MLP strings)")->capture_default_str();
  app->add_flag("--no-bias,--no_bias", f.no_bias, "linear layers without bias");
  app->add_option("--oracle", c.oracle, "backprop | proxprop_exact | proxprop_cg<k>")->capture_default_str();
  app->add_option("--tau", c.tau, "learning rate")->capture_default_str();
  app->add_option("--tau-theta,--tau_theta", f.tau_theta, "prox step (default 0.05 exact, 1 cg)");
  app->add_option("--optimizer", c.optimizer, "sgd | nesterov | adam")->capture_default_str();
  app->add_option("--momentum", c.momentum, "Nesterov mu")->capture_default_str();
  app->add_option("--beta1", c.beta1)->capture_default_str();
  app->add_option("--beta2", c.beta2)->capture_default_str();
  app->add_option("--eps", c.eps)->capture_default_str();
  app->add_option("--batch-size,--batch_size", c.batch_size)->capture_default_str();
  app->add_option("--epochs", c.epochs)->capture_default_str();
  app->add_option("--seed", c.seed, "initialization and shuffling seed")->capture_default_str();
  app->add_flag("--wall-time,--wall_time", c.wall_time, "write elapsed seconds into the CSV mirror");
  add_config_flag(app);
}

void finish_flags(CLI::App* app, Flags& f) {
  if (app->count("--tau-theta") > 0) f.config.tau_theta = f.tau_theta;
  if (f.no_bias) f.config.bias = false;
}

std::vector<double> parse_doubles(const std::vector<std::string>& items) {
  std::vector<double> out;
  for (const std::string& s : items) out.push_back(std::stod(s));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ProxProp and BackProp training harness"};
  app.require_subcommand(1);

  Flags train_flags;
  CLI::App* train = app.add_subcommand("train", "train one configuration");
  add_train_flags(train, train_flags);
  train->add_option("--out", train_flags.config.out, "JSONL log path (CSV mirror next to it)");

  Flags sweep_flags;
  std::vector<std::string> taus = {"10", "1", "0.1", "0.05", "0.005"};
  std::vector<std::string> oracles = {"backprop", "proxprop_cg3"};
  std::size_t workers = 1;
  std::string table_path;
  CLI::App* sweep = app.add_subcommand("sweep", "step-size stability table");
  add_train_flags(sweep, sweep_flags);
  sweep->add_option("--taus", taus, "learning rates")->delimiter(',')->capture_default_str();
  sweep->add_option("--oracles", oracles, "oracles")->delimiter(',')->capture_default_str();
  sweep->add_option("--workers", workers, "parallel cells")->capture_default_str();
  sweep->add_option("--table", table_path, "CSV output (stdout when empty)");

  std::vector<std::string> suites;
  std::string verify_out;
  int verify_threads = 1;
  CLI::App* verify = app.add_subcommand("verify", "run the property suites");
  verify->add_option("--suite", suites, "suite name (repeatable; default all)");
  verify->add_option("--out", verify_out, "JSONL output (stdout when empty)");
  verify->add_option("--threads", verify_threads)->capture_default_str();

  Flags probe_flags;
  int power_iters = 200;
  std::uint64_t probe_seed = 0;
  CLI::App* probe = app.add_subcommand("probe-conditioning", "extreme eigenvalues of X X^T");
  add_data_flags(probe, probe_flags);
  probe->add_option("--power-iters,--power_iters", power_iters)->capture_default_str();
  probe->add_option("--seed", probe_seed)->capture_default_str();
  add_config_flag(probe);

  std::vector<std::string> args;
  try {
    args = expand_config(app, std::vector<std::string>(argv + 1, argv + argc));
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  }
  std::vector<char*> expanded = {argv[0]};
  for (std::string& a : args) expanded.push_back(a.data());
  CLI11_PARSE(app, static_cast<int>(expanded.size()), expanded.data());

  try {
    if (train->parsed()) {
      finish_flags(train, train_flags);
      const auto result = proxprop::run::run(train_flags.config);
      const auto& last = result.log.records.back();
      std::cerr << (result.log.diverged ? "diverged" : "completed") << " after epoch " << last.epoch
                << ", full-batch loss " << last.train_loss << '\n';
      return result.exit_code;
    }
    if (sweep->parsed()) {
      finish_flags(sweep, sweep_flags);
      sweep_flags.config.validate();
      const auto split = proxprop::run::load_data(sweep_flags.config);
      const auto table =
          proxprop::run::stability_sweep(sweep_flags.config, split, parse_doubles(taus), oracles, workers);
      for (const auto& cell : table.cells) {
        if (!cell.error.empty()) std::cerr << cell.oracle << " tau=" << cell.tau << ": " << cell.error << '\n';
      }
      if (table_path.empty()) {
        proxprop::run::write_sweep_csv(std::cout, table);
      } else {
        std::ofstream os(table_path);
        if (!os) throw proxprop::run::IoError("cannot write " + table_path);
        proxprop::run::write_sweep_csv(os, table);
      }
      return 0;
    }
    if (verify->parsed()) {
      proxprop::kernels::set_num_threads(verify_threads);
      if (suites.empty()) suites = proxprop::verify::suite_names();
      std::ofstream file;
      if (!verify_out.empty()) {
        file.open(verify_out);
        if (!file) throw proxprop::run::IoError("cannot write " + verify_out);
      }
      std::ostream& os = verify_out.empty() ? std::cout : file;
      bool all = true;
      for (const std::string& name : suites) {
        const auto r = proxprop::verify::run_suite(name);
        all = all && r.pass;
        os << proxprop::verify::to_record(r).dump() << '\n' << std::flush;
        std::cerr << (r.pass ? "PASS " : "FAIL ") << name << ": " << r.summary << '\n';
      }
      return all ? 0 : 1;
    }
    if (probe->parsed()) {
      proxprop::kernels::set_num_threads(static_cast<int>(probe_flags.config.threads));
      const auto split = proxprop::run::load_data(probe_flags.config);
      const auto g = proxprop::verify::gram_conditioning(split.train.x, power_iters, probe_seed);
      nlohmann::json rec = {{"record", "conditioning"},
                            {"samples", split.train.size()},
                            {"features", split.train.features()},
                            {"lambda_max", g.lambda_max},
                            {"lambda_max_dense", g.lambda_max_dense},
                            {"lambda_min", g.lambda_min}};
      rec["ratio"] = std::isfinite(g.ratio) ? nlohmann::json(g.ratio) : nlohmann::json("inf");
      std::cout << rec.dump() << '\n';
      return 0;
    }
  } catch (const proxprop::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
