#include "proxprop/run.hpp"

#include <atomic>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include "proxprop/kernels.hpp"

namespace proxprop::run {

using nn::FeatureShape;
using nn::LinearTransfer;
using nn::NonlinearKind;
using nn::Nonlinearity;

void TrainConfig::validate() const {
  if (dataset != "cifar10" && dataset != "csv" && dataset != "blobs" && dataset != "moons") {
    throw ConfigError("unknown dataset '" + dataset + "' (cifar10, csv, blobs, moons)");
  }
  if (dataset == "csv" && csv_path.empty()) throw ConfigError("csv dataset needs a path");
  if (dataset == "cifar10" && subset == 0) throw ConfigError("cifar10 subset must be positive");
  if ((dataset == "blobs" || dataset == "moons") && samples < 2) throw ConfigError("samples must be >= 2");
  if (dataset == "blobs" && (classes < 2 || samples < classes)) throw ConfigError("blobs need samples >= classes >= 2");
  if (!(noise >= 0.0)) throw ConfigError("noise must be non-negative");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must be in [0, 1)");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be positive");
  if (tau_theta && !(*tau_theta > 0.0)) throw ConfigError("tau_theta must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (threads == 0) throw ConfigError("threads must be positive");
  parse_activation(activation);
  parse_oracle(oracle, tau_theta);
  make_optimizer(*this).validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j = {{"dataset", c.dataset},
                      {"data_dir", c.data_dir},
                      {"csv_path", c.csv_path},
                      {"subset", c.subset},
                      {"val_size", c.val_size},
                      {"val_fraction", c.val_fraction},
                      {"samples", c.samples},
                      {"classes", c.classes},
                      {"noise", c.noise},
                      {"data_seed", c.data_seed},
                      {"arch", c.arch},
                      {"activation", c.activation},
                      {"bias", c.bias},
                      {"oracle", c.oracle},
                      {"tau", c.tau},
                      {"optimizer", c.optimizer},
                      {"momentum", c.momentum},
                      {"beta1", c.beta1},
                      {"beta2", c.beta2},
                      {"eps", c.eps},
                      {"batch_size", c.batch_size},
                      {"epochs", c.epochs},
                      {"seed", c.seed},
                      {"threads", c.threads},
                      {"out", c.out},
                      {"wall_time", c.wall_time}};
  j["tau_theta"] = c.tau_theta ? nlohmann::json(*c.tau_theta) : nlohmann::json(nullptr);
  return j;
}

namespace {

// Shortest text that parses back to the same double.
std::string exact_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string to_command_line(const TrainConfig& c) {
  std::ostringstream os;
  os << "train --dataset " << c.dataset;
  if (!c.data_dir.empty()) os << " --data-dir " << c.data_dir;
  if (!c.csv_path.empty()) os << " --csv " << c.csv_path;
  os << " --subset " << c.subset << " --val-size " << c.val_size << " --val-fraction "
     << exact_double(c.val_fraction) << " --samples " << c.samples << " --classes " << c.classes << " --noise "
     << exact_double(c.noise) << " --data-seed " << c.data_seed << " --arch '" << c.arch << "' --activation "
     << c.activation << (c.bias ? "" : " --no-bias") << " --oracle " << c.oracle << " --tau "
     << exact_double(c.tau);
  if (c.tau_theta) os << " --tau-theta " << exact_double(*c.tau_theta);
  os << " --optimizer " << c.optimizer << " --momentum " << exact_double(c.momentum) << " --beta1 "
     << exact_double(c.beta1) << " --beta2 " << exact_double(c.beta2) << " --eps " << exact_double(c.eps)
     << " --batch-size " << c.batch_size << " --epochs " << c.epochs << " --seed " << c.seed << " --threads "
     << c.threads;
  return os.str();
}

NonlinearKind parse_activation(const std::string& name) {
  if (name == "relu") return NonlinearKind::relu;
  if (name == "tanh") return NonlinearKind::tanh;
  throw ConfigError("unknown activation '" + name + "' (relu, tanh)");
}

namespace {

std::size_t parse_count(const std::string& s, const std::string& token) {
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char ch) { return std::isdigit(ch); })) {
    throw ConfigError("bad number in architecture token '" + token + "'");
  }
  return std::stoul(s);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, sep)) parts.push_back(part);
  return parts;
}

nn::Network parse_stack(const std::string& arch, bool bias) {
  static const std::regex shape_re(R"(\[(\d+)x(\d+)x(\d+)\])");
  static const std::regex conv_re(R"(conv(\d+)k(\d+)(?:s(\d+))?(?:p(\d+))?)");
  static const std::regex pool_re(R"(pool(\d+)(?:s(\d+))?)");
  static const std::regex fc_re(R"(fc(\d+))");

  const std::size_t close = arch.find(']');
  if (close == std::string::npos) throw ConfigError("architecture '" + arch + "': missing ']'");
  std::smatch m;
  const std::string head = arch.substr(0, close + 1);
  if (!std::regex_match(head, m, shape_re)) throw ConfigError("architecture '" + arch + "': bad input shape");
  FeatureShape cur{std::stoul(m[1]), std::stoul(m[2]), std::stoul(m[3])};
  if (cur.size() == 0) throw ConfigError("architecture '" + arch + "': empty input shape");

  std::string rest = arch.substr(close + 1);
  if (rest.empty() || rest.front() != '-') throw ConfigError("architecture '" + arch + "': no layers");
  std::vector<nn::Stage> stages;
  for (const std::string& tok : split(rest.substr(1), '-')) {
    if (std::regex_match(tok, m, conv_re)) {
      const std::size_t stride = m[3].matched ? parse_count(m[3], tok) : 1;
      const std::size_t pad = m[4].matched ? parse_count(m[4], tok) : 0;
      LinearTransfer lin = LinearTransfer::conv2d(cur, parse_count(m[1], tok), parse_count(m[2], tok), stride, pad, bias);
      cur = lin.output_shape();
      stages.push_back({std::move(lin), {}});
    } else if (std::regex_match(tok, m, fc_re)) {
      LinearTransfer lin = LinearTransfer::fully_connected(cur.size(), parse_count(m[1], tok), bias);
      cur = lin.output_shape();
      stages.push_back({std::move(lin), {}});
    } else if (tok == "relu" || tok == "tanh" || std::regex_match(tok, m, pool_re)) {
      if (stages.empty()) throw ConfigError("architecture '" + arch + "': '" + tok + "' before any linear layer");
      if (tok == "relu") {
        stages.back().activations.push_back(Nonlinearity::relu());
      } else if (tok == "tanh") {
        stages.back().activations.push_back(Nonlinearity::tanh());
      } else {
        const std::size_t w = parse_count(m[1], tok);
        const std::size_t s = m[2].matched ? parse_count(m[2], tok) : w;
        Nonlinearity pool = Nonlinearity::maxpool(cur, w, s);
        cur = pool.output_shape(cur);
        stages.back().activations.push_back(std::move(pool));
      }
    } else {
      throw ConfigError("architecture '" + arch + "': unknown token '" + tok + "'");
    }
  }
  return nn::Network(std::move(stages));
}

}  // namespace

nn::Network parse_architecture(const std::string& arch, NonlinearKind activation, bool bias) {
  if (arch.empty()) throw ConfigError("empty architecture");
  try {
    if (arch.front() == '[') return parse_stack(arch, bias);
    std::vector<std::size_t> widths;
    for (const std::string& tok : split(arch, '-')) widths.push_back(parse_count(tok, tok));
    if (widths.size() < 2) throw ConfigError("architecture '" + arch + "' needs at least two widths");
    if (std::find(widths.begin(), widths.end(), std::size_t{0}) != widths.end()) {
      throw ConfigError("architecture '" + arch + "' has a zero width");
    }
    return nn::make_mlp(widths, activation, bias);
  } catch (const DimensionError& e) {
    throw ConfigError("architecture '" + arch + "': " + e.what());
  } catch (const InputError& e) {
    throw ConfigError("architecture '" + arch + "': " + e.what());
  }
}

optim::Oracle parse_oracle(const std::string& name, std::optional<double> tau_theta) {
  if (name == "backprop") return optim::BackpropOracle{};
  if (name == "proxprop_exact") {
    return optim::ProxPropOracle{prox::ProxConfig::exact(tau_theta.value_or(0.05))};
  }
  static const std::regex cg_re(R"(proxprop_cg(\d+))");
  std::smatch m;
  if (std::regex_match(name, m, cg_re)) {
    const int k = std::stoi(m[1]);
    if (k < 1) throw ConfigError("CG iteration count must be >= 1");
    return optim::ProxPropOracle{prox::ProxConfig::cg(k, tau_theta.value_or(1.0))};
  }
  throw ConfigError("unknown oracle '" + name + "' (backprop, proxprop_exact, proxprop_cg<k>)");
}

optim::OptimizerSpec make_optimizer(const TrainConfig& c) {
  optim::OptimizerSpec o;
  if (c.optimizer == "sgd") {
    o.kind = optim::OptimizerKind::sgd;
  } else if (c.optimizer == "nesterov") {
    o.kind = optim::OptimizerKind::nesterov;
  } else if (c.optimizer == "adam") {
    o.kind = optim::OptimizerKind::adam;
  } else {
    throw ConfigError("unknown optimizer '" + c.optimizer + "' (sgd, nesterov, adam)");
  }
  o.learning_rate = c.tau;
  o.momentum = c.momentum;
  o.beta1 = c.beta1;
  o.beta2 = c.beta2;
  o.eps = c.eps;
  return o;
}

data::Split load_data(const TrainConfig& c) {
  if (c.dataset == "cifar10") {
    std::string dir = c.data_dir;
    if (dir.empty()) {
      const char* env = std::getenv(kDataDirEnv);
      if (env == nullptr || *env == '\0') {
        throw IoError(std::string("no CIFAR-10 directory: pass --data-dir or set ") + kDataDirEnv);
      }
      dir = env;
    }
    data::Dataset all;
    try {
      all = data::load_cifar10(dir, c.subset + c.val_size);
    } catch (const FormatError&) {
      throw;
    } catch (const std::runtime_error& e) {
      throw IoError(e.what());
    }
    const std::size_t n_train = std::min(c.subset, all.size());
    return data::Split{data::slice(all, 0, n_train), data::slice(all, n_train, all.size())};
  }
  data::Dataset d;
  if (c.dataset == "csv") {
    try {
      d = data::load_csv(c.csv_path);
    } catch (const FormatError&) {
      throw;
    } catch (const std::runtime_error& e) {
      throw IoError(e.what());
    }
  } else if (c.dataset == "blobs") {
    d = data::synth_blobs(c.samples, c.classes, c.data_seed);
  } else {
    d = data::synth_moons(c.samples, c.noise, c.data_seed);
  }
  // Synthetic generators emit classes in a fixed cycle; a seeded shuffle keeps
  // the trailing validation split class-balanced and representative.
  if (c.dataset != "csv") {
    const std::vector<std::size_t> perm = optim::shuffled_indices(d.size(), c.data_seed ^ 0x9e3779b97f4a7c15ULL);
    data::Dataset shuffled = d;
    shuffled.x = select_columns(d.x, perm);
    for (std::size_t j = 0; j < perm.size(); ++j) shuffled.labels[j] = d.labels[perm[j]];
    d = std::move(shuffled);
  }
  return data::split_tail(d, c.val_fraction);
}

nn::Network build_network(const TrainConfig& c, const data::Dataset& sample) {
  nn::Network net = parse_architecture(c.arch, parse_activation(c.activation), c.bias);
  if (net.input_features() != sample.features()) {
    throw ConfigError("architecture expects " + std::to_string(net.input_features()) + " inputs, data has " +
                      std::to_string(sample.features()));
  }
  if (sample.num_classes > net.num_classes()) {
    throw ConfigError("architecture has " + std::to_string(net.num_classes()) + " outputs, data has " +
                      std::to_string(sample.num_classes) + " classes");
  }
  net.init_uniform(c.seed);
  return net;
}

std::filesystem::path csv_path_for(const std::string& out) {
  std::filesystem::path p(out);
  p.replace_extension(".csv");
  return p;
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return exact_double(v);
}

nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

nlohmann::json epoch_record(const optim::EpochRecord& r) {
  return {{"record", "epoch"},
          {"epoch", r.epoch},
          {"full_batch_train_loss", number_or_null(r.train_loss)},
          {"val_accuracy", number_or_null(r.val_accuracy)},
          {"elapsed_seconds", r.elapsed_seconds},
          {"diverged", r.diverged}};
}

}  // namespace

void write_csv(std::ostream& os, const optim::TrainLog& log, bool wall_time) {
  os << "epoch,loss,val_acc,seconds,diverged\n";
  for (const optim::EpochRecord& r : log.records) {
    os << r.epoch << ',' << fmt(r.train_loss) << ',' << fmt(r.val_accuracy) << ','
       << (wall_time ? fmt(r.elapsed_seconds) : std::string("0")) << ',' << (r.diverged ? 1 : 0) << '\n';
  }
}

namespace {

RunResult train_logged(const TrainConfig& c, const data::Split& split) {
  c.validate();
  nn::Network net = build_network(c, split.train);
  optim::TrainOptions opts;
  opts.epochs = c.epochs;
  opts.batch_size = c.batch_size;
  opts.seed = c.seed;
  opts.optimizer = make_optimizer(c);
  const optim::Oracle oracle = parse_oracle(c.oracle, c.tau_theta);

  std::ofstream jsonl;
  if (!c.out.empty()) {
    const std::filesystem::path p(c.out);
    if (p.has_parent_path()) {
      std::error_code ec;
      std::filesystem::create_directories(p.parent_path(), ec);
    }
    jsonl.open(p);
    if (!jsonl) throw IoError("cannot write log " + c.out);
    nlohmann::json header = {{"record", "header"},
                             {"version", kVersion},
                             {"config", to_json(c)},
                             {"command", to_command_line(c)},
                             {"network", net.describe()},
                             {"parameters", net.num_parameters()},
                             {"train_samples", split.train.size()},
                             {"val_samples", split.validation.size()}};
    jsonl << header.dump() << '\n' << std::flush;
  }

  RunResult result;
  result.log = optim::train(net, split.train, split.validation, opts, oracle, [&](const optim::EpochRecord& r) {
    if (jsonl.is_open()) jsonl << epoch_record(r).dump() << '\n' << std::flush;
  });
  result.exit_code = result.log.diverged ? 2 : 0;

  if (jsonl.is_open()) {
    jsonl << nlohmann::json{{"record", "summary"},
                            {"status", result.log.diverged ? "diverged" : "completed"},
                            {"epochs_recorded", result.log.records.size()},
                            {"final_loss", number_or_null(result.log.final_loss())}}
                 .dump()
          << '\n';
    if (!jsonl) throw IoError("failed writing log " + c.out);
    std::ofstream csv(csv_path_for(c.out));
    if (!csv) throw IoError("cannot write " + csv_path_for(c.out).string());
    write_csv(csv, result.log, c.wall_time);
    if (!csv) throw IoError("failed writing " + csv_path_for(c.out).string());
  }
  return result;
}

}  // namespace

RunResult run(const TrainConfig& c, const data::Split& split) {
  const int saved_threads = kernels::num_threads();
  kernels::set_num_threads(static_cast<int>(c.threads));
  try {
    RunResult r = train_logged(c, split);
    kernels::set_num_threads(saved_threads);
    return r;
  } catch (...) {
    kernels::set_num_threads(saved_threads);
    throw;
  }
}

RunResult run(const TrainConfig& c) {
  c.validate();
  return run(c, load_data(c));
}

SweepTable stability_sweep(const TrainConfig& base, const data::Split& split, const std::vector<double>& taus,
                           const std::vector<std::string>& oracles, std::size_t workers) {
  if (taus.empty() || oracles.empty()) throw ConfigError("sweep needs at least one tau and one oracle");
  SweepTable table{oracles, taus, {}};
  for (const std::string& o : oracles) {
    for (double t : taus) table.cells.push_back(SweepCell{o, t, std::nullopt, 0.0, {}});
  }
  // Configuration errors are reported before any cell runs.
  for (SweepCell& cell : table.cells) {
    TrainConfig c = base;
    c.oracle = cell.oracle;
    c.tau = cell.tau;
    c.out.clear();
    c.validate();
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < table.cells.size(); i = next++) {
      SweepCell& cell = table.cells[i];
      TrainConfig c = base;
      c.oracle = cell.oracle;
      c.tau = cell.tau;
      c.out.clear();
      try {
        const RunResult r = train_logged(c, split);
        cell.initial_loss = r.log.initial_loss();
        if (!r.log.diverged) cell.final_loss = r.log.final_loss();
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, table.cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();
  return table;
}

void write_sweep_csv(std::ostream& os, const SweepTable& table) {
  os << "method";
  for (double t : table.taus) os << ",tau=" << fmt(t);
  os << '\n';
  for (std::size_t o = 0; o < table.oracles.size(); ++o) {
    os << table.oracles[o];
    for (std::size_t t = 0; t < table.taus.size(); ++t) {
      const SweepCell& cell = table.at(o, t);
      os << ',' << (cell.final_loss ? fmt(*cell.final_loss) : std::string("DIVERGED"));
    }
    os << '\n';
  }
}

}  // namespace proxprop::run
