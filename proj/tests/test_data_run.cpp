#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include <json.hpp>

#include "proxprop/data.hpp"
#include "proxprop/run.hpp"

using namespace proxprop;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("proxprop_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream os(p, std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<nlohmann::json> read_jsonl(const fs::path& p) {
  std::vector<nlohmann::json> out;
  std::ifstream is(p);
  for (std::string line; std::getline(is, line);)
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

run::TrainConfig blobs_config() {
  run::TrainConfig c;
  c.dataset = "blobs";
  c.samples = 120;
  c.classes = 3;
  c.arch = "2-8-3";
  c.epochs = 3;
  c.batch_size = 16;
  c.tau = 0.1;
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PROXPROP_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Cifar, TwoRecordFile) {
  TempDir dir;
  std::vector<unsigned char> bytes(2 * data::kCifarRecordBytes, 0);
  bytes[data::kCifarRecordBytes] = 7;
  write_bytes(dir / "b.bin", bytes);
  const data::Dataset d = data::load_cifar10_file(dir / "b.bin");
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.features(), 3072u);
  EXPECT_EQ(d.labels, (std::vector<int>{0, 7}));
  EXPECT_EQ(max_abs(d.x), 0.0);
  EXPECT_EQ(d.num_classes, 10u);
  ASSERT_TRUE(d.image_shape.has_value());
  EXPECT_EQ(*d.image_shape, (nn::FeatureShape{3, 32, 32}));
}

TEST(Cifar, RoundTripThreeRecords) {
  TempDir dir;
  std::vector<unsigned char> bytes(3 * data::kCifarRecordBytes);
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<unsigned char>((i * 131 + 7) % 256);
  for (std::size_t r = 0; r < 3; ++r) bytes[r * data::kCifarRecordBytes] = static_cast<unsigned char>(r + 2);
  write_bytes(dir / "data_batch_1.bin", bytes);
  const data::Dataset d = data::load_cifar10(dir.path(), 3);
  ASSERT_EQ(d.size(), 3u);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(d.labels[r], static_cast<int>(r + 2));
    for (std::size_t p = 0; p < 3072; ++p)
      ASSERT_NEAR(d.x(p, r), bytes[r * data::kCifarRecordBytes + 1 + p] / 255.0, 1e-12);
  }
  EXPECT_EQ(data::load_cifar10(dir.path(), 2).size(), 2u);
}

TEST(Cifar, FormatErrors) {
  TempDir dir;
  write_bytes(dir / "short.bin", std::vector<unsigned char>(data::kCifarRecordBytes + 5, 0));
  EXPECT_THROW(data::load_cifar10_file(dir / "short.bin"), FormatError);
  std::vector<unsigned char> bad(data::kCifarRecordBytes, 0);
  bad[0] = 10;
  write_bytes(dir / "label.bin", bad);
  EXPECT_THROW(data::load_cifar10_file(dir / "label.bin"), FormatError);
}

TEST(Csv, LoadsLabelsAndFeatures) {
  TempDir dir;
  std::ofstream(dir / "d.csv") << "0,1.5,2\n2,-1,0.25\n1,3,4\n";
  const data::Dataset d = data::load_csv(dir / "d.csv");
  ASSERT_EQ(d.size(), 3u);
  EXPECT_EQ(d.features(), 2u);
  EXPECT_EQ(d.num_classes, 3u);
  EXPECT_EQ(d.x, Tensor::from_rows({{1.5, -1, 3}, {2, 0.25, 4}}));
  std::ofstream(dir / "bad.csv") << "0,1,2\n1,2\n";
  EXPECT_THROW(data::load_csv(dir / "bad.csv"), FormatError);
  std::ofstream(dir / "neg.csv") << "-1,1\n";
  EXPECT_THROW(data::load_csv(dir / "neg.csv"), FormatError);
}

TEST(Synthetic, BlobsDeterministicAndBalanced) {
  const data::Dataset a = data::synth_blobs(90, 3, 4);
  const data::Dataset b = data::synth_blobs(90, 3, 4);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.labels, b.labels);
  std::vector<int> count(3, 0);
  for (int y : a.labels) ++count[static_cast<std::size_t>(y)];
  EXPECT_EQ(count, (std::vector<int>{30, 30, 30}));
  EXPECT_NE(data::synth_blobs(90, 3, 5).x, a.x);
}

TEST(Synthetic, NoiselessMoonsLieOnArcs) {
  const data::Dataset d = data::synth_moons(101, 0.0, 2);
  EXPECT_EQ(d.x, data::synth_moons(101, 0.0, 2).x);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double x = d.x(0, i), y = d.x(1, i);
    if (d.labels[i] == 0) {
      EXPECT_NEAR(x * x + y * y, 1.0, 1e-12);
      EXPECT_GE(y, -1e-12);
    } else {
      EXPECT_NEAR((1 - x) * (1 - x) + (0.5 - y) * (0.5 - y), 1.0, 1e-12);
      EXPECT_LE(y, 0.5 + 1e-12);
    }
  }
}

TEST(Synthetic, SplitTail) {
  const data::Dataset d = data::synth_blobs(100, 2, 1);
  const data::Split s = data::split_tail(d, 0.2);
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(s.validation.size(), 20u);
  EXPECT_EQ(s.validation.labels.back(), d.labels.back());
  EXPECT_THROW(data::split_tail(d, 1.0), ConfigError);
}

TEST(Architecture, MlpAndConvStrings) {
  const nn::Network mlp = run::parse_architecture("3072-500-120-500-10", nn::NonlinearKind::relu);
  EXPECT_EQ(mlp.num_stages(), 4u);
  EXPECT_EQ(mlp.input_features(), 3072u);
  EXPECT_EQ(mlp.num_classes(), 10u);
  EXPECT_EQ(mlp.theta(1).shape(), (Shape{120, 501}));

  const nn::Network conv = run::parse_architecture("[3x32x32]-conv8k5p2-relu-pool2-fc10", nn::NonlinearKind::relu);
  ASSERT_EQ(conv.num_stages(), 2u);
  EXPECT_EQ(conv.stage(0).linear.kind(), nn::LinearKind::conv2d);
  EXPECT_EQ(conv.stage(0).linear.output_shape(), (nn::FeatureShape{8, 32, 32}));
  EXPECT_EQ(conv.stage(0).activations.size(), 2u);
  EXPECT_EQ(conv.stage(1).linear.in_features(), 8u * 16u * 16u);
  EXPECT_EQ(conv.theta(0).shape(), (Shape{8, 3 * 25 + 1}));
  const nn::Network nobias = run::parse_architecture("[1x6x6]-conv2k3s1-tanh-fc3", nn::NonlinearKind::relu, false);
  EXPECT_FALSE(nobias.stage(0).linear.has_bias());
  EXPECT_EQ(nobias.stage(0).linear.output_shape(), (nn::FeatureShape{2, 4, 4}));
}

TEST(Architecture, Errors) {
  for (const char* bad : {"", "10", "3-0-2", "a-b", "[3x32x32]", "[3x32x32]-relu-fc10", "[3x32]-fc10",
                          "[3x32x32]-conv8k5-fc10-relu", "[3x4x4]-conv2k9-fc2", "[1x2x2]-bogus-fc2"})
    EXPECT_THROW(run::parse_architecture(bad, nn::NonlinearKind::relu), ConfigError) << bad;
}

TEST(Oracle, Names) {
  EXPECT_TRUE(std::holds_alternative<optim::BackpropOracle>(run::parse_oracle("backprop", std::nullopt)));
  const auto exact = std::get<optim::ProxPropOracle>(run::parse_oracle("proxprop_exact", std::nullopt));
  EXPECT_EQ(exact.config.mode, prox::ProxMode::exact);
  EXPECT_DOUBLE_EQ(exact.config.tau_theta, 0.05);
  const auto cg = std::get<optim::ProxPropOracle>(run::parse_oracle("proxprop_cg3", std::nullopt));
  EXPECT_EQ(cg.config.cg_iterations, 3);
  EXPECT_DOUBLE_EQ(cg.config.tau_theta, 1.0);
  const auto tuned = std::get<optim::ProxPropOracle>(run::parse_oracle("proxprop_cg10", 0.5));
  EXPECT_EQ(tuned.config.cg_iterations, 10);
  EXPECT_DOUBLE_EQ(tuned.config.tau_theta, 0.5);
  EXPECT_THROW(run::parse_oracle("proxprop_cg0", std::nullopt), ConfigError);
  EXPECT_THROW(run::parse_oracle("sgd", std::nullopt), ConfigError);
}

TEST(Run, ZeroEpochsWritesHeaderAndInitialRecord) {
  TempDir dir;
  run::TrainConfig c = blobs_config();
  c.epochs = 0;
  c.out = (dir / "log.jsonl").string();
  const run::RunResult r = run::run(c);
  EXPECT_EQ(r.exit_code, 0);
  const auto lines = read_jsonl(dir / "log.jsonl");
  ASSERT_GE(lines.size(), 2u);
  EXPECT_EQ(lines[0].at("record"), "header");
  EXPECT_EQ(lines[0].at("version"), run::kVersion);
  EXPECT_EQ(lines[0].at("config").at("arch"), "2-8-3");
  EXPECT_EQ(lines[1].at("record"), "epoch");
  EXPECT_EQ(lines[1].at("epoch"), 0);
  EXPECT_EQ(read_file(dir / "log.csv").substr(0, 33), "epoch,loss,val_acc,seconds,diverg");
  std::istringstream csv(read_file(dir / "log.csv"));
  std::size_t rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  EXPECT_EQ(rows, 2u);
}

TEST(Run, RepeatedConfigGivesIdenticalCsv) {
  TempDir dir;
  run::TrainConfig c = blobs_config();
  c.oracle = "proxprop_cg3";
  c.optimizer = "nesterov";
  c.out = (dir / "a.jsonl").string();
  run::run(c);
  c.out = (dir / "b.jsonl").string();
  run::run(c);
  const std::string a = read_file(dir / "a.csv");
  EXPECT_EQ(a, read_file(dir / "b.csv"));
  std::istringstream csv(a);
  std::size_t rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  EXPECT_EQ(rows, c.epochs + 2);
}

TEST(Run, HeaderConfigReproducesTheRun) {
  TempDir dir;
  run::TrainConfig c = blobs_config();
  c.optimizer = "adam";
  c.seed = 3;
  c.out = (dir / "a.jsonl").string();
  const run::RunResult first = run::run(c);
  const nlohmann::json cfg = read_jsonl(dir / "a.jsonl").front().at("config");
  run::TrainConfig again;
  again.dataset = cfg.at("dataset");
  again.samples = cfg.at("samples");
  again.classes = cfg.at("classes");
  again.arch = cfg.at("arch");
  again.epochs = cfg.at("epochs");
  again.batch_size = cfg.at("batch_size");
  again.tau = cfg.at("tau");
  again.optimizer = cfg.at("optimizer");
  again.seed = cfg.at("seed");
  const run::RunResult second = run::run(again);
  ASSERT_EQ(first.log.records.size(), second.log.records.size());
  for (std::size_t e = 0; e < first.log.records.size(); ++e)
    EXPECT_EQ(first.log.records[e].train_loss, second.log.records[e].train_loss);
}

TEST(Run, DivergenceExitCodeAndFinalRecord) {
  TempDir dir;
  run::TrainConfig c = blobs_config();
  c.tau = 1e300;
  c.epochs = 5;
  c.out = (dir / "d.jsonl").string();
  const run::RunResult r = run::run(c);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_TRUE(r.log.records.back().diverged);
  const auto lines = read_jsonl(dir / "d.jsonl");
  bool seen_diverged = false;
  for (const auto& l : lines) {
    if (l.at("record") != "epoch") continue;
    EXPECT_FALSE(seen_diverged);
    seen_diverged = l.at("diverged").get<bool>();
  }
  EXPECT_TRUE(seen_diverged);
}

TEST(Run, IoAndConfigErrors) {
  run::TrainConfig c = blobs_config();
  c.out = "/dev/null/x.jsonl";
  EXPECT_THROW(run::run(c), run::IoError);
  run::TrainConfig cifar = blobs_config();
  cifar.dataset = "cifar10";
  cifar.data_dir = "/nonexistent_dir_for_proxprop";
  EXPECT_THROW(run::load_data(cifar), run::IoError);
  run::TrainConfig bad = blobs_config();
  bad.arch = "3-8-3";
  EXPECT_THROW(run::run(bad), ConfigError);
  bad = blobs_config();
  bad.tau = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = blobs_config();
  bad.dataset = "mnist";
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Sweep, SingleCellEqualsPlainRun) {
  const run::TrainConfig c = blobs_config();
  const data::Split split = run::load_data(c);
  const run::SweepTable t = run::stability_sweep(c, split, {c.tau}, {c.oracle});
  const run::RunResult plain = run::run(c, split);
  ASSERT_TRUE(t.at(0, 0).final_loss.has_value());
  EXPECT_EQ(*t.at(0, 0).final_loss, plain.log.final_loss());
}

TEST(Sweep, VanishingStepStaysAtInitialLoss) {
  const run::TrainConfig c = blobs_config();
  const data::Split split = run::load_data(c);
  const run::SweepTable t =
      run::stability_sweep(c, split, {1e-9}, {"backprop", "proxprop_cg3", "proxprop_exact"}, 2);
  for (const run::SweepCell& cell : t.cells) {
    ASSERT_TRUE(cell.final_loss.has_value()) << cell.oracle;
    EXPECT_NEAR(*cell.final_loss, cell.initial_loss, 1e-6 * cell.initial_loss);
  }
}

TEST(Sweep, WorkersDoNotChangeResults) {
  const run::TrainConfig c = blobs_config();
  const data::Split split = run::load_data(c);
  const std::vector<double> taus = {1.0, 0.1};
  const std::vector<std::string> oracles = {"backprop", "proxprop_cg3"};
  const run::SweepTable one = run::stability_sweep(c, split, taus, oracles, 1);
  const run::SweepTable four = run::stability_sweep(c, split, taus, oracles, 4);
  for (std::size_t i = 0; i < one.cells.size(); ++i) EXPECT_EQ(one.cells[i].final_loss, four.cells[i].final_loss);
}

TEST(Sweep, DivergedCellsAreMarked) {
  const run::TrainConfig c = blobs_config();
  const data::Split split = run::load_data(c);
  const run::SweepTable t = run::stability_sweep(c, split, {1e300, 0.1}, {"backprop"});
  EXPECT_FALSE(t.at(0, 0).final_loss.has_value());
  EXPECT_TRUE(t.at(0, 1).final_loss.has_value());
  std::ostringstream os;
  run::write_sweep_csv(os, t);
  const std::string s = os.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "method,tau=1e+300,tau=0.1");
  EXPECT_NE(s.find("backprop,DIVERGED,"), std::string::npos);
  EXPECT_THROW(run::stability_sweep(c, split, {}, {"backprop"}), ConfigError);
}

TEST(Cli, TrainExitCodesAndConfigFile) {
  TempDir dir;
  const std::string base = "train --dataset blobs --samples 60 --arch 2-4-3 --epochs 2 --batch-size 10 ";
  EXPECT_EQ(run_cli(base + "--out " + (dir / "a.jsonl").string()), 0);
  EXPECT_EQ(run_cli(base + "--tau 1e300 --out " + (dir / "d.jsonl").string()), 2);
  EXPECT_EQ(run_cli(base + "--oracle nope"), 1);
  EXPECT_EQ(run_cli(base + "--out /dev/null/x.jsonl"), 1);
  EXPECT_NE(run_cli("bogus-verb"), 0);

  // config file values apply; command-line flags override them
  std::ofstream(dir / "run.cfg") << "dataset=blobs\nsamples=60\narch=2-4-3\nepochs=7\nbatch_size=10\n";
  EXPECT_EQ(run_cli("train --config " + (dir / "run.cfg").string() + " --epochs 2 --out " +
                    (dir / "c.jsonl").string()),
            0);
  EXPECT_EQ(read_file(dir / "c.csv"), read_file(dir / "a.csv"));
}

TEST(Cli, VerifyAndProbe) {
  TempDir dir;
  EXPECT_EQ(run_cli("verify --suite cg_exact --out " + (dir / "v.jsonl").string()), 0);
  const auto v = read_jsonl(dir / "v.jsonl");
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].at("suite"), "cg_exact");
  EXPECT_EQ(run_cli("verify --suite nope"), 1);
  EXPECT_EQ(run_cli("probe-conditioning --dataset blobs --samples 50"), 0);
}
