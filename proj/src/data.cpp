#include "proxprop/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

namespace proxprop::data {

Dataset slice(const Dataset& d, std::size_t begin, std::size_t end) {
  if (begin > end || end > d.size()) throw DimensionError("slice: range out of bounds");
  std::vector<std::size_t> cols(end - begin);
  for (std::size_t j = 0; j < cols.size(); ++j) cols[j] = begin + j;
  Dataset out;
  out.x = select_columns(d.x, cols);
  out.labels.assign(d.labels.begin() + static_cast<long>(begin), d.labels.begin() + static_cast<long>(end));
  out.num_classes = d.num_classes;
  out.image_shape = d.image_shape;
  return out;
}

Split split_tail(const Dataset& d, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("validation fraction must be in [0, 1)");
  const auto n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(d.size())));
  const std::size_t n_train = d.size() - n_val;
  return Split{slice(d, 0, n_train), slice(d, n_train, d.size())};
}

Dataset load_cifar10_file(const std::filesystem::path& file, std::size_t limit) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open CIFAR-10 file " + file.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw FormatError(file.string() + ": size " + std::to_string(bytes.size()) +
                      " is not a multiple of " + std::to_string(kCifarRecordBytes));
  }
  const std::size_t n = std::min(limit, bytes.size() / kCifarRecordBytes);
  Dataset d;
  d.x = Tensor::matrix(kCifarImageBytes, n);
  d.labels.resize(n);
  d.num_classes = 10;
  d.image_shape = nn::FeatureShape{3, 32, 32};
  for (std::size_t j = 0; j < n; ++j) {
    const unsigned char* record = bytes.data() + j * kCifarRecordBytes;
    if (record[0] > 9) {
      throw FormatError(file.string() + ": record " + std::to_string(j) + " has label " +
                        std::to_string(record[0]));
    }
    d.labels[j] = record[0];
    for (std::size_t p = 0; p < kCifarImageBytes; ++p) d.x(p, j) = record[1 + p] / 255.0;
  }
  return d;
}

Dataset load_cifar10(const std::filesystem::path& dir, std::size_t subset_size) {
  std::vector<Dataset> parts;
  std::size_t have = 0;
  for (int b = 1; b <= 5 && have < subset_size; ++b) {
    const auto file = dir / ("data_batch_" + std::to_string(b) + ".bin");
    if (!std::filesystem::exists(file)) break;
    parts.push_back(load_cifar10_file(file, subset_size - have));
    have += parts.back().size();
  }
  if (parts.empty()) throw std::runtime_error("no CIFAR-10 batch files (data_batch_1.bin ...) in " + dir.string());
  if (parts.size() == 1) return std::move(parts.front());

  Dataset d;
  d.x = Tensor::matrix(kCifarImageBytes, have);
  d.num_classes = 10;
  d.image_shape = nn::FeatureShape{3, 32, 32};
  std::size_t offset = 0;
  for (const Dataset& part : parts) {
    for (std::size_t p = 0; p < kCifarImageBytes; ++p)
      std::copy(part.x.row(p), part.x.row(p) + part.size(), d.x.row(p) + offset);
    d.labels.insert(d.labels.end(), part.labels.begin(), part.labels.end());
    offset += part.size();
  }
  return d;
}

Dataset load_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open CSV file " + file.string());
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    int label = 0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), label);
    if (ec != std::errc()) {
      if (rows.empty() && labels.empty()) continue;  // header
      throw FormatError(file.string() + ":" + std::to_string(line_no) + ": bad label '" + cell + "'");
    }
    if (label < 0) throw FormatError(file.string() + ":" + std::to_string(line_no) + ": negative label");
    std::vector<double> values;
    while (std::getline(ss, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError(file.string() + ":" + std::to_string(line_no) + ": bad value '" + cell + "'");
      }
    }
    if (!rows.empty() && values.size() != rows.front().size()) {
      throw FormatError(file.string() + ":" + std::to_string(line_no) + ": inconsistent column count");
    }
    rows.push_back(std::move(values));
    labels.push_back(label);
  }
  if (rows.empty() || rows.front().empty()) throw FormatError(file.string() + ": no samples");
  Dataset d;
  d.x = Tensor::matrix(rows.front().size(), rows.size());
  for (std::size_t j = 0; j < rows.size(); ++j)
    for (std::size_t i = 0; i < rows[j].size(); ++i) d.x(i, j) = rows[j][i];
  d.num_classes = static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
  d.labels = std::move(labels);
  return d;
}

Dataset synth_blobs(std::size_t n, std::size_t classes, std::uint64_t seed, double radius, double spread) {
  if (classes < 2 || n < classes) throw InputError("synth_blobs: need n >= classes >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, spread);
  Dataset d;
  d.x = Tensor::matrix(2, n);
  d.labels.resize(n);
  d.num_classes = classes;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t c = j % classes;
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
    d.x(0, j) = radius * std::cos(angle) + gauss(rng);
    d.x(1, j) = radius * std::sin(angle) + gauss(rng);
    d.labels[j] = static_cast<int>(c);
  }
  return d;
}

Dataset synth_moons(std::size_t n, double noise, std::uint64_t seed) {
  if (n < 2) throw InputError("synth_moons: need n >= 2");
  if (noise < 0.0) throw InputError("synth_moons: noise must be non-negative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t per_class[2] = {(n + 1) / 2, n / 2};
  Dataset d;
  d.x = Tensor::matrix(2, n);
  d.labels.resize(n);
  d.num_classes = 2;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t c = j % 2;
    const std::size_t k = j / 2;
    const std::size_t m = per_class[c];
    const double t = m > 1 ? std::numbers::pi * static_cast<double>(k) / static_cast<double>(m - 1) : 0.0;
    double px = c == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double py = c == 0 ? std::sin(t) : 0.5 - std::sin(t);
    if (noise > 0.0) {
      px += noise * gauss(rng);
      py += noise * gauss(rng);
    }
    d.x(0, j) = px;
    d.x(1, j) = py;
    d.labels[j] = static_cast<int>(c);
  }
  return d;
}

}  // namespace proxprop::data
