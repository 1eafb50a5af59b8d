#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "proxprop/layers.hpp"
#include "proxprop/tensor.hpp"

namespace proxprop::data {

/// Samples as columns of a features x N matrix with integer class labels.
struct Dataset {
  Tensor x;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  /// Per-sample geometry (C x H x W) when the features are images.
  std::optional<nn::FeatureShape> image_shape;

  std::size_t size() const { return labels.size(); }
  std::size_t features() const { return x.rows(); }
};

/// Columns [begin, end) of a dataset.
Dataset slice(const Dataset& d, std::size_t begin, std::size_t end);

struct Split {
  Dataset train;
  Dataset validation;
};

/// Deterministic split: the last `fraction` of samples becomes validation.
Split split_tail(const Dataset& d, double fraction);

constexpr std::size_t kCifarImageBytes = 3072;
constexpr std::size_t kCifarRecordBytes = kCifarImageBytes + 1;

/// Reads up to `limit` records from one CIFAR-10 binary batch file.
/// Each record is one label byte in [0, 9] followed by 3072 channel-major
/// pixel bytes; pixels are scaled to [0, 1]. Throws FormatError when the
/// file size is not a multiple of 3073 or a label exceeds 9.
Dataset load_cifar10_file(const std::filesystem::path& file, std::size_t limit = SIZE_MAX);

/// First `subset_size` records across data_batch_1.bin .. data_batch_5.bin.
Dataset load_cifar10(const std::filesystem::path& dir, std::size_t subset_size);

/// CSV with one sample per line: label followed by the feature values.
Dataset load_csv(const std::filesystem::path& file);

/// Gaussian blobs with centers evenly spaced on a circle; balanced classes.
Dataset synth_blobs(std::size_t n, std::size_t classes, std::uint64_t seed, double radius = 4.0,
                    double spread = 0.5);

/// Two interleaved half circles: class 0 on (cos t, sin t), class 1 on
/// (1 - cos t, 0.5 - sin t), t in [0, pi], plus Gaussian noise.
Dataset synth_moons(std::size_t n, double noise, std::uint64_t seed);

}  // namespace proxprop::data
