#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "mpq/dataset.hpp"

namespace mpq {

/// Two interleaved half circles: class 0 on the unit circle's upper half,
/// class 1 on the lower half of the circle centered at (1, 0.5). Gaussian
/// jitter with `noise_std` on both coordinates. Class 0 gets n/2 points.
Dataset gen_two_moons(std::size_t n, double noise_std, std::uint64_t seed);

/// Comma-separated reals with a trailing integer label column.
Dataset load_csv(const std::filesystem::path& path);
Dataset parse_csv(const std::string& text);
/// One row per sample: features then the integer label, 9 significant digits.
std::string to_csv(const Dataset& d);
void save_csv(const Dataset& d, const std::filesystem::path& path);

/// CIFAR-10 binary batch: 3073-byte records, label byte then 3x32x32 pixels.
Dataset load_cifar10_binary(const std::filesystem::path& path);
Dataset parse_cifar10_binary(const std::string& bytes);

struct SplitSpec {
  std::size_t calibration_size = 0;
  std::uint64_t seed = 0;
};

struct TrainCalibration {
  Dataset train;
  Dataset calibration;
};

/// Seeded shuffle, then the first calibration_size shuffled rows become the
/// calibration set and the rest the training set (each in shuffled order).
TrainCalibration split(const Dataset& d, const SplitSpec& spec);

struct ProtocolSplit {
  Dataset train;
  Dataset calibration;
  Dataset test;
};

/// Holds out a test set of `test_size`, then a calibration set of the same
/// size from the remainder; the rest is training data.
ProtocolSplit protocol_split(const Dataset& d, std::size_t test_size, std::uint64_t seed);

}  // namespace mpq
