#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mpq/tensor.hpp"

namespace mpq {

/// Samples stacked along the leading axis of `inputs`. Classification sets
/// carry `labels`; regression sets carry `targets` shaped [m, outputs].
struct Dataset {
  Tensor inputs;
  std::vector<int> labels;
  Tensor targets;

  std::size_t size() const noexcept {
    return inputs.rank() == 0 ? 0 : inputs.shape()[0];
  }
  bool is_regression() const noexcept { return targets.numel() > 0; }
  Shape sample_shape() const;
  Dataset subset(std::span<const std::size_t> rows) const;
};

/// FNV-1a over shapes, raw input bytes, labels and targets.
std::uint64_t dataset_hash(const Dataset& d);

}  // namespace mpq
