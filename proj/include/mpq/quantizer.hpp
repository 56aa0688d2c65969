#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vendor_json.hpp"
#include "mpq/dataset.hpp"
#include "mpq/network.hpp"
#include "mpq/tensor.hpp"

namespace mpq {

enum class RoundingMode { Nearest, Up, Down };
enum class CalibMode { Global, PerBatch };

std::string to_string(RoundingMode mode);
RoundingMode rounding_mode_from_string(const std::string& name);
std::string to_string(CalibMode mode);
CalibMode calib_mode_from_string(const std::string& name);

constexpr int kMinBits = 2;
constexpr int kMaxBits = 16;

/// Uniform affine grid lo + Q*scale, Q in [0, 2^bits - 1]. The top code maps
/// to `hi` exactly so dequantized values never leave [lo, hi].
struct QuantGrid {
  double lo = 0.0;
  double hi = 1.0;
  int bits = 8;
  double scale = 1.0;

  std::uint32_t max_code() const noexcept { return (1u << bits) - 1u; }
  double value(std::uint32_t code) const noexcept {
    return code >= max_code() ? hi : lo + static_cast<double>(code) * scale;
  }
  /// Largest conversion error a directional rounding can introduce.
  double delta() const noexcept { return scale; }
};

/// Throws DegenerateRangeError when hi <= lo and DomainError for bits outside [2,16].
QuantGrid make_grid(double lo, double hi, int bits);

/// Error summary for one fake-quant pass; error = quantized - original.
struct FakeQuantStats {
  std::size_t count = 0;
  double mean_error = 0.0;
  double min_error = 0.0;
  double max_error = 0.0;
  std::size_t clamp_count = 0;
};

/// Clamp to [lo, hi], round to a code with `mode`, dequantize.
/// Down picks the largest grid value <= x, Up the smallest >= x, Nearest the
/// closer of the two (ties go up). All three are idempotent.
std::pair<Tensor, FakeQuantStats> fake_quant(const Tensor& t, const QuantGrid& grid,
                                             RoundingMode mode);
FakeQuantStats fake_quant_inplace(std::span<double> values, const QuantGrid& grid,
                                  RoundingMode mode);
double quantize_value(double x, const QuantGrid& grid, RoundingMode mode);

/// Moments of the rounding error if it were uniform on the mode's interval.
struct RoundingMoments {
  double mean = 0.0;
  double variance = 0.0;
};
RoundingMoments rounding_stats(RoundingMode mode, double delta);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool degenerate() const noexcept { return !(hi > lo); }
};

Range value_range(std::span<const double> values);

struct CalibrationStats {
  CalibMode mode = CalibMode::Global;
  std::vector<Range> inputs;                // per point, over the whole set
  std::vector<std::optional<Range>> weights;  // per point, weighted layers only
};

/// Full-precision pass over the whole calibration set recording the
/// min/max of every point's input, plus weight tensor ranges.
CalibrationStats calibrate(const Network& model, const Dataset& data, CalibMode mode);

/// Quantization of one point: input grid and rounding mode, and the level
/// used for the layer's weights (weights always round to nearest).
struct LayerQuantConfig {
  std::size_t layer = 0;
  int bits = 8;
  QuantGrid input_grid;
  RoundingMode input_mode = RoundingMode::Nearest;
  std::optional<int> weight_bits;
  double delta = 0.0;  // == input_grid.scale
};

struct QuantScheme {
  CalibMode calib_mode = CalibMode::Global;
  std::vector<LayerQuantConfig> layers;

  const LayerQuantConfig* find(std::size_t layer) const;
};

/// Evaluates a model under a scheme: weights of configured layers are
/// fake-quantized once at construction, configured inputs on every batch.
/// Under PerBatch calibration the input range is the current batch's
/// min/max at that point. Biases stay in full precision.
class QuantizedEvaluator {
 public:
  QuantizedEvaluator(const Network& model, QuantScheme scheme);

  const Network& model() const noexcept { return model_; }
  const QuantScheme& scheme() const noexcept { return scheme_; }

  /// Optional additive shift at one point, applied after quantization.
  ForwardResult forward(const Dataset& batch, std::optional<std::size_t> shift_point = {},
                        double shift = 0.0) const;
  GradientSet backward(const Dataset& batch) const;
  double loss(const Dataset& batch) const { return forward(batch).loss; }

  InjectionPlan plan(std::optional<std::size_t> shift_point = {}, double shift = 0.0) const;

  /// Input-side error stats from the most recent forward(), per configured point.
  const std::vector<std::pair<std::size_t, FakeQuantStats>>& last_input_stats() const {
    return last_stats_;
  }

 private:
  Network model_;
  QuantScheme scheme_;
  std::vector<std::ptrdiff_t> by_point_;  // index into scheme_.layers, -1 if none
  mutable std::vector<std::pair<std::size_t, FakeQuantStats>> last_stats_;
};

QuantizedEvaluator apply_scheme(const Network& model, const QuantScheme& scheme);

/// Weight grid of a point's weight tensor at `bits`; nullopt if the layer
/// has no weights or all weights are equal.
std::optional<QuantGrid> weight_grid(const Network& model, std::size_t point, int bits);

nlohmann::ordered_json layer_config_to_json(const LayerQuantConfig& c);
LayerQuantConfig layer_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json quant_scheme_to_json(const QuantScheme& s);
QuantScheme quant_scheme_from_json(const nlohmann::json& j);

}  // namespace mpq
