#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vendor_json.hpp"
#include "mpq/dataset.hpp"
#include "mpq/network.hpp"
#include "mpq/probe.hpp"
#include "mpq/quantizer.hpp"

namespace mpq {

struct AlgorithmParams {
  std::vector<int> levels{8};  // bit widths, sorted ascending before the search
  double error_min = 0.0;
  double error_max = 0.1;
  double mu = 0.0;
  std::optional<double> sigma;        // recorded, not enforced
  std::optional<double> probe_delta;  // fixed secant step instead of each layer's delta
  CalibMode calib_mode = CalibMode::Global;
  std::size_t eval_batch = 0;  // rows per evaluation chunk, 0 = whole set
};

enum class DecisionReason {
  Quantized,
  DeltaTooLarge,
  SecantBelowMu,
  ChoiceZero,
  DegenerateRange,
  DeltaBelowErrorMin,
};

std::string to_string(DecisionReason r);

/// Outcome of the direction rule for one probed layer.
/// gain_down = f - f(-delta) and gain_up = f - f(+delta), both expressed via
/// the secants. The larger positive gain wins; ties go to Down.
struct DirectionChoice {
  std::optional<RoundingMode> mode;
  double choice = 0.0;          // selected secant, 0 if none
  double choice_literal = 0.0;  // max(max(secant-, 0), min(secant+, 0))
  double gain_down = 0.0;
  double gain_up = 0.0;
};

DirectionChoice choose_direction(double secant_plus, double secant_minus, double delta);

struct LayerDecision {
  std::size_t layer = 0;
  std::size_t output_index = 0;  // position counted from the output, 1-based
  std::optional<int> bits;      // set when the layer ends up quantized
  int level_tried = 0;
  std::optional<RoundingMode> input_mode;
  double delta = 0.0;
  double probe_delta = 0.0;
  double f_base = 0.0;
  double f_plus = 0.0;
  double f_minus = 0.0;
  double secant_plus = 0.0;
  double secant_minus = 0.0;
  double choice = 0.0;
  double choice_literal = 0.0;
  double predicted_gain = 0.0;
  std::optional<double> realized_change;  // loss after - loss before this decision
  DecisionReason reason = DecisionReason::DeltaTooLarge;
};

struct LayoutScheme {
  std::vector<LayerDecision> decisions;  // one per layer, final outcome
  AlgorithmParams params;
  std::uint64_t model_hash = 0;
  std::uint64_t dataset_hash = 0;
  QuantScheme quant;
};

struct LayoutLosses {
  double fp_calib = 0.0;
  double q_calib = 0.0;
  std::optional<double> fp_test;
  std::optional<double> q_test;
};

struct LayoutResult {
  LayoutScheme scheme;
  QuantizedEvaluator evaluator;
  std::vector<LayerDecision> attempts;  // every (level, layer) visit in order
  LayoutLosses losses;
};

/// Greedy mixed-precision search. For each level (ascending bits) and each
/// not-yet-decided layer: skip degenerate ranges, defer layers whose grid
/// step exceeds error_max to the next level, quantize to nearest when the
/// step is at most error_min, otherwise probe secants under the scheme built
/// so far and quantize the input with the rounding direction that lowers the
/// calibration loss (weights to nearest). Decided layers are frozen.
LayoutResult run_layout(const Network& model, const Dataset& calibration,
                        const AlgorithmParams& params, const Dataset* test = nullptr);

nlohmann::ordered_json params_to_json(const AlgorithmParams& p);
nlohmann::ordered_json decision_to_json(const LayerDecision& d);
/// Scheme file: provenance plus the per-layer quantization records.
nlohmann::ordered_json layout_scheme_to_json(const LayoutScheme& s);
nlohmann::ordered_json layout_report_to_json(const LayoutResult& r, const Network& model);
/// [{"layer": i, "output_index": n - i}, ...]
nlohmann::ordered_json output_index_map(const Network& model);

}  // namespace mpq

namespace mpq {

/// Every point with a nondegenerate calibration range quantized at `bits`
/// with the given input rounding (weights nearest).
QuantScheme make_uniform_scheme(const Network& model, const CalibrationStats& stats, int bits,
                                RoundingMode input_mode);

}  // namespace mpq
