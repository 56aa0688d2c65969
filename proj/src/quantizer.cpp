#include "mpq/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mpq/error.hpp"

namespace mpq {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(RoundingMode mode) {
  switch (mode) {
    case RoundingMode::Nearest: return "nearest";
    case RoundingMode::Up: return "up";
    case RoundingMode::Down: return "down";
  }
  return "unknown";
}

RoundingMode rounding_mode_from_string(const std::string& name) {
  if (name == "nearest") return RoundingMode::Nearest;
  if (name == "up") return RoundingMode::Up;
  if (name == "down") return RoundingMode::Down;
  throw SchemaError("unknown rounding mode '" + name + "'");
}

std::string to_string(CalibMode mode) {
  return mode == CalibMode::Global ? "global" : "per_batch";
}

CalibMode calib_mode_from_string(const std::string& name) {
  if (name == "global") return CalibMode::Global;
  if (name == "per_batch") return CalibMode::PerBatch;
  throw SchemaError("unknown calibration mode '" + name + "'");
}

QuantGrid make_grid(double lo, double hi, int bits) {
  if (bits < kMinBits || bits > kMaxBits) {
    throw DomainError("quantization bits " + std::to_string(bits) + " outside [2,16]");
  }
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw DomainError("non-finite grid range");
  if (!(hi > lo)) {
    throw DegenerateRangeError("degenerate quantization range [" + std::to_string(lo) + ", " +
                               std::to_string(hi) + "]");
  }
  QuantGrid g;
  g.lo = lo;
  g.hi = hi;
  g.bits = bits;
  g.scale = (hi - lo) / static_cast<double>((1u << bits) - 1u);
  if (!(g.scale > 0.0)) throw DegenerateRangeError("quantization range too narrow");
  return g;
}

double quantize_value(double x, const QuantGrid& g, RoundingMode mode) {
  const double c = std::clamp(x, g.lo, g.hi);
  const std::uint32_t top = g.max_code();
  const double u = std::floor((c - g.lo) / g.scale);
  std::uint32_t q = u <= 0.0 ? 0u : (u >= top ? top : static_cast<std::uint32_t>(u));
  // Settle on the largest code whose dequantized value is <= c.
  while (q < top && g.value(q + 1) <= c) ++q;
  while (q > 0 && g.value(q) > c) --q;
  const double below = g.value(q);
  if (below == c) return c;
  const double above = g.value(q + 1);
  switch (mode) {
    case RoundingMode::Down: return below;
    case RoundingMode::Up: return above;
    case RoundingMode::Nearest: return (c - below < above - c) ? below : above;
  }
  return below;
}

FakeQuantStats fake_quant_inplace(std::span<double> values, const QuantGrid& grid,
                                  RoundingMode mode) {
  FakeQuantStats st;
  st.count = values.size();
  if (values.empty()) return st;
  st.min_error = std::numeric_limits<double>::infinity();
  st.max_error = -std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (double& v : values) {
    if (v < grid.lo || v > grid.hi) ++st.clamp_count;
    const double q = quantize_value(v, grid, mode);
    const double e = q - v;
    sum += e;
    st.min_error = std::min(st.min_error, e);
    st.max_error = std::max(st.max_error, e);
    v = q;
  }
  st.mean_error = sum / static_cast<double>(values.size());
  return st;
}

std::pair<Tensor, FakeQuantStats> fake_quant(const Tensor& t, const QuantGrid& grid,
                                             RoundingMode mode) {
  Tensor out = t;
  const FakeQuantStats st = fake_quant_inplace(out.data(), grid, mode);
  return {std::move(out), st};
}

RoundingMoments rounding_stats(RoundingMode mode, double delta) {
  if (!(delta > 0.0)) throw DomainError("rounding_stats needs delta > 0");
  const double var = delta * delta / 12.0;
  switch (mode) {
    case RoundingMode::Down: return {-delta / 2.0, var};
    case RoundingMode::Up: return {delta / 2.0, var};
    case RoundingMode::Nearest: return {0.0, var};
  }
  return {};
}

Range value_range(std::span<const double> values) {
  if (values.empty()) throw DomainError("range of an empty tensor");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  return {*mn, *mx};
}

CalibrationStats calibrate(const Network& model, const Dataset& data, CalibMode mode) {
  if (data.size() == 0) throw DomainError("calibration dataset is empty");
  CalibrationStats st;
  st.mode = mode;
  const ForwardResult fp = model.forward(data);
  const auto params = model.parameters();
  for (const PointInfo& p : model.points()) {
    st.inputs.push_back(value_range(fp.trace.inputs[p.index].data()));
    if (p.weight_param) {
      st.weights.emplace_back(value_range(params[*p.weight_param]->data()));
    } else {
      st.weights.emplace_back(std::nullopt);
    }
  }
  return st;
}

const LayerQuantConfig* QuantScheme::find(std::size_t layer) const {
  for (const auto& c : layers) {
    if (c.layer == layer) return &c;
  }
  return nullptr;
}

std::optional<QuantGrid> weight_grid(const Network& model, std::size_t point, int bits) {
  const PointInfo& info = model.points().at(point);
  if (!info.weight_param) return std::nullopt;
  const Range r = value_range(model.parameters()[*info.weight_param]->data());
  if (r.degenerate()) return std::nullopt;
  return make_grid(r.lo, r.hi, bits);
}

QuantizedEvaluator::QuantizedEvaluator(const Network& model, QuantScheme scheme)
    : model_(model), scheme_(std::move(scheme)), by_point_(model.num_points(), -1) {
  auto params = model_.mutable_parameters();
  for (std::size_t i = 0; i < scheme_.layers.size(); ++i) {
    const LayerQuantConfig& c = scheme_.layers[i];
    if (c.layer >= model_.num_points()) {
      throw DomainError("scheme references layer " + std::to_string(c.layer) + " but model has " +
                        std::to_string(model_.num_points()) + " layers");
    }
    if (by_point_[c.layer] >= 0) {
      throw DomainError("scheme configures layer " + std::to_string(c.layer) + " twice");
    }
    if (c.bits < kMinBits || c.bits > kMaxBits) {
      throw DomainError("layer " + std::to_string(c.layer) + " has invalid bits");
    }
    if (scheme_.calib_mode == CalibMode::Global) {
      // Re-derive to validate the stored range.
      make_grid(c.input_grid.lo, c.input_grid.hi, c.input_grid.bits);
    }
    by_point_[c.layer] = static_cast<std::ptrdiff_t>(i);
    if (c.weight_bits) {
      const PointInfo& info = model_.points()[c.layer];
      if (const auto g = weight_grid(model, c.layer, *c.weight_bits)) {
        fake_quant_inplace(params[*info.weight_param]->data(), *g, RoundingMode::Nearest);
      }
    }
  }
}

InjectionPlan QuantizedEvaluator::plan(std::optional<std::size_t> shift_point,
                                       double shift) const {
  InjectionPlan p;
  p.target = shift_point;
  p.offset = shift;
  p.transform = [this](std::size_t point, Tensor& x) {
    if (by_point_[point] < 0) return;
    const LayerQuantConfig* c = &scheme_.layers[static_cast<std::size_t>(by_point_[point])];
    QuantGrid grid = c->input_grid;
    if (scheme_.calib_mode == CalibMode::PerBatch) {
      const Range r = value_range(x.data());
      if (r.degenerate()) return;
      grid = make_grid(r.lo, r.hi, c->bits);
    }
    last_stats_.emplace_back(point, fake_quant_inplace(x.data(), grid, c->input_mode));
  };
  return p;
}

ForwardResult QuantizedEvaluator::forward(const Dataset& batch,
                                          std::optional<std::size_t> shift_point,
                                          double shift) const {
  last_stats_.clear();
  const InjectionPlan p = plan(shift_point, shift);
  return model_.forward(batch, &p);
}

GradientSet QuantizedEvaluator::backward(const Dataset& batch) const {
  last_stats_.clear();
  const InjectionPlan p = plan();
  return model_.backward(batch, &p);
}

QuantizedEvaluator apply_scheme(const Network& model, const QuantScheme& scheme) {
  return QuantizedEvaluator(model, scheme);
}

ordered_json layer_config_to_json(const LayerQuantConfig& c) {
  ordered_json j;
  j["layer"] = c.layer;
  j["bits"] = c.bits;
  j["input_mode"] = to_string(c.input_mode);
  j["input_lo"] = c.input_grid.lo;
  j["input_hi"] = c.input_grid.hi;
  j["delta"] = c.delta;
  j["weight_bits"] = c.weight_bits ? json(*c.weight_bits) : json(nullptr);
  return j;
}

namespace {

double get_real(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number()) {
    throw SchemaError(std::string("scheme field '") + key + "' must be a number");
  }
  return j[key].get<double>();
}

}  // namespace

LayerQuantConfig layer_config_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("scheme layer record must be an object");
  LayerQuantConfig c;
  if (!j.contains("layer") || !j["layer"].is_number_integer() ||
      j["layer"].get<std::int64_t>() < 0) {
    throw SchemaError("scheme field 'layer' must be a nonnegative integer");
  }
  c.layer = j["layer"].get<std::size_t>();
  if (!j.contains("bits") || !j["bits"].is_number_integer()) {
    throw SchemaError("scheme field 'bits' must be an integer");
  }
  c.bits = j["bits"].get<int>();
  if (!j.contains("input_mode") || !j["input_mode"].is_string()) {
    throw SchemaError("scheme field 'input_mode' must be a string");
  }
  c.input_mode = rounding_mode_from_string(j["input_mode"].get<std::string>());
  c.input_grid = make_grid(get_real(j, "input_lo"), get_real(j, "input_hi"), c.bits);
  c.delta = c.input_grid.scale;
  if (j.contains("weight_bits") && !j["weight_bits"].is_null()) {
    if (!j["weight_bits"].is_number_integer()) {
      throw SchemaError("scheme field 'weight_bits' must be an integer or null");
    }
    c.weight_bits = j["weight_bits"].get<int>();
  }
  return c;
}

ordered_json quant_scheme_to_json(const QuantScheme& s) {
  ordered_json j;
  j["version"] = 1;
  j["calib_mode"] = to_string(s.calib_mode);
  ordered_json layers = ordered_json::array();
  for (const auto& c : s.layers) layers.push_back(layer_config_to_json(c));
  j["layers"] = std::move(layers);
  return j;
}

QuantScheme quant_scheme_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("scheme document must be an object");
  QuantScheme s;
  if (j.contains("calib_mode")) {
    s.calib_mode = calib_mode_from_string(j["calib_mode"].get<std::string>());
  }
  if (!j.contains("layers") || !j["layers"].is_array()) {
    throw SchemaError("scheme document needs a 'layers' array");
  }
  for (const json& l : j["layers"]) s.layers.push_back(layer_config_from_json(l));
  return s;
}

}  // namespace mpq
