#include "mpq/layout.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mpq/error.hpp"
#include "mpq/model_io.hpp"

namespace mpq {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(DecisionReason r) {
  switch (r) {
    case DecisionReason::Quantized: return "quantized";
    case DecisionReason::DeltaTooLarge: return "delta_too_large";
    case DecisionReason::SecantBelowMu: return "secant_below_mu";
    case DecisionReason::ChoiceZero: return "choice_zero";
    case DecisionReason::DegenerateRange: return "degenerate_range";
    case DecisionReason::DeltaBelowErrorMin: return "delta_below_error_min";
  }
  return "unknown";
}

DirectionChoice choose_direction(double secant_plus, double secant_minus, double delta) {
  DirectionChoice c;
  c.choice_literal = std::max(std::max(secant_minus, 0.0), std::min(secant_plus, 0.0));
  c.gain_down = delta * secant_minus;
  c.gain_up = -delta * secant_plus;
  if (c.gain_down <= 0.0 && c.gain_up <= 0.0) return c;
  if (c.gain_down >= c.gain_up) {
    c.mode = RoundingMode::Down;
    c.choice = secant_minus;
  } else {
    c.mode = RoundingMode::Up;
    c.choice = secant_plus;
  }
  return c;
}

namespace {

void validate(const AlgorithmParams& p) {
  if (p.levels.empty()) throw DomainError("no quantization levels given");
  for (int b : p.levels) {
    if (b < kMinBits || b > kMaxBits) {
      throw DomainError("quantization level " + std::to_string(b) + " outside [2,16] bits");
    }
  }
  if (!(p.error_min >= 0.0)) throw DomainError("error_min must be >= 0");
  if (!(p.error_max > 0.0)) throw DomainError("error_max must be > 0");
  if (p.error_min > p.error_max) throw DomainError("error_min exceeds error_max");
  if (!(p.mu >= 0.0)) throw DomainError("mu must be >= 0");
  if (p.probe_delta && !(*p.probe_delta > 0.0)) throw DomainError("probe delta must be > 0");
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

LayoutResult run_layout(const Network& model, const Dataset& calibration,
                        const AlgorithmParams& params, const Dataset* test) {
  validate(params);
  if (calibration.size() == 0) throw DomainError("calibration dataset is empty");

  AlgorithmParams p = params;
  std::sort(p.levels.begin(), p.levels.end());
  p.levels.erase(std::unique(p.levels.begin(), p.levels.end()), p.levels.end());

  const CalibrationStats stats = calibrate(model, calibration, p.calib_mode);
  const std::size_t n = model.num_points();

  QuantScheme quant;
  quant.calib_mode = p.calib_mode;
  std::vector<bool> open(n, true);
  std::vector<LayerDecision> final(n);
  std::vector<LayerDecision> attempts;

  const double fp_calib = baseline_loss(QuantizedEvaluator(model, quant), calibration, p.eval_batch);
  double current = fp_calib;

  const auto commit = [&](LayerDecision& d, LayerQuantConfig cfg) {
    quant.layers.push_back(cfg);
    const double after = baseline_loss(QuantizedEvaluator(model, quant), calibration, p.eval_batch);
    d.realized_change = after - current;
    current = after;
    d.bits = cfg.bits;
    d.input_mode = cfg.input_mode;
  };

  for (int bits : p.levels) {
    for (std::size_t layer = 0; layer < n; ++layer) {
      if (!open[layer]) continue;
      LayerDecision d;
      d.layer = layer;
      d.output_index = n - layer;
      d.level_tried = bits;
      const Range r = stats.inputs[layer];
      if (r.degenerate()) {
        d.reason = DecisionReason::DegenerateRange;
        open[layer] = false;
      } else {
        const QuantGrid grid = make_grid(r.lo, r.hi, bits);
        d.delta = grid.scale;
        LayerQuantConfig cfg;
        cfg.layer = layer;
        cfg.bits = bits;
        cfg.input_grid = grid;
        cfg.delta = grid.scale;
        if (model.points()[layer].weight_param) cfg.weight_bits = bits;

        if (d.delta > p.error_max) {
          d.reason = DecisionReason::DeltaTooLarge;
        } else if (d.delta <= p.error_min) {
          cfg.input_mode = RoundingMode::Nearest;
          d.reason = DecisionReason::DeltaBelowErrorMin;
          commit(d, cfg);
          open[layer] = false;
        } else {
          const QuantizedEvaluator so_far(model, quant);
          d.probe_delta = p.probe_delta.value_or(d.delta);
          const SecantProbe probe = secant_pair(so_far, calibration, layer, d.probe_delta, p.eval_batch);
          d.f_base = probe.f_base;
          d.f_plus = probe.f_plus;
          d.f_minus = probe.f_minus;
          d.secant_plus = probe.secant_plus;
          d.secant_minus = probe.secant_minus;
          open[layer] = false;
          const DirectionChoice dc = choose_direction(probe.secant_plus, probe.secant_minus, d.probe_delta);
          d.choice_literal = dc.choice_literal;
          if (std::max(std::abs(probe.secant_plus), std::abs(probe.secant_minus)) < p.mu) {
            d.reason = DecisionReason::SecantBelowMu;
          } else if (!dc.mode) {
            d.reason = DecisionReason::ChoiceZero;
          } else {
            d.choice = dc.choice;
            d.predicted_gain = std::max(dc.gain_down, dc.gain_up);
            cfg.input_mode = *dc.mode;
            d.reason = DecisionReason::Quantized;
            commit(d, cfg);
          }
        }
      }
      attempts.push_back(d);
      final[layer] = d;
    }
  }

  LayoutScheme scheme;
  scheme.decisions = std::move(final);
  scheme.params = p;
  scheme.model_hash = model_hash(model);
  scheme.dataset_hash = dataset_hash(calibration);
  scheme.quant = quant;

  QuantizedEvaluator eval(model, quant);
  LayoutLosses losses;
  losses.fp_calib = fp_calib;
  losses.q_calib = baseline_loss(eval, calibration, p.eval_batch);
  if (test) {
    losses.fp_test = baseline_loss(QuantizedEvaluator(model, {}), *test, p.eval_batch);
    losses.q_test = baseline_loss(eval, *test, p.eval_batch);
  }
  return LayoutResult{std::move(scheme), std::move(eval), std::move(attempts), losses};
}

ordered_json params_to_json(const AlgorithmParams& p) {
  ordered_json j;
  j["levels"] = p.levels;
  j["error_min"] = p.error_min;
  j["error_max"] = p.error_max;
  j["mu"] = p.mu;
  j["sigma"] = p.sigma ? json(*p.sigma) : json(nullptr);
  j["probe_delta"] = p.probe_delta ? json(*p.probe_delta) : json(nullptr);
  j["calib_mode"] = to_string(p.calib_mode);
  j["eval_batch"] = p.eval_batch;
  return j;
}

ordered_json decision_to_json(const LayerDecision& d) {
  ordered_json j;
  j["layer"] = d.layer;
  j["output_index"] = d.output_index;
  j["level_tried"] = d.level_tried;
  j["bits"] = d.bits ? json(*d.bits) : json(nullptr);
  j["input_mode"] = d.input_mode ? json(to_string(*d.input_mode)) : json(nullptr);
  j["reason"] = to_string(d.reason);
  j["delta"] = d.delta;
  j["probe_delta"] = d.probe_delta;
  j["f_base"] = d.f_base;
  j["f_plus"] = d.f_plus;
  j["f_minus"] = d.f_minus;
  j["secant_plus"] = d.secant_plus;
  j["secant_minus"] = d.secant_minus;
  j["choice"] = d.choice;
  j["choice_literal"] = d.choice_literal;
  j["predicted_gain"] = d.predicted_gain;
  j["realized_change"] = d.realized_change ? json(*d.realized_change) : json(nullptr);
  return j;
}

ordered_json output_index_map(const Network& model) {
  ordered_json arr = ordered_json::array();
  const std::size_t n = model.num_points();
  for (const PointInfo& p : model.points()) {
    arr.push_back(ordered_json{{"layer", p.index}, {"output_index", n - p.index}, {"kind", p.kind}});
  }
  return arr;
}

ordered_json layout_scheme_to_json(const LayoutScheme& s) {
  ordered_json j = quant_scheme_to_json(s.quant);
  ordered_json out;
  out["version"] = j["version"];
  out["model_hash"] = hex64(s.model_hash);
  out["dataset_hash"] = hex64(s.dataset_hash);
  out["params"] = params_to_json(s.params);
  out["calib_mode"] = j["calib_mode"];
  out["layers"] = j["layers"];
  return out;
}

ordered_json layout_report_to_json(const LayoutResult& r, const Network& model) {
  ordered_json j;
  j["params"] = params_to_json(r.scheme.params);
  j["model_hash"] = hex64(r.scheme.model_hash);
  j["dataset_hash"] = hex64(r.scheme.dataset_hash);
  ordered_json decisions = ordered_json::array();
  for (const auto& d : r.scheme.decisions) decisions.push_back(decision_to_json(d));
  j["decisions"] = std::move(decisions);
  ordered_json attempts = ordered_json::array();
  for (const auto& d : r.attempts) attempts.push_back(decision_to_json(d));
  j["attempts"] = std::move(attempts);
  ordered_json losses;
  losses["fp_calib"] = r.losses.fp_calib;
  losses["q_calib"] = r.losses.q_calib;
  losses["fp_test"] = r.losses.fp_test ? json(*r.losses.fp_test) : json(nullptr);
  losses["q_test"] = r.losses.q_test ? json(*r.losses.q_test) : json(nullptr);
  j["losses"] = std::move(losses);
  j["output_index_map"] = output_index_map(model);
  return j;
}

}  // namespace mpq

namespace mpq {

QuantScheme make_uniform_scheme(const Network& model, const CalibrationStats& stats, int bits,
                                RoundingMode input_mode) {
  if (stats.inputs.size() != model.num_points()) {
    throw DomainError("calibration stats do not match the model");
  }
  QuantScheme s;
  s.calib_mode = stats.mode;
  for (const PointInfo& p : model.points()) {
    const Range r = stats.inputs[p.index];
    if (r.degenerate()) continue;
    LayerQuantConfig c;
    c.layer = p.index;
    c.bits = bits;
    c.input_grid = make_grid(r.lo, r.hi, bits);
    c.input_mode = input_mode;
    c.delta = c.input_grid.scale;
    if (p.weight_param) c.weight_bits = bits;
    s.layers.push_back(c);
  }
  return s;
}

}  // namespace mpq
