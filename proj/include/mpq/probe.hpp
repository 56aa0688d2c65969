#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "vendor_json.hpp"
#include "mpq/dataset.hpp"
#include "mpq/network.hpp"
#include "mpq/quantizer.hpp"

namespace mpq {

/// Dataset-mean loss under an evaluator, computed in chunks of `batch_size`
/// rows (0 = one chunk) and combined in row order.
double baseline_loss(const QuantizedEvaluator& eval, const Dataset& data,
                     std::size_t batch_size = 0);
double baseline_loss(const Network& model, const Dataset& data,
                     const QuantScheme* scheme = nullptr, std::size_t batch_size = 0);

/// Dataset-mean loss with offset*1 added to `point`'s input.
double shifted_loss(const QuantizedEvaluator& eval, const Dataset& data, std::size_t point,
                    double offset, std::size_t batch_size = 0);

/// Secant slopes of the dataset loss along a uniform shift of one input:
/// secant_plus = (f(+delta) - f) / delta, secant_minus = (f(-delta) - f) / -delta.
struct SecantProbe {
  std::size_t layer = 0;
  double delta = 0.0;
  double f_base = 0.0;
  double f_plus = 0.0;
  double f_minus = 0.0;
  double secant_plus = 0.0;
  double secant_minus = 0.0;
};

SecantProbe secant_pair(const QuantizedEvaluator& eval, const Dataset& data, std::size_t layer,
                        double delta, std::size_t batch_size = 0);
SecantProbe secant_pair(const Network& model, const Dataset& data, std::size_t layer,
                        double delta, const QuantScheme* scheme_so_far = nullptr);

/// Statistics over the k components of a point's dataset-mean input gradient g:
/// ep = mean(g), var_p = population variance of g, norm = ||g||_2.
struct LayerGradientStats {
  std::size_t layer = 0;
  std::size_t k = 0;
  double ep = 0.0;
  double var_p = 0.0;
  double norm = 0.0;
};

LayerGradientStats summarize_gradient(std::size_t layer, const Tensor& mean_gradient);

/// Dataset-mean gradient of the per-sample loss w.r.t. every point's input.
std::vector<Tensor> mean_input_gradients(const QuantizedEvaluator& eval, const Dataset& data,
                                         std::size_t batch_size = 0);
/// Dataset-mean gradient w.r.t. every parameter tensor.
std::vector<Tensor> mean_param_gradients(const QuantizedEvaluator& eval, const Dataset& data,
                                         std::size_t batch_size = 0);

std::vector<LayerGradientStats> gradient_stats(const QuantizedEvaluator& eval,
                                               const Dataset& data, std::size_t batch_size = 0);
std::vector<LayerGradientStats> gradient_stats(const Network& model, const Dataset& data,
                                               const QuantScheme* scheme = nullptr);

struct BoundReport {
  double ee = 0.0;
  double var_e = 0.0;
  double ep = 0.0;
  double var_p = 0.0;
  std::size_t k = 0;
  double bound = 0.0;
};

/// Chebyshev estimate of P(<grad, noise> >= 0):
///   VarE*VarP/(Ee*Ep)^2 + VarE/Ee^2 + VarP/Ep^2.
/// Values above 1 are returned unchanged (the estimate is then vacuous).
BoundReport chebyshev_bound(double ee, double var_e, double ep, double var_p, std::size_t k);

/// sum over quantized points of ||E dl/dh|| * |Ee(mode, delta)| * sqrt(k), with
/// full-precision gradients: a first-order ceiling on |f_quantized - f|.
double robustness_bound(const Network& model, const Dataset& data, const QuantScheme& scheme);

/// Loss response to input noise versus weight noise of the same magnitude.
/// For each weighted point: input_change = mean of |f(+delta*1) - f| and
/// |f(-delta*1) - f| at its input; weight_change = |f(w + r) - f| with r a
/// seeded +-delta sign pattern on that layer's weights.
struct NoiseDecomposition {
  struct Row {
    std::size_t layer = 0;
    double input_change = 0.0;
    double weight_change = 0.0;
  };
  double delta = 0.0;
  double f_base = 0.0;
  std::vector<Row> rows;
  double total_input_change = 0.0;
  double total_weight_change = 0.0;
  double ratio() const {
    return total_input_change > 0.0 ? total_weight_change / total_input_change : 0.0;
  }
};

NoiseDecomposition noise_decomposition(const Network& model, const Dataset& data, double delta,
                                       std::uint64_t seed);

nlohmann::ordered_json probe_record(const SecantProbe& probe, const LayerGradientStats& stats);

}  // namespace mpq
