#include "mpq/probe.hpp"

#include <cmath>
#include <numeric>

#include "mpq/error.hpp"
#include "mpq/rng.hpp"

namespace mpq {

namespace {

/// Row ranges [begin, end) covering the dataset in order.
std::vector<std::pair<std::size_t, std::size_t>> chunks(std::size_t m, std::size_t batch_size) {
  if (m == 0) throw DomainError("dataset is empty");
  const std::size_t b = batch_size == 0 ? m : batch_size;
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < m; i += b) out.emplace_back(i, std::min(m, i + b));
  return out;
}

Dataset rows(const Dataset& data, std::size_t begin, std::size_t end) {
  if (begin == 0 && end == data.size()) return data;
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return data.subset(idx);
}

double chunked_loss(const QuantizedEvaluator& eval, const Dataset& data,
                    std::optional<std::size_t> point, double offset, std::size_t batch_size) {
  const std::size_t m = data.size();
  double acc = 0.0;
  for (const auto& [b, e] : chunks(m, batch_size)) {
    const double l = eval.forward(rows(data, b, e), point, offset).loss;
    acc += l * static_cast<double>(e - b);
  }
  return acc / static_cast<double>(m);
}

}  // namespace

double baseline_loss(const QuantizedEvaluator& eval, const Dataset& data,
                     std::size_t batch_size) {
  return chunked_loss(eval, data, std::nullopt, 0.0, batch_size);
}

double baseline_loss(const Network& model, const Dataset& data, const QuantScheme* scheme,
                     std::size_t batch_size) {
  return baseline_loss(QuantizedEvaluator(model, scheme ? *scheme : QuantScheme{}), data,
                       batch_size);
}

double shifted_loss(const QuantizedEvaluator& eval, const Dataset& data, std::size_t point,
                    double offset, std::size_t batch_size) {
  if (point >= eval.model().num_points()) throw DomainError("probe layer out of range");
  return chunked_loss(eval, data, point, offset, batch_size);
}

SecantProbe secant_pair(const QuantizedEvaluator& eval, const Dataset& data, std::size_t layer,
                        double delta, std::size_t batch_size) {
  if (!(delta > 0.0)) throw DomainError("secant delta must be positive");
  if (layer >= eval.model().num_points()) throw DomainError("probe layer out of range");
  SecantProbe p;
  p.layer = layer;
  p.delta = delta;
  p.f_base = baseline_loss(eval, data, batch_size);
  p.f_plus = shifted_loss(eval, data, layer, delta, batch_size);
  p.f_minus = shifted_loss(eval, data, layer, -delta, batch_size);
  p.secant_plus = (p.f_plus - p.f_base) / delta;
  p.secant_minus = (p.f_minus - p.f_base) / -delta;
  return p;
}

SecantProbe secant_pair(const Network& model, const Dataset& data, std::size_t layer,
                        double delta, const QuantScheme* scheme_so_far) {
  return secant_pair(QuantizedEvaluator(model, scheme_so_far ? *scheme_so_far : QuantScheme{}),
                     data, layer, delta);
}

LayerGradientStats summarize_gradient(std::size_t layer, const Tensor& g) {
  LayerGradientStats s;
  s.layer = layer;
  s.k = g.numel();
  if (s.k == 0) throw DomainError("gradient of an empty input");
  double sum = 0.0, sq = 0.0;
  for (double v : g.data()) {
    sum += v;
    sq += v * v;
  }
  s.ep = sum / static_cast<double>(s.k);
  double var = 0.0;
  for (double v : g.data()) var += (v - s.ep) * (v - s.ep);
  s.var_p = var / static_cast<double>(s.k);
  s.norm = std::sqrt(sq);
  return s;
}

namespace {

template <typename Pick>
std::vector<Tensor> chunked_gradients(const QuantizedEvaluator& eval, const Dataset& data,
                                      std::size_t batch_size, Pick pick) {
  const std::size_t m = data.size();
  std::vector<Tensor> acc;
  for (const auto& [b, e] : chunks(m, batch_size)) {
    const GradientSet g = eval.backward(rows(data, b, e));
    std::vector<Tensor> part = pick(g);
    const double w = static_cast<double>(e - b) / static_cast<double>(m);
    if (acc.empty()) {
      acc = std::move(part);
      for (Tensor& t : acc) {
        for (double& v : t.data()) v *= w;
      }
      continue;
    }
    for (std::size_t i = 0; i < acc.size(); ++i) {
      auto a = acc[i].data();
      const auto p = part[i].data();
      for (std::size_t j = 0; j < a.size(); ++j) a[j] += w * p[j];
    }
  }
  return acc;
}

}  // namespace

std::vector<Tensor> mean_input_gradients(const QuantizedEvaluator& eval, const Dataset& data,
                                         std::size_t batch_size) {
  return chunked_gradients(eval, data, batch_size, [](const GradientSet& g) {
    std::vector<Tensor> out;
    for (std::size_t p = 0; p < g.inputs.size(); ++p) out.push_back(g.mean_input_gradient(p));
    return out;
  });
}

std::vector<Tensor> mean_param_gradients(const QuantizedEvaluator& eval, const Dataset& data,
                                         std::size_t batch_size) {
  return chunked_gradients(eval, data, batch_size,
                           [](const GradientSet& g) { return g.params; });
}

std::vector<LayerGradientStats> gradient_stats(const QuantizedEvaluator& eval,
                                               const Dataset& data, std::size_t batch_size) {
  const auto grads = mean_input_gradients(eval, data, batch_size);
  std::vector<LayerGradientStats> out;
  for (std::size_t p = 0; p < grads.size(); ++p) out.push_back(summarize_gradient(p, grads[p]));
  return out;
}

std::vector<LayerGradientStats> gradient_stats(const Network& model, const Dataset& data,
                                               const QuantScheme* scheme) {
  return gradient_stats(QuantizedEvaluator(model, scheme ? *scheme : QuantScheme{}), data);
}

BoundReport chebyshev_bound(double ee, double var_e, double ep, double var_p, std::size_t k) {
  if (ee == 0.0 || ep == 0.0) {
    throw DomainError("Chebyshev bound undefined when the mean noise or mean gradient is zero");
  }
  if (var_e < 0.0 || var_p < 0.0) throw DomainError("variances must be nonnegative");
  BoundReport r{ee, var_e, ep, var_p, k, 0.0};
  const double eep = ee * ep;
  r.bound = var_e * var_p / (eep * eep) + var_e / (ee * ee) + var_p / (ep * ep);
  return r;
}

double robustness_bound(const Network& model, const Dataset& data, const QuantScheme& scheme) {
  if (scheme.layers.empty()) return 0.0;
  const auto stats = gradient_stats(model, data);
  double total = 0.0;
  for (const LayerQuantConfig& c : scheme.layers) {
    if (c.layer >= stats.size()) throw DomainError("scheme layer out of range");
    const LayerGradientStats& s = stats[c.layer];
    const double ee = rounding_stats(c.input_mode, c.delta).mean;
    total += s.norm * std::abs(ee) * std::sqrt(static_cast<double>(s.k));
  }
  return total;
}

NoiseDecomposition noise_decomposition(const Network& model, const Dataset& data, double delta,
                                       std::uint64_t seed) {
  if (!(delta > 0.0)) throw DomainError("noise magnitude must be positive");
  NoiseDecomposition out;
  out.delta = delta;
  const QuantizedEvaluator fp(model, {});
  out.f_base = baseline_loss(fp, data);
  const Rng root(seed, 0x40153);
  for (const PointInfo& p : model.points()) {
    if (!p.weight_param) continue;
    NoiseDecomposition::Row row;
    row.layer = p.index;
    const double up = shifted_loss(fp, data, p.index, delta);
    const double down = shifted_loss(fp, data, p.index, -delta);
    row.input_change = 0.5 * (std::abs(up - out.f_base) + std::abs(down - out.f_base));

    Network noisy = model;
    Tensor& w = *noisy.mutable_parameters()[*p.weight_param];
    Rng rng = root.split(p.index);
    for (double& v : w.data()) v += (rng.next_u64() & 1u) ? delta : -delta;
    row.weight_change = std::abs(baseline_loss(noisy, data) - out.f_base);

    out.total_input_change += row.input_change;
    out.total_weight_change += row.weight_change;
    out.rows.push_back(row);
  }
  return out;
}

nlohmann::ordered_json probe_record(const SecantProbe& probe, const LayerGradientStats& stats) {
  nlohmann::ordered_json j;
  j["layer"] = probe.layer;
  j["delta"] = probe.delta;
  j["f_base"] = probe.f_base;
  j["f_plus"] = probe.f_plus;
  j["f_minus"] = probe.f_minus;
  j["secant_plus"] = probe.secant_plus;
  j["secant_minus"] = probe.secant_minus;
  j["Ep"] = stats.ep;
  j["VarP"] = stats.var_p;
  j["k"] = stats.k;
  j["grad_norm"] = stats.norm;
  return j;
}

}  // namespace mpq
