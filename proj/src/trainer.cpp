#include "mpq/trainer.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "mpq/error.hpp"
#include "mpq/rng.hpp"

namespace mpq {

Network init_weights(const Network& spec, const TrainConfig& config) {
  if (!(config.weight_init >= 0.0)) throw DomainError("weight_init scale must be >= 0");
  Network model = spec;
  const Rng root(config.seed, 0x1417);
  std::size_t stream = 0;
  for (const PointInfo& p : model.points()) {
    if (!p.weight_param) continue;
    auto params = model.mutable_parameters();
    Rng rng = root.split(stream++);
    for (double& v : params[*p.weight_param]->data()) {
      v = rng.uniform(-config.weight_init, config.weight_init);
    }
    for (double& v : params[*p.bias_param]->data()) v = 0.0;
  }
  return model;
}

namespace {

double rms(const std::vector<Tensor>& grads) {
  double sq = 0.0;
  std::size_t n = 0;
  for (const Tensor& g : grads) {
    for (double v : g.data()) sq += v * v;
    n += g.numel();
  }
  return n ? std::sqrt(sq / static_cast<double>(n)) : 0.0;
}

}  // namespace

double well_trainedness(const Network& model, const Dataset& data) {
  if (data.size() == 0) throw DomainError("dataset is empty");
  return rms(model.backward(data).params);
}

TrainResult train(const Network& model, const Dataset& data, const TrainConfig& config) {
  if (data.size() == 0) throw DomainError("training dataset is empty");
  if (!(config.learning_rate >= 0.0)) throw DomainError("learning rate must be >= 0");
  if (config.batch_size == 0) throw DomainError("batch size must be positive");

  TrainResult r{model, {}};
  r.report.initial_grad_rms = well_trainedness(model, data);
  r.report.initial_layer_stats = gradient_stats(model, data);
  const std::size_t m = data.size();
  std::vector<std::size_t> order(m);
  const Rng root(config.seed, 0x7a1);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = root.split(epoch);
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < m; b += config.batch_size) {
      const std::size_t e = std::min(m, b + config.batch_size);
      const Dataset batch = data.subset(std::span<const std::size_t>(order).subspan(b, e - b));
      const GradientSet g = r.model.backward(batch);
      if (!std::isfinite(g.loss)) {
        throw TrainingDivergedError(epoch, "training diverged at epoch " + std::to_string(epoch));
      }
      epoch_loss += g.loss * static_cast<double>(e - b);
      auto params = r.model.mutable_parameters();
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto w = params[i]->data();
        const auto gw = g.params[i].data();
        for (std::size_t j = 0; j < w.size(); ++j) w[j] -= config.learning_rate * gw[j];
      }
    }
    epoch_loss /= static_cast<double>(m);
    if (!std::isfinite(epoch_loss)) {
      throw TrainingDivergedError(epoch, "training diverged at epoch " + std::to_string(epoch));
    }
    r.report.loss_history.push_back(epoch_loss);
  }
  const GradientSet full = r.model.backward(data);
  if (!std::isfinite(full.loss)) {
    throw TrainingDivergedError(config.epochs, "training ended with a non-finite loss");
  }
  r.report.final_loss = full.loss;
  r.report.grad_rms = rms(full.params);
  r.report.final_layer_stats = gradient_stats(r.model, data);
  return r;
}

Network make_mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                 LossKind loss) {
  std::vector<Layer> layers;
  std::size_t prev = in;
  for (std::size_t h : hidden) {
    layers.push_back(dense(prev, h));
    layers.push_back(relu());
    prev = h;
  }
  layers.push_back(dense(prev, out));
  return Network({in}, std::move(layers), loss);
}

Network make_plain_stack(std::size_t in, std::size_t width, std::size_t blocks, std::size_t out,
                         LossKind loss) {
  std::vector<Layer> layers;
  layers.push_back(dense(in, width));
  for (std::size_t b = 0; b < blocks; ++b) {
    layers.push_back(relu());
    layers.push_back(dense(width, width));
  }
  layers.push_back(relu());
  layers.push_back(dense(width, out));
  return Network({in}, std::move(layers), loss);
}

Network make_residual_stack(std::size_t in, std::size_t width, std::size_t blocks,
                            std::size_t out, LossKind loss) {
  std::vector<Layer> layers;
  layers.push_back(dense(in, width));
  for (std::size_t b = 0; b < blocks; ++b) {
    std::vector<Layer> body;
    body.push_back(relu());
    body.push_back(dense(width, width));
    layers.push_back(residual(std::move(body)));
  }
  layers.push_back(relu());
  layers.push_back(dense(width, out));
  return Network({in}, std::move(layers), loss);
}

namespace {

std::size_t parse_count(const std::string& s, const std::string& spec) {
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || v == 0) throw DomainError("bad architecture spec '" + spec + "'");
  return v;
}

}  // namespace

Network make_architecture(const std::string& spec, std::size_t in, std::size_t out) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) throw DomainError("bad architecture spec '" + spec + "'");
  const std::string kind = spec.substr(0, colon);
  const std::string args = spec.substr(colon + 1);
  if (kind == "mlp") {
    if (args.empty() || args.back() == ',') throw DomainError("bad architecture spec '" + spec + "'");
    std::vector<std::size_t> hidden;
    std::stringstream ss(args);
    std::string item;
    while (std::getline(ss, item, ',')) hidden.push_back(parse_count(item, spec));
    return make_mlp(in, hidden, out);
  }
  if (kind == "plain" || kind == "residual") {
    const auto x = args.find('x');
    if (x == std::string::npos) throw DomainError("bad architecture spec '" + spec + "'");
    const std::size_t width = parse_count(args.substr(0, x), spec);
    const std::size_t blocks = parse_count(args.substr(x + 1), spec);
    return kind == "plain" ? make_plain_stack(in, width, blocks, out)
                           : make_residual_stack(in, width, blocks, out);
  }
  throw DomainError("unknown architecture '" + kind + "'");
}

nlohmann::ordered_json train_report_to_json(const TrainReport& r, const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["config"] = {{"learning_rate", c.learning_rate},
                 {"epochs", c.epochs},
                 {"batch_size", c.batch_size},
                 {"seed", c.seed},
                 {"weight_init", c.weight_init}};
  j["loss_history"] = r.loss_history;
  j["final_loss"] = r.final_loss;
  j["initial_grad_rms"] = r.initial_grad_rms;
  j["grad_rms"] = r.grad_rms;
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.final_layer_stats.size(); ++i) {
    const LayerGradientStats& a = r.initial_layer_stats[i];
    const LayerGradientStats& b = r.final_layer_stats[i];
    layers.push_back({{"layer", b.layer},
                      {"k", b.k},
                      {"Ep_before", a.ep},
                      {"Ep_after", b.ep},
                      {"grad_norm_before", a.norm},
                      {"grad_norm_after", b.norm}});
  }
  j["layer_gradients"] = std::move(layers);
  return j;
}

}  // namespace mpq
