#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vendor_json.hpp"
#include "mpq/dataset.hpp"
#include "mpq/network.hpp"
#include "mpq/probe.hpp"

namespace mpq {

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t epochs = 300;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double weight_init = 0.5;
};

struct TrainReport {
  std::vector<double> loss_history;  // mean mini-batch loss per epoch
  double final_loss = 0.0;           // full-batch loss after training
  double initial_grad_rms = 0.0;
  double grad_rms = 0.0;             // well_trainedness after training
  // per-point input-gradient statistics on the training set, before and after;
  // biases soak up part of the mean gradient as training converges
  std::vector<LayerGradientStats> initial_layer_stats;
  std::vector<LayerGradientStats> final_layer_stats;
};

/// Weights ~ U(-scale, scale), one RNG stream per tensor; biases zero.
Network init_weights(const Network& spec, const TrainConfig& config);

struct TrainResult {
  Network model;
  TrainReport report;
};

/// Plain mini-batch SGD with a seeded reshuffle every epoch. Throws
/// TrainingDivergedError if a loss or weight becomes non-finite.
TrainResult train(const Network& model, const Dataset& data, const TrainConfig& config);

/// RMS over all parameters of the full-dataset mean loss gradient.
double well_trainedness(const Network& model, const Dataset& data);

Network make_mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                 LossKind loss = LossKind::SoftmaxCrossEntropy);

/// Dense(in->w), then `blocks` x [ReLU, Dense(w->w)], ReLU, Dense(w->out).
Network make_plain_stack(std::size_t in, std::size_t width, std::size_t blocks, std::size_t out,
                         LossKind loss = LossKind::SoftmaxCrossEntropy);

/// Same layers as make_plain_stack, but each [ReLU, Dense] pair sits inside a
/// residual block with an identity shortcut.
Network make_residual_stack(std::size_t in, std::size_t width, std::size_t blocks,
                            std::size_t out, LossKind loss = LossKind::SoftmaxCrossEntropy);

/// "mlp:16,16" | "plain:16x4" | "residual:16x4"; weights left at zero.
Network make_architecture(const std::string& spec, std::size_t in, std::size_t out);

nlohmann::ordered_json train_report_to_json(const TrainReport& r, const TrainConfig& c);

}  // namespace mpq
