#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mpq/data.hpp"
#include "mpq/network.hpp"
#include "mpq/rng.hpp"
#include "mpq/tensor.hpp"
#include "mpq/trainer.hpp"

namespace mpq::testing {

inline Dataset regression_batch(Tensor inputs, Tensor targets) {
  Dataset d;
  d.inputs = std::move(inputs);
  d.targets = std::move(targets);
  return d;
}

inline Dataset classification_batch(Tensor inputs, std::vector<int> labels) {
  Dataset d;
  d.inputs = std::move(inputs);
  d.labels = std::move(labels);
  return d;
}

/// Dense(1->1, w, b) with MSE loss.
inline Network scalar_model(double w, double b = 0.0) {
  return Network({1}, {dense(Tensor::matrix({{w}}), Tensor::vector({b}))},
                 LossKind::MeanSquaredError);
}

inline Dataset scalar_sample(double x, double y) {
  return regression_batch(Tensor({1, 1}, {x}), Tensor({1, 1}, {y}));
}

inline void fill_uniform(Tensor& t, Rng& rng, double scale) {
  for (double& v : t.data()) v = rng.uniform(-scale, scale);
}

inline void randomize(Network& net, Rng& rng, double scale) {
  for (Tensor* t : net.mutable_parameters()) fill_uniform(*t, rng, scale);
}

inline double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

/// ||a - b||_inf / (1 + ||b||_inf)
inline double relative_gap(std::span<const double> a, std::span<const double> b) {
  double num = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) num = std::max(num, std::abs(a[i] - b[i]));
  return num / (1.0 + max_abs(b));
}

/// Random model mixing dense, conv2d, relu, flatten and residual layers.
/// Roughly half the models take image input. Parameter count stays small.
struct RandomModel {
  Network net;
  Dataset batch;
};

inline Network random_architecture(Rng& rng) {
  const auto pick = [&](std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
  };
  const LossKind loss =
      rng.below(2) == 0 ? LossKind::SoftmaxCrossEntropy : LossKind::MeanSquaredError;
  const std::size_t out = pick(2, 4);
  std::vector<Layer> layers;
  Shape input;
  std::size_t flat = 0;
  if (rng.below(2) == 0) {
    const std::size_t c = pick(1, 2), h = pick(4, 6), f = pick(2, 3);
    input = {c, h, h};
    layers.push_back(conv(c, f, 3, 3, 1, 1));
    layers.push_back(relu());
    std::size_t side = h;
    if (rng.below(2) == 0) {
      layers.push_back(residual({conv(f, f, 3, 3, 1, 1), relu(), conv(f, f, 3, 3, 1, 1)}));
    } else if (h % 2 == 0) {
      layers.push_back(conv(f, f, 2, 2, 2, 0));
      side = h / 2;
    }
    layers.push_back(flatten());
    flat = f * side * side;
  } else {
    flat = pick(2, 6);
    input = {flat};
  }
  const std::size_t w = pick(4, 10);
  layers.push_back(dense(flat, w));
  layers.push_back(relu());
  const std::size_t blocks = pick(0, 2);
  for (std::size_t b = 0; b < blocks; ++b) {
    if (rng.below(2) == 0) {
      layers.push_back(residual({dense(w, w), relu(), dense(w, w)}));
    } else {
      layers.push_back(dense(w, w));
      layers.push_back(relu());
    }
  }
  layers.push_back(dense(w, out));
  return Network(input, std::move(layers), loss);
}

/// True when every ReLU input in the batch is at least `margin` away from 0.
inline bool kink_free(const Network& net, const Dataset& batch, double margin) {
  const ForwardResult r = net.forward(batch);
  for (const PointInfo& p : net.points()) {
    if (p.kind != "relu") continue;
    for (double v : r.trace.inputs[p.index].data()) {
      if (std::abs(v) < margin) return false;
    }
  }
  return true;
}

inline Dataset random_batch(const Network& net, std::size_t m, Rng& rng) {
  Shape shape{m};
  for (std::size_t d : net.input_shape()) shape.push_back(d);
  Tensor x(shape);
  fill_uniform(x, rng, 1.0);
  const std::size_t out = net.output_shape()[0];
  if (net.loss() == LossKind::MeanSquaredError) {
    Tensor y({m, out});
    fill_uniform(y, rng, 1.0);
    return regression_batch(std::move(x), std::move(y));
  }
  std::vector<int> labels(m);
  for (int& l : labels) l = static_cast<int>(rng.below(out));
  return classification_batch(std::move(x), std::move(labels));
}

/// Builds a random model and a batch whose samples avoid ReLU kinks by
/// `margin`, redrawing samples one by one until they qualify.
inline RandomModel random_kink_free_model(std::uint64_t seed, std::size_t m, double margin) {
  Rng rng(seed);
  Network net = random_architecture(rng);
  randomize(net, rng, 0.6);
  std::vector<Dataset> rows;
  while (rows.size() < m) {
    Dataset one = random_batch(net, 1, rng);
    if (kink_free(net, one, margin)) rows.push_back(std::move(one));
  }
  Shape shape{m};
  for (std::size_t d : net.input_shape()) shape.push_back(d);
  std::vector<double> xs, ys;
  std::vector<int> labels;
  for (const Dataset& r : rows) {
    xs.insert(xs.end(), r.inputs.values().begin(), r.inputs.values().end());
    ys.insert(ys.end(), r.targets.values().begin(), r.targets.values().end());
    labels.insert(labels.end(), r.labels.begin(), r.labels.end());
  }
  Dataset batch;
  batch.inputs = Tensor(shape, std::move(xs));
  if (!ys.empty()) batch.targets = Tensor({m, net.output_shape()[0]}, std::move(ys));
  batch.labels = std::move(labels);
  return {std::move(net), std::move(batch)};
}

/// Central differences of the loss w.r.t. every parameter element.
inline std::vector<Tensor> fd_param_gradients(const Network& net, const Dataset& batch,
                                              double h) {
  std::vector<Tensor> out;
  Network probe = net;
  const auto params = probe.mutable_parameters();
  for (Tensor* t : params) {
    Tensor g(t->shape());
    for (std::size_t i = 0; i < t->numel(); ++i) {
      const double keep = (*t)[i];
      (*t)[i] = keep + h;
      const double fp = probe.forward(batch).loss;
      (*t)[i] = keep - h;
      const double fm = probe.forward(batch).loss;
      (*t)[i] = keep;
      g[i] = (fp - fm) / (2.0 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

/// Central differences w.r.t. each component of one point's batch input.
inline Tensor fd_input_gradient(const Network& net, const Dataset& batch, std::size_t point,
                                std::size_t numel, const Shape& shape, double h) {
  Tensor g(shape);
  for (std::size_t i = 0; i < numel; ++i) {
    double offset = 0.0;
    InjectionPlan plan;
    plan.transform = [&](std::size_t p, Tensor& x) {
      if (p == point) x[i] += offset;
    };
    offset = h;
    const double fp = net.forward(batch, &plan).loss;
    offset = -h;
    const double fm = net.forward(batch, &plan).loss;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Two-moons protocol split used by the experiments: n samples, a quarter
/// each for test and calibration.
inline ProtocolSplit moons_split(std::size_t n, double noise, std::uint64_t seed) {
  return protocol_split(gen_two_moons(n, noise, seed), n / 4, seed);
}

struct TrainedMoons {
  Network model;
  ProtocolSplit data;
};

/// Full-batch gradient descent run long enough that the gradient RMS drops
/// well below a tenth of its initial value on two-moons.
inline TrainConfig converged_config(std::uint64_t seed, std::size_t train_size) {
  TrainConfig tc;
  tc.seed = seed;
  tc.learning_rate = 0.1;
  tc.batch_size = train_size;
  tc.epochs = 2000;
  return tc;
}

/// 2-16-16-2 ReLU MLP, trained with the default minibatch settings or with
/// converged_config.
inline TrainedMoons trained_moons(std::uint64_t seed, std::size_t n = 2000, double noise = 0.2,
                                  bool converged = false) {
  ProtocolSplit data = moons_split(n, noise, seed);
  TrainConfig tc;
  tc.seed = seed;
  if (converged) tc = converged_config(seed, data.train.size());
  const Network init = init_weights(make_mlp(2, {16, 16}, 2), tc);
  return {train(init, data.train, tc).model, std::move(data)};
}

}  // namespace mpq::testing
