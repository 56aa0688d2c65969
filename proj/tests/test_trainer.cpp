#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "mpq/error.hpp"
#include "mpq/probe.hpp"
#include "mpq/trainer.hpp"

using namespace mpq;
using namespace mpq::testing;

namespace {

double accuracy(const Network& net, const Dataset& d) {
  const ForwardResult r = net.forward(d);
  const std::size_t o = net.output_shape()[0];
  std::size_t hits = 0;
  for (std::size_t s = 0; s < d.size(); ++s) {
    const auto row = r.output.data().subspan(s * o, o);
    hits += static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) == d.labels[s];
  }
  return static_cast<double>(hits) / static_cast<double>(d.size());
}

}  // namespace

TEST_SUITE("init_weights") {
  TEST_CASE("zero scale") {
    TrainConfig c;
    c.weight_init = 0.0;
    const Network net = init_weights(make_mlp(3, {4}, 2), c);
    for (double w : net.flat_weights()) CHECK(w == 0.0);
  }

  TEST_CASE("seeded and bias-free") {
    TrainConfig c;
    c.seed = 17;
    const Network a = init_weights(make_mlp(3, {4, 4}, 2), c);
    const Network b = init_weights(make_mlp(3, {4, 4}, 2), c);
    CHECK(a.flat_weights() == b.flat_weights());
    c.seed = 18;
    CHECK(init_weights(make_mlp(3, {4, 4}, 2), c).flat_weights() != a.flat_weights());
    for (const PointInfo& p : a.points()) {
      if (p.bias_param) {
        for (double v : a.parameters()[*p.bias_param]->data()) CHECK(v == 0.0);
      }
    }
  }

  TEST_CASE("weights follow the uniform distribution") {
    TrainConfig c;
    c.weight_init = 0.3;
    const Network net = init_weights(Network({100}, {dense(100, 100)}, LossKind::MeanSquaredError), c);
    std::vector<double> w(net.parameters()[0]->values());
    REQUIRE(w.size() == 10000);
    std::sort(w.begin(), w.end());
    double ks = 0.0;
    const double n = static_cast<double>(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double cdf = (w[i] + 0.3) / 0.6;
      ks = std::max({ks, std::abs(cdf - static_cast<double>(i) / n),
                     std::abs(cdf - static_cast<double>(i + 1) / n)});
      CHECK(std::abs(w[i]) <= 0.3);
    }
    CHECK(ks <= 0.02);
  }

  TEST_CASE("negative scale") {
    TrainConfig c;
    c.weight_init = -1.0;
    CHECK_THROWS_AS(init_weights(make_mlp(2, {2}, 2), c), DomainError);
  }
}

TEST_SUITE("train") {
  TEST_CASE("zero epochs leaves the model alone") {
    TrainConfig c;
    c.epochs = 0;
    const Network init = init_weights(make_mlp(2, {8}, 2), c);
    const ProtocolSplit d = moons_split(200, 0.1, 0);
    const TrainResult r = train(init, d.train, c);
    CHECK(r.model.flat_weights() == init.flat_weights());
    CHECK(r.report.loss_history.empty());
    CHECK(r.report.final_loss == baseline_loss(init, d.train));
  }

  TEST_CASE("zero learning rate is bit-identical") {
    TrainConfig c;
    c.epochs = 1;
    c.learning_rate = 0.0;
    const Network init = init_weights(make_mlp(2, {8}, 2), c);
    const TrainResult r = train(init, moons_split(200, 0.1, 0).train, c);
    CHECK(r.model.flat_weights() == init.flat_weights());
    CHECK(r.report.loss_history.size() == 1);
  }

  TEST_CASE("least squares converges to the closed form") {
    // y = 2x on symmetric inputs: the bias gradient stays zero, so only w moves
    const Dataset d = regression_batch(Tensor({2, 1}, {-3.0, 3.0}), Tensor({2, 1}, {-6.0, 6.0}));
    TrainConfig c;
    c.learning_rate = 0.01;
    c.epochs = 200;
    c.batch_size = 2;
    const Network init = init_weights(Network({1}, {dense(1, 1)}, LossKind::MeanSquaredError), c);
    const TrainResult r = train(init, d, c);
    CHECK(std::abs(r.model.flat_weights()[0] - 2.0) < 1e-3);
    CHECK(r.report.loss_history.size() == 200);
  }

  TEST_CASE("two-moons MLP reaches 95% training accuracy") {
    const TrainedMoons tm = trained_moons(0);
    CHECK(accuracy(tm.model, tm.data.train) >= 0.95);
  }

  TEST_CASE("history length matches epochs and loss falls") {
    TrainConfig c;
    c.epochs = 25;
    const ProtocolSplit d = moons_split(400, 0.2, 1);
    const TrainResult r = train(init_weights(make_mlp(2, {16, 16}, 2), c), d.train, c);
    REQUIRE(r.report.loss_history.size() == 25);
    CHECK(r.report.loss_history.back() < r.report.loss_history.front());
  }

  TEST_CASE("same seed trains to the same weights") {
    TrainConfig c;
    c.epochs = 5;
    c.seed = 3;
    const ProtocolSplit d = moons_split(300, 0.2, 3);
    const Network init = init_weights(make_mlp(2, {8}, 2), c);
    CHECK(train(init, d.train, c).model.flat_weights() == train(init, d.train, c).model.flat_weights());
  }

  TEST_CASE("divergence names the epoch") {
    const Dataset d = regression_batch(Tensor({2, 1}, {-30.0, 30.0}), Tensor({2, 1}, {-60.0, 60.0}));
    TrainConfig c;
    c.learning_rate = 10.0;
    c.epochs = 500;
    c.batch_size = 2;
    const Network init = init_weights(Network({1}, {dense(1, 1)}, LossKind::MeanSquaredError), c);
    try {
      train(init, d, c);
      FAIL("expected divergence");
    } catch (const TrainingDivergedError& e) {
      CHECK(e.epoch() < 500);
    }
  }

  TEST_CASE("bad configuration") {
    TrainConfig c;
    c.batch_size = 0;
    CHECK_THROWS_AS(train(make_mlp(2, {2}, 2), moons_split(40, 0.1, 0).train, c), DomainError);
  }
}

TEST_SUITE("well_trainedness") {
  TEST_CASE("exact interpolation") {
    CHECK(well_trainedness(scalar_model(2.0), scalar_sample(3, 6)) == 0.0);
  }

  TEST_CASE("training shrinks the gradient at least tenfold") {
    for (std::uint64_t seed : {0u, 1u, 2u}) {
      CAPTURE(seed);
      const ProtocolSplit d = moons_split(2000, 0.2, seed);
      const TrainConfig c = converged_config(seed, d.train.size());
      const Network init = init_weights(make_mlp(2, {16, 16}, 2), c);
      const TrainResult r = train(init, d.train, c);
      CHECK(r.report.initial_grad_rms == well_trainedness(init, d.train));
      CHECK(r.report.grad_rms == well_trainedness(r.model, d.train));
      CHECK(r.report.grad_rms <= 0.1 * r.report.initial_grad_rms);
    }
  }

  TEST_CASE("matches finite differences") {
    const RandomModel rm = random_kink_free_model(77, 5, 1e-3);
    const auto fd = fd_param_gradients(rm.net, rm.batch, 1e-5);
    double sq = 0.0;
    std::size_t count = 0;
    for (const Tensor& t : fd) {
      for (double v : t.data()) sq += v * v;
      count += t.numel();
    }
    const double expect = std::sqrt(sq / static_cast<double>(count));
    CHECK(well_trainedness(rm.net, rm.batch) == doctest::Approx(expect).epsilon(1e-5));
  }
}

TEST_SUITE("architectures") {
  TEST_CASE("spec strings") {
    CHECK(make_architecture("mlp:16,16", 2, 2).num_points() == 5);
    const Network plain = make_architecture("plain:8x3", 2, 2);
    const Network res = make_architecture("residual:8x3", 2, 2);
    CHECK(plain.parameter_count() == res.parameter_count());
    CHECK(res.num_points() == plain.num_points() + 3);
    CHECK_THROWS_AS(make_architecture("mlp:", 2, 2), DomainError);
    CHECK_THROWS_AS(make_architecture("tree:4", 2, 2), DomainError);
    CHECK_THROWS_AS(make_architecture("plain:8", 2, 2), DomainError);
  }

  TEST_CASE("report json") {
    TrainConfig c;
    c.epochs = 3;
    const TrainResult r = train(init_weights(make_mlp(2, {4}, 2), c), moons_split(100, 0.1, 0).train, c);
    const auto j = train_report_to_json(r.report, c);
    CHECK(j["loss_history"].size() == 3);
    REQUIRE(j["layer_gradients"].size() == 3);
    CHECK(j["layer_gradients"][2]["k"] == 4);
    // zero-initialised biases and U(-s, s) weights: the output layer sees a live gradient
    CHECK(j["layer_gradients"][2]["grad_norm_before"].get<double>() > 0.0);
  }
}
