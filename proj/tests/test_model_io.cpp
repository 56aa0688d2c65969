#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "helpers.hpp"
#include "mpq/error.hpp"
#include "mpq/model_io.hpp"

using namespace mpq;
using namespace mpq::testing;
using nlohmann::json;

namespace {

// Rounds every weight to float32 so a save/load cycle is lossless.
Network f32_model(std::uint64_t seed) {
  Rng rng(seed);
  Network net = random_architecture(rng);
  randomize(net, rng, 0.7);
  std::vector<double> w = net.flat_weights();
  for (double& v : w) v = static_cast<double>(static_cast<float>(v));
  net.set_flat_weights(w);
  return net;
}

}  // namespace

TEST_SUITE("model_io") {
  TEST_CASE("round trip keeps the flattened weights") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      const Network net = f32_model(seed);
      const Network back = load_model(json::parse(save_model(net).dump()));
      CHECK(back.flat_weights() == net.flat_weights());
      CHECK(back.input_shape() == net.input_shape());
      CHECK(back.loss() == net.loss());
      CHECK(back.num_points() == net.num_points());
      CHECK(save_model(back).dump() == save_model(net).dump());
    }
  }

  TEST_CASE("non-float32 weights round to nearest float32") {
    Network net = scalar_model(0.1);
    const Network back = load_model(save_model(net));
    CHECK(back.flat_weights()[0] == static_cast<double>(0.1f));
  }

  TEST_CASE("golden two-layer file") {
    const Network net = load_model_file(std::filesystem::path(MPQ_TEST_DATA_DIR) /
                                        "golden_2layer.json");
    const float literal[] = {0.5f, -1.25f, 2.0f, 0.125f, -0.75f, 3.0f, 0.1f, -0.2f, 0.3f,
                             1.5f, -0.5f, 0.25f, -2.0f, 1.0f, 0.0625f, 0.0f, 0.7f};
    double expect = 0.0;
    for (float v : literal) expect += static_cast<double>(v);
    double sum = 0.0;
    for (double v : net.flat_weights()) sum += v;
    CHECK(sum == expect);
    CHECK(net.parameter_count() == 17);
    CHECK(model_hash(net) == 0x7e4c470ceb1bd7a1ull);
  }

  TEST_CASE("declared sizes must match the blobs") {
    json doc = save_model(scalar_model(2.0));
    doc["layers"][0]["out"] = 2;
    CHECK_THROWS_AS(load_model(doc), ShapeError);

    json three_bias = save_model(Network({1}, {dense(1, 2)}, LossKind::MeanSquaredError));
    Tensor b({3}, 1.0);
    three_bias["layers"][0]["bias"] = encode_f32(b);
    CHECK_THROWS_AS(load_model(three_bias), ShapeError);
  }

  TEST_CASE("schema violations") {
    const json good = save_model(scalar_model(2.0));
    json v = good;
    v["version"] = 2;
    CHECK_THROWS_AS(load_model(v), SchemaError);
    json k = good;
    k["layers"][0]["kind"] = "pool";
    CHECK_THROWS_AS(load_model(k), SchemaError);
    json l = good;
    l["loss"] = "hinge";
    CHECK_THROWS_AS(load_model(l), SchemaError);
    json m = good;
    m.erase("layers");
    CHECK_THROWS_AS(load_model(m), SchemaError);
    CHECK_THROWS_AS(load_model(json::array()), SchemaError);
  }

  TEST_CASE("corrupt weight blob") {
    json doc = save_model(scalar_model(2.0));
    doc["layers"][0]["weights"] = "@@@@";
    CHECK_THROWS_AS(load_model(doc), ParseError);
    doc["layers"][0]["weights"] = "AAA";  // not a multiple of four characters
    CHECK_THROWS_AS(load_model(doc), ParseError);
  }

  TEST_CASE("base64 against known vectors") {
    const auto enc = [](const char* s) {
      return base64_encode(std::vector<std::uint8_t>(s, s + std::strlen(s)));
    };
    CHECK(enc("") == "");
    CHECK(enc("f") == "Zg==");
    CHECK(enc("fo") == "Zm8=");
    CHECK(enc("foo") == "Zm9v");
    CHECK(enc("foobar") == "Zm9vYmFy");
    const auto dec = base64_decode("Zm9vYg==");
    CHECK(std::string(dec.begin(), dec.end()) == "foob");
  }

  TEST_CASE("float32 blob is little-endian") {
    // 1.0f = 0x3f800000 -> bytes 00 00 80 3f
    CHECK(encode_f32(Tensor::vector({1.0})) == "AACAPw==");
    CHECK(decode_f32("AACAPw==") == std::vector<double>{1.0});
  }

  TEST_CASE("residual and conv layers serialize") {
    const Network net({1, 4, 4},
                      {conv(1, 2, 3, 3, 1, 1), relu(), residual({conv(2, 2, 3, 3, 1, 1)}),
                       flatten(), dense(32, 2)},
                      LossKind::SoftmaxCrossEntropy);
    const json doc = save_model(net);
    CHECK(doc["layers"][2]["kind"] == "residual");
    CHECK(doc["layers"][2]["body"][0]["kind"] == "conv2d");
    CHECK(load_model(doc).num_points() == net.num_points());
  }
}
