#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "helpers.hpp"
#include "mpq/data.hpp"
#include "mpq/error.hpp"

using namespace mpq;
using namespace mpq::testing;
namespace fs = std::filesystem;

namespace {

std::string cifar_record(std::uint8_t label, std::uint8_t pixel) {
  std::string r(3073, static_cast<char>(pixel));
  r[0] = static_cast<char>(label);
  return r;
}

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("mpq_test_" + name);
}

}  // namespace

TEST_SUITE("two_moons") {
  TEST_CASE("noise-free points lie on the half circles") {
    const Dataset d = gen_two_moons(4, 0.0, 1);
    for (std::size_t i = 0; i < 4; ++i) {
      const double x = d.inputs.at(i, 0), y = d.inputs.at(i, 1);
      if (d.labels[i] == 0) {
        CHECK(std::hypot(x, y) == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(y >= -1e-15);
      } else {
        CHECK(std::hypot(x - 1.0, y - 0.5) == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(y <= 0.5 + 1e-15);
      }
    }
  }

  TEST_CASE("classes are balanced") {
    const Dataset d = gen_two_moons(101, 0.1, 0);
    const auto ones = std::count(d.labels.begin(), d.labels.end(), 1);
    CHECK((ones == 50 || ones == 51));
    CHECK(d.size() == 101);
  }

  TEST_CASE("seeded") {
    CHECK(gen_two_moons(50, 0.2, 9).inputs == gen_two_moons(50, 0.2, 9).inputs);
    CHECK(gen_two_moons(50, 0.2, 9).inputs != gen_two_moons(50, 0.2, 10).inputs);
  }

  TEST_CASE("too few points") {
    CHECK_THROWS_AS(gen_two_moons(1, 0.1, 0), DomainError);
    CHECK_THROWS_AS(gen_two_moons(10, -0.1, 0), DomainError);
  }
}

TEST_SUITE("csv") {
  TEST_CASE("two rows") {
    const Dataset d = parse_csv("1.0,2.0,0\n3.0,4.0,1");
    CHECK(d.size() == 2);
    CHECK(d.sample_shape() == Shape{2});
    CHECK(d.inputs.at(1, 1) == 4.0);
    CHECK(d.labels == std::vector<int>{0, 1});
  }

  TEST_CASE("ragged row names its line") {
    try {
      parse_csv("1,2,0\n3,4,1\n5,1\n");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
  }

  TEST_CASE("non-numeric and empty input") {
    CHECK_THROWS_AS(parse_csv("1,x,0\n"), ParseError);
    CHECK_THROWS_AS(parse_csv(""), ParseError);
    CHECK_THROWS_AS(parse_csv("1,2,0.5\n"), ParseError);
    CHECK_THROWS_AS(load_csv(temp_file("does_not_exist.csv")), ParseError);
  }

  TEST_CASE("round trip of a generated set") {
    const Dataset d = gen_two_moons(60, 0.2, 4);
    const fs::path p = temp_file("moons.csv");
    save_csv(d, p);
    const Dataset back = load_csv(p);
    fs::remove(p);
    CHECK(back.labels == d.labels);
    for (std::size_t i = 0; i < d.inputs.numel(); ++i) {
      CHECK(back.inputs[i] == doctest::Approx(d.inputs[i]).epsilon(1e-7));
    }
  }
}

TEST_SUITE("cifar10") {
  TEST_CASE("empty file") {
    CHECK_THROWS(parse_cifar10_binary(""));
  }

  TEST_CASE("single record") {
    const Dataset d = parse_cifar10_binary(cifar_record(7, 255));
    CHECK(d.size() == 1);
    CHECK(d.labels[0] == 7);
    CHECK(d.sample_shape() == Shape{3, 32, 32});
    for (double v : d.inputs.data()) CHECK(v == 1.0);
  }

  TEST_CASE("record order and pixel layout") {
    std::string bytes = cifar_record(2, 0) + cifar_record(9, 51);
    bytes[1 + 1024 + 32 * 5 + 3] = static_cast<char>(102);  // green, row 5, col 3
    const Dataset d = parse_cifar10_binary(bytes);
    CHECK(d.labels == std::vector<int>{2, 9});
    CHECK(d.inputs[3072] == doctest::Approx(0.2));
    CHECK(d.inputs[1024 + 32 * 5 + 3] == doctest::Approx(0.4));
    for (double v : d.inputs.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }

  TEST_CASE("bad length and label") {
    CHECK_THROWS_AS(parse_cifar10_binary(cifar_record(1, 0) + "x"), ParseError);
    CHECK_THROWS_AS(parse_cifar10_binary(cifar_record(10, 0)), ParseError);
  }

  TEST_CASE("file loader") {
    const fs::path p = temp_file("cifar.bin");
    {
      std::ofstream f(p, std::ios::binary);
      f << cifar_record(3, 128);
    }
    const Dataset d = load_cifar10_binary(p);
    fs::remove(p);
    CHECK(d.labels[0] == 3);
    CHECK(d.inputs[0] == doctest::Approx(128.0 / 255.0));
  }
}

TEST_SUITE("split") {
  TEST_CASE("sizes") {
    const TrainCalibration s = split(gen_two_moons(10, 0.1, 0), SplitSpec{3, 1});
    CHECK(s.train.size() == 7);
    CHECK(s.calibration.size() == 3);
  }

  TEST_CASE("partition of the rows") {
    // the first feature of a zero-noise row identifies it uniquely here
    const Dataset d = gen_two_moons(41, 0.0, 0);
    const TrainCalibration s = split(d, SplitSpec{13, 5});
    std::multiset<std::pair<double, double>> all, parts;
    for (std::size_t i = 0; i < d.size(); ++i) all.insert({d.inputs.at(i, 0), d.inputs.at(i, 1)});
    for (const Dataset* p : {&s.train, &s.calibration})
      for (std::size_t i = 0; i < p->size(); ++i)
        parts.insert({p->inputs.at(i, 0), p->inputs.at(i, 1)});
    CHECK(all == parts);
    CHECK(s.train.size() + s.calibration.size() == d.size());
  }

  TEST_CASE("seeded") {
    const Dataset d = gen_two_moons(30, 0.2, 0);
    CHECK(split(d, {5, 2}).calibration.inputs == split(d, {5, 2}).calibration.inputs);
    CHECK(split(d, {5, 2}).calibration.inputs != split(d, {5, 3}).calibration.inputs);
  }

  TEST_CASE("calibration must leave training rows") {
    const Dataset d = gen_two_moons(10, 0.2, 0);
    CHECK_THROWS_AS(split(d, {10, 0}), DomainError);
    CHECK_THROWS_AS(split(d, {11, 0}), DomainError);
  }

  TEST_CASE("protocol split holds out equal test and calibration sets") {
    const ProtocolSplit s = protocol_split(gen_two_moons(2000, 0.2, 0), 500, 0);
    CHECK(s.test.size() == 500);
    CHECK(s.calibration.size() == 500);
    CHECK(s.train.size() == 1000);
    CHECK(dataset_hash(s.test) != dataset_hash(s.calibration));
  }

  TEST_CASE("subset keeps labels and targets aligned") {
    const Dataset d = regression_batch(Tensor({3, 1}, {1, 2, 3}), Tensor({3, 1}, {10, 20, 30}));
    const std::vector<std::size_t> rows{2, 0};
    const Dataset s = d.subset(rows);
    CHECK(s.inputs == Tensor({2, 1}, {3, 1}));
    CHECK(s.targets == Tensor({2, 1}, {30, 10}));
  }
}
