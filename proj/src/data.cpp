#include "mpq/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>

#include "mpq/error.hpp"
#include "mpq/rng.hpp"

namespace mpq {

Dataset gen_two_moons(std::size_t n, double noise_std, std::uint64_t seed) {
  if (n < 2) throw DomainError("two moons needs at least 2 points");
  if (!(noise_std >= 0.0)) throw DomainError("noise_std must be nonnegative");
  const std::size_t n_outer = n / 2;
  const std::size_t n_inner = n - n_outer;
  Rng rng(seed);
  std::vector<double> xy;
  xy.reserve(2 * n);
  Dataset d;
  const auto angle = [](std::size_t i, std::size_t count) {
    return count > 1 ? std::numbers::pi * static_cast<double>(i) / static_cast<double>(count - 1)
                     : 0.0;
  };
  for (std::size_t i = 0; i < n_outer; ++i) {
    const double t = angle(i, n_outer);
    xy.push_back(std::cos(t) + noise_std * rng.normal());
    xy.push_back(std::sin(t) + noise_std * rng.normal());
    d.labels.push_back(0);
  }
  for (std::size_t i = 0; i < n_inner; ++i) {
    const double t = angle(i, n_inner);
    xy.push_back(1.0 - std::cos(t) + noise_std * rng.normal());
    xy.push_back(0.5 - std::sin(t) + noise_std * rng.normal());
    d.labels.push_back(1);
  }
  d.inputs = Tensor({n, 2}, std::move(xy));
  return d;
}

namespace {

double parse_real(std::string_view cell, std::size_t line) {
  while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
  while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) {
    cell.remove_suffix(1);
  }
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (cell.empty() || ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
    throw ParseError("line " + std::to_string(line) + ": non-numeric cell '" +
                     std::string(cell) + "'");
  }
  return v;
}

}  // namespace

Dataset parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string row;
  std::size_t line = 0;
  std::size_t arity = 0;
  std::vector<double> features;
  Dataset d;
  while (std::getline(in, row)) {
    ++line;
    if (!row.empty() && row.back() == '\r') row.pop_back();
    if (row.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string_view> cells;
    std::string_view rest(row);
    while (true) {
      const auto comma = rest.find(',');
      cells.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (cells.size() < 2) {
      throw ParseError("line " + std::to_string(line) + ": need features and a label");
    }
    if (arity == 0) arity = cells.size();
    if (cells.size() != arity) {
      throw ParseError("line " + std::to_string(line) + ": expected " + std::to_string(arity) +
                       " columns, found " + std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c + 1 < cells.size(); ++c) {
      features.push_back(parse_real(cells[c], line));
    }
    const double label = parse_real(cells.back(), line);
    if (label != std::floor(label) || label < 0 || label > 1e9) {
      throw ParseError("line " + std::to_string(line) + ": label must be a nonnegative integer");
    }
    d.labels.push_back(static_cast<int>(label));
  }
  if (d.labels.empty()) throw ParseError("CSV contains no rows");
  d.inputs = Tensor({d.labels.size(), arity - 1}, std::move(features));
  return d;
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_csv(ss.str());
}

std::string to_csv(const Dataset& d) {
  std::ostringstream f;
  const std::size_t m = d.size();
  const std::size_t k = m ? d.inputs.numel() / m : 0;
  f << std::setprecision(9);
  for (std::size_t s = 0; s < m; ++s) {
    for (std::size_t c = 0; c < k; ++c) f << d.inputs[s * k + c] << ',';
    f << d.labels.at(s) << '\n';
  }
  return f.str();
}

void save_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot write " + path.string());
  f << to_csv(d);
}

Dataset parse_cifar10_binary(const std::string& bytes) {
  constexpr std::size_t kRecord = 3073;
  constexpr std::size_t kPixels = 3072;
  if (bytes.size() % kRecord != 0) {
    throw ParseError("CIFAR-10 file length " + std::to_string(bytes.size()) +
                     " is not a multiple of 3073");
  }
  const std::size_t m = bytes.size() / kRecord;
  if (m == 0) throw ParseError("CIFAR-10 file contains no records");
  Dataset d;
  std::vector<double> px(m * kPixels);
  d.labels.resize(m);
  for (std::size_t r = 0; r < m; ++r) {
    const auto* rec = reinterpret_cast<const unsigned char*>(bytes.data()) + r * kRecord;
    if (rec[0] > 9) {
      throw ParseError("CIFAR-10 record " + std::to_string(r) + " has label " +
                       std::to_string(rec[0]));
    }
    d.labels[r] = rec[0];
    for (std::size_t i = 0; i < kPixels; ++i) px[r * kPixels + i] = rec[1 + i] / 255.0;
  }
  d.inputs = Tensor({m, 3, 32, 32}, std::move(px));
  return d;
}

Dataset load_cifar10_binary(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_cifar10_binary(ss.str());
}

namespace {

std::vector<std::size_t> shuffled_rows(std::size_t m, std::uint64_t seed) {
  std::vector<std::size_t> rows(m);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  Rng rng(seed, 0x5eed5);
  rng.shuffle(std::span<std::size_t>(rows));
  return rows;
}

}  // namespace

TrainCalibration split(const Dataset& d, const SplitSpec& spec) {
  const std::size_t m = d.size();
  if (spec.calibration_size >= m) {
    throw DomainError("calibration size " + std::to_string(spec.calibration_size) +
                      " must be smaller than dataset size " + std::to_string(m));
  }
  const auto rows = shuffled_rows(m, spec.seed);
  const std::span<const std::size_t> all(rows);
  return {d.subset(all.subspan(spec.calibration_size)),
          d.subset(all.first(spec.calibration_size))};
}

ProtocolSplit protocol_split(const Dataset& d, std::size_t test_size, std::uint64_t seed) {
  const std::size_t m = d.size();
  if (test_size == 0 || 2 * test_size >= m) {
    throw DomainError("test size " + std::to_string(test_size) + " leaves no training data for " +
                      std::to_string(m) + " samples");
  }
  const auto rows = shuffled_rows(m, seed);
  const std::span<const std::size_t> all(rows);
  return {d.subset(all.subspan(2 * test_size)), d.subset(all.subspan(test_size, test_size)),
          d.subset(all.first(test_size))};
}

}  // namespace mpq
