#include "mpq/dataset.hpp"

#include <cstring>

#include "mpq/error.hpp"

namespace mpq {

Shape Dataset::sample_shape() const {
  if (inputs.rank() < 2) return {};
  return Shape(inputs.shape().begin() + 1, inputs.shape().end());
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  const std::size_t m = size();
  const Shape sample = sample_shape();
  const std::size_t k = shape_numel(sample);
  const std::size_t t = is_regression() ? targets.numel() / m : 0;

  Shape in_shape{rows.size()};
  in_shape.insert(in_shape.end(), sample.begin(), sample.end());
  std::vector<double> in;
  in.reserve(rows.size() * k);
  std::vector<double> tg;
  Dataset out;
  for (std::size_t r : rows) {
    if (r >= m) throw DomainError("subset row out of range");
    const auto src = inputs.data().subspan(r * k, k);
    in.insert(in.end(), src.begin(), src.end());
    if (!labels.empty()) out.labels.push_back(labels[r]);
    if (t) {
      const auto ts = targets.data().subspan(r * t, t);
      tg.insert(tg.end(), ts.begin(), ts.end());
    }
  }
  out.inputs = Tensor(std::move(in_shape), std::move(in));
  if (t) out.targets = Tensor({rows.size(), t}, std::move(tg));
  return out;
}

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

void fnv_tensor(std::uint64_t& h, const Tensor& t) {
  for (std::size_t d : t.shape()) {
    const std::uint64_t v = d;
    fnv(h, &v, sizeof v);
  }
  fnv(h, t.data().data(), t.numel() * sizeof(double));
}

}  // namespace

std::uint64_t dataset_hash(const Dataset& d) {
  std::uint64_t h = kFnvOffset;
  fnv_tensor(h, d.inputs);
  for (int y : d.labels) {
    const std::int64_t v = y;
    fnv(h, &v, sizeof v);
  }
  fnv_tensor(h, d.targets);
  return h;
}

}  // namespace mpq
