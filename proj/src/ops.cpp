#include "mpq/ops.hpp"

#include "mpq/error.hpp"

namespace mpq {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  const auto ad = a.data();
  const auto bd = b.data();
  auto cd = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += ad[i * k + t] * bd[t * n + j];
      cd[i * n + j] = acc;
    }
  }
  return c;
}

std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride,
                          std::size_t zero_pad) {
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t padded = in + 2 * zero_pad;
  if (k == 0 || padded < k || (padded - k) % stride != 0) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " with stride " +
                     std::to_string(stride) + " and pad " + std::to_string(zero_pad) +
                     " does not tile input extent " + std::to_string(in));
  }
  return (padded - k) / stride + 1;
}

namespace {

struct ConvGeometry {
  std::size_t c, h, w, f, kh, kw, oh, ow;
};

ConvGeometry geometry(const Shape& input, const Shape& kernels, std::size_t stride,
                      std::size_t pad) {
  if (input.size() != 3 || kernels.size() != 4 || kernels[1] != input[0]) {
    throw ShapeError("conv2d: input " + shape_str(input) + " incompatible with kernels " +
                     shape_str(kernels));
  }
  ConvGeometry g{input[0], input[1], input[2], kernels[0], kernels[2], kernels[3], 0, 0};
  g.oh = conv_out_size(g.h, g.kh, stride, pad);
  g.ow = conv_out_size(g.w, g.kw, stride, pad);
  return g;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride,
              std::size_t zero_pad) {
  const auto g = geometry(input.shape(), kernels.shape(), stride, zero_pad);
  Tensor out({g.f, g.oh, g.ow});
  const auto in = input.data();
  const auto ker = kernels.data();
  auto o = out.data();
  for (std::size_t f = 0; f < g.f; ++f) {
    for (std::size_t y = 0; y < g.oh; ++y) {
      for (std::size_t x = 0; x < g.ow; ++x) {
        double acc = 0.0;
        for (std::size_t c = 0; c < g.c; ++c) {
          for (std::size_t a = 0; a < g.kh; ++a) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + a) -
                                      static_cast<std::ptrdiff_t>(zero_pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t b = 0; b < g.kw; ++b) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * stride + b) -
                                        static_cast<std::ptrdiff_t>(zero_pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
              acc += in[(c * g.h + static_cast<std::size_t>(iy)) * g.w +
                        static_cast<std::size_t>(ix)] *
                     ker[((f * g.c + c) * g.kh + a) * g.kw + b];
            }
          }
        }
        o[(f * g.oh + y) * g.ow + x] = acc;
      }
    }
  }
  return out;
}

Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& kernels,
                         const Shape& input_shape, std::size_t stride,
                         std::size_t zero_pad) {
  const auto g = geometry(input_shape, kernels.shape(), stride, zero_pad);
  if (grad_out.shape() != Shape{g.f, g.oh, g.ow}) {
    throw ShapeError("conv2d_input_grad: gradient shape mismatch");
  }
  Tensor gin(input_shape);
  const auto go = grad_out.data();
  const auto ker = kernels.data();
  auto gi = gin.data();
  for (std::size_t f = 0; f < g.f; ++f) {
    for (std::size_t y = 0; y < g.oh; ++y) {
      for (std::size_t x = 0; x < g.ow; ++x) {
        const double d = go[(f * g.oh + y) * g.ow + x];
        if (d == 0.0) continue;
        for (std::size_t c = 0; c < g.c; ++c) {
          for (std::size_t a = 0; a < g.kh; ++a) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + a) -
                                      static_cast<std::ptrdiff_t>(zero_pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t b = 0; b < g.kw; ++b) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * stride + b) -
                                        static_cast<std::ptrdiff_t>(zero_pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
              gi[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] +=
                  d * ker[((f * g.c + c) * g.kh + a) * g.kw + b];
            }
          }
        }
      }
    }
  }
  return gin;
}

void conv2d_kernel_grad_accum(const Tensor& grad_out, const Tensor& input,
                              std::size_t stride, std::size_t zero_pad,
                              Tensor& kernel_grad) {
  const auto g = geometry(input.shape(), kernel_grad.shape(), stride, zero_pad);
  const auto go = grad_out.data();
  const auto in = input.data();
  auto gk = kernel_grad.data();
  for (std::size_t f = 0; f < g.f; ++f) {
    for (std::size_t y = 0; y < g.oh; ++y) {
      for (std::size_t x = 0; x < g.ow; ++x) {
        const double d = go[(f * g.oh + y) * g.ow + x];
        if (d == 0.0) continue;
        for (std::size_t c = 0; c < g.c; ++c) {
          for (std::size_t a = 0; a < g.kh; ++a) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + a) -
                                      static_cast<std::ptrdiff_t>(zero_pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t b = 0; b < g.kw; ++b) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * stride + b) -
                                        static_cast<std::ptrdiff_t>(zero_pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
              gk[((f * g.c + c) * g.kh + a) * g.kw + b] +=
                  d * in[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }
}

double reduce_mean(const Tensor& t) {
  if (t.empty()) throw DomainError("reduce_mean of an empty tensor");
  double acc = 0.0;
  for (double v : t.data()) acc += v;
  return acc / static_cast<double>(t.numel());
}

}  // namespace mpq
