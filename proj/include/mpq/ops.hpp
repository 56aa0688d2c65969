#pragma once

#include <cstddef>

#include "mpq/tensor.hpp"

namespace mpq {

/// c = a * b for rank-2 tensors; sums run over t in increasing order.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Cross-correlation of a [C,H,W] input with [F,C,kh,kw] kernels.
Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride,
              std::size_t zero_pad);

/// Gradient of sum(grad_out * conv2d(input, kernels)) w.r.t. input.
Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& kernels,
                         const Shape& input_shape, std::size_t stride,
                         std::size_t zero_pad);

/// Same, w.r.t. kernels; accumulated into `kernel_grad`.
void conv2d_kernel_grad_accum(const Tensor& grad_out, const Tensor& input,
                              std::size_t stride, std::size_t zero_pad,
                              Tensor& kernel_grad);

/// Output spatial size; throws ShapeError on incompatible geometry.
std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride,
                          std::size_t zero_pad);

double reduce_mean(const Tensor& t);

}  // namespace mpq
