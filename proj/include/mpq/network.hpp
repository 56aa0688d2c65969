#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mpq/dataset.hpp"
#include "mpq/tensor.hpp"

namespace mpq {

enum class LossKind {
  SoftmaxCrossEntropy,
  MeanSquaredError,
  /// Per-sample loss is the mean of the network outputs; labels unused.
  /// Linear in the output, which makes hand-checkable probes possible.
  MeanOutput,
};

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  Tensor weights;  // [out, in]
  Tensor bias;     // [out]
};

struct Conv2d {
  std::size_t in_ch = 0;
  std::size_t out_ch = 0;
  std::size_t kh = 0;
  std::size_t kw = 0;
  std::size_t stride = 1;
  std::size_t zero_pad = 0;
  Tensor kernels;  // [out_ch, in_ch, kh, kw]
  Tensor bias;     // [out_ch]
};

struct Relu {};
struct Flatten {};

struct Layer;

/// y = x + body(x); body must preserve the shape.
struct Residual {
  std::vector<Layer> body;
};

struct Layer {
  std::variant<Dense, Conv2d, Relu, Flatten, Residual> op;
};

// Layer builders with zero-initialized parameters.
Layer dense(std::size_t in, std::size_t out);
Layer dense(Tensor weights, Tensor bias);
Layer conv(std::size_t in_ch, std::size_t out_ch, std::size_t kh, std::size_t kw,
           std::size_t stride = 1, std::size_t zero_pad = 0);
Layer relu();
Layer flatten();
Layer residual(std::vector<Layer> body);

/// One quantization/probe site. Every layer, including a residual block and
/// each layer inside its body, is a point; points are numbered in pre-order
/// data-flow order, so point 0 consumes the raw sample.
struct PointInfo {
  std::size_t index = 0;
  std::string kind;
  std::size_t depth = 0;  // residual nesting level
  Shape input_shape;      // per sample
  Shape output_shape;
  std::optional<std::size_t> weight_param;  // index into parameters()
  std::optional<std::size_t> bias_param;
};

/// Inputs of every point for one batch, after any injected transform.
struct ActivationTrace {
  std::vector<Tensor> inputs;
  double loss = 0.0;
};

struct ForwardResult {
  double loss = 0.0;
  Tensor output;
  ActivationTrace trace;
};

/// Gradients of the batch-mean loss. `inputs[p]` has the batch shape of
/// point p's input; summing it over the batch axis gives the dataset-mean
/// gradient of the per-sample loss.
struct GradientSet {
  double loss = 0.0;
  std::vector<Tensor> inputs;
  std::vector<Tensor> params;

  /// Sum over the batch axis of inputs[point]; shape is the per-sample shape.
  Tensor mean_input_gradient(std::size_t point) const;
};

/// Hook run on a point's batch input before the layer consumes it.
using InputTransform = std::function<void(std::size_t point, Tensor& batch_input)>;

/// Per-forward perturbation: `transform` first (fake quantization, test
/// noise), then `offset` added to every component of the `target` input.
/// Gradients pass straight through both.
struct InjectionPlan {
  InputTransform transform;
  std::optional<std::size_t> target;
  double offset = 0.0;

  static InjectionPlan shift(std::size_t point, double offset) {
    InjectionPlan p;
    p.target = point;
    p.offset = offset;
    return p;
  }
};

class Network {
 public:
  /// Validates every layer's parameter shapes and the shape chain.
  Network(Shape input_shape, std::vector<Layer> layers, LossKind loss);

  const Shape& input_shape() const noexcept { return input_shape_; }
  const Shape& output_shape() const noexcept { return output_shape_; }
  LossKind loss() const noexcept { return loss_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  std::size_t num_points() const noexcept { return points_.size(); }
  const std::vector<PointInfo>& points() const noexcept { return points_; }
  /// Layer at a point (a residual point returns the block itself).
  const Layer& layer_at(std::size_t point) const;

  /// Weight and bias tensors in point order (weights before bias).
  std::vector<const Tensor*> parameters() const;
  std::vector<Tensor*> mutable_parameters();
  std::size_t parameter_count() const;
  std::vector<double> flat_weights() const;
  void set_flat_weights(const std::vector<double>& w);

  ForwardResult forward(const Dataset& batch, const InjectionPlan* plan = nullptr) const;
  GradientSet backward(const Dataset& batch, const InjectionPlan* plan = nullptr) const;

  /// Per-sample losses for an output batch.
  std::vector<double> sample_losses(const Tensor& output, const Dataset& batch) const;

 private:
  Tensor run(const std::vector<Layer>& layers, Tensor x, std::size_t& point,
             const InjectionPlan* plan, std::vector<Tensor>& inputs) const;
  Tensor back(const std::vector<Layer>& layers, Tensor grad, std::size_t first_point,
              std::size_t first_param, const std::vector<Tensor>& inputs,
              GradientSet& grads) const;
  void check_batch(const Dataset& batch) const;

  Shape input_shape_;
  Shape output_shape_;
  std::vector<Layer> layers_;
  LossKind loss_;
  std::vector<PointInfo> points_;
};

}  // namespace mpq
