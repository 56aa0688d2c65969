#include "mpq/network.hpp"

#include <algorithm>
#include <cmath>

#include "mpq/error.hpp"
#include "mpq/ops.hpp"

namespace mpq {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::size_t count_points(const Layer& layer) {
  if (const auto* r = std::get_if<Residual>(&layer.op)) {
    std::size_t n = 1;
    for (const auto& l : r->body) n += count_points(l);
    return n;
  }
  return 1;
}

std::size_t count_params(const Layer& layer) {
  return std::visit(overloaded{
                        [](const Dense&) -> std::size_t { return 2; },
                        [](const Conv2d&) -> std::size_t { return 2; },
                        [](const Residual& r) {
                          std::size_t n = 0;
                          for (const auto& l : r.body) n += count_params(l);
                          return n;
                        },
                        [](const auto&) -> std::size_t { return 0; },
                    },
                    layer.op);
}

void expect_shape(const Tensor& t, const Shape& want, const std::string& what) {
  if (t.shape() != want) {
    throw ShapeError(what + " has shape " + shape_str(t.shape()) + ", expected " +
                     shape_str(want));
  }
}

Shape build(const std::vector<Layer>& layers, Shape in, std::size_t depth,
            std::size_t& param, std::vector<PointInfo>& points) {
  for (const Layer& layer : layers) {
    PointInfo info;
    info.index = points.size();
    info.depth = depth;
    info.input_shape = in;
    points.push_back(info);
    const std::size_t slot = info.index;
    Shape out = std::visit(
        overloaded{
            [&](const Dense& d) -> Shape {
              points[slot].kind = "dense";
              if (in != Shape{d.in}) {
                throw ShapeError("dense layer expects input [" + std::to_string(d.in) +
                                 "], got " + shape_str(in));
              }
              expect_shape(d.weights, {d.out, d.in}, "dense weights");
              expect_shape(d.bias, {d.out}, "dense bias");
              points[slot].weight_param = param++;
              points[slot].bias_param = param++;
              return {d.out};
            },
            [&](const Conv2d& c) -> Shape {
              points[slot].kind = "conv2d";
              if (in.size() != 3 || in[0] != c.in_ch) {
                throw ShapeError("conv2d layer expects [" + std::to_string(c.in_ch) +
                                 ",H,W] input, got " + shape_str(in));
              }
              expect_shape(c.kernels, {c.out_ch, c.in_ch, c.kh, c.kw}, "conv2d kernels");
              expect_shape(c.bias, {c.out_ch}, "conv2d bias");
              points[slot].weight_param = param++;
              points[slot].bias_param = param++;
              return {c.out_ch, conv_out_size(in[1], c.kh, c.stride, c.zero_pad),
                      conv_out_size(in[2], c.kw, c.stride, c.zero_pad)};
            },
            [&](const Relu&) -> Shape {
              points[slot].kind = "relu";
              return in;
            },
            [&](const Flatten&) -> Shape {
              points[slot].kind = "flatten";
              return {shape_numel(in)};
            },
            [&](const Residual& r) -> Shape {
              points[slot].kind = "residual";
              Shape body_out = build(r.body, in, depth + 1, param, points);
              if (body_out != in) {
                throw ShapeError("residual body maps " + shape_str(in) + " to " +
                                 shape_str(body_out));
              }
              return in;
            },
        },
        layer.op);
    points[slot].output_shape = out;
    in = std::move(out);
  }
  return in;
}

Shape batch_shape(std::size_t m, const Shape& sample) {
  Shape s{m};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

Tensor dense_forward(const Dense& d, const Tensor& x) {
  const std::size_t m = x.dim(0);
  Tensor y({m, d.out});
  const auto xd = x.data();
  const auto w = d.weights.data();
  const auto b = d.bias.data();
  auto yd = y.data();
  for (std::size_t s = 0; s < m; ++s) {
    for (std::size_t o = 0; o < d.out; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < d.in; ++i) acc += w[o * d.in + i] * xd[s * d.in + i];
      yd[s * d.out + o] = acc;
    }
  }
  return y;
}

Tensor conv_forward(const Conv2d& c, const Tensor& x) {
  const std::size_t m = x.dim(0);
  std::vector<double> out;
  Shape sample_out;
  for (std::size_t s = 0; s < m; ++s) {
    Tensor y = conv2d(x.slice0(s), c.kernels, c.stride, c.zero_pad);
    const std::size_t plane = y.dim(1) * y.dim(2);
    auto yd = y.data();
    for (std::size_t f = 0; f < c.out_ch; ++f) {
      for (std::size_t i = 0; i < plane; ++i) yd[f * plane + i] += c.bias[f];
    }
    if (s == 0) {
      sample_out = y.shape();
      out.reserve(m * y.numel());
    }
    out.insert(out.end(), yd.begin(), yd.end());
  }
  return Tensor(batch_shape(m, sample_out), std::move(out));
}

}  // namespace

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::SoftmaxCrossEntropy: return "softmax_ce";
    case LossKind::MeanSquaredError: return "mse";
    case LossKind::MeanOutput: return "mean_output";
  }
  return "unknown";
}

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "softmax_ce") return LossKind::SoftmaxCrossEntropy;
  if (name == "mse") return LossKind::MeanSquaredError;
  if (name == "mean_output") return LossKind::MeanOutput;
  throw SchemaError("unknown loss kind '" + name + "'");
}

Layer dense(std::size_t in, std::size_t out) {
  return Layer{Dense{in, out, Tensor({out, in}), Tensor({out})}};
}

Layer dense(Tensor weights, Tensor bias) {
  if (weights.rank() != 2) throw ShapeError("dense weights must be rank 2");
  const std::size_t out = weights.dim(0), in = weights.dim(1);
  return Layer{Dense{in, out, std::move(weights), std::move(bias)}};
}

Layer conv(std::size_t in_ch, std::size_t out_ch, std::size_t kh, std::size_t kw,
           std::size_t stride, std::size_t zero_pad) {
  return Layer{Conv2d{in_ch, out_ch, kh, kw, stride, zero_pad,
                      Tensor({out_ch, in_ch, kh, kw}), Tensor({out_ch})}};
}

Layer relu() { return Layer{Relu{}}; }
Layer flatten() { return Layer{Flatten{}}; }
Layer residual(std::vector<Layer> body) { return Layer{Residual{std::move(body)}}; }

Tensor GradientSet::mean_input_gradient(std::size_t point) const {
  const Tensor& g = inputs.at(point);
  const std::size_t m = g.dim(0);
  const std::size_t k = m ? g.numel() / m : 0;
  Shape sample(g.shape().begin() + 1, g.shape().end());
  Tensor out(sample);
  auto o = out.data();
  const auto gd = g.data();
  for (std::size_t s = 0; s < m; ++s) {
    for (std::size_t c = 0; c < k; ++c) o[c] += gd[s * k + c];
  }
  return out;
}

Network::Network(Shape input_shape, std::vector<Layer> layers, LossKind loss)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), loss_(loss) {
  if (input_shape_.empty() || shape_numel(input_shape_) == 0) {
    throw ShapeError("network input shape must be nonempty");
  }
  if (layers_.empty()) throw ShapeError("network has no layers");
  std::size_t param = 0;
  output_shape_ = build(layers_, input_shape_, 0, param, points_);
  if (loss_ != LossKind::MeanOutput && output_shape_.size() != 1) {
    throw ShapeError("loss " + to_string(loss_) + " needs a rank-1 output, got " +
                     shape_str(output_shape_));
  }
}

const Layer& Network::layer_at(std::size_t point) const {
  if (point >= points_.size()) throw DomainError("point index out of range");
  const std::vector<Layer>* layers = &layers_;
  std::size_t base = 0;
  while (true) {
    for (const Layer& l : *layers) {
      const std::size_t n = count_points(l);
      if (point == base) return l;
      if (point < base + n) {
        layers = &std::get<Residual>(l.op).body;
        base += 1;
        break;
      }
      base += n;
    }
  }
}

std::vector<const Tensor*> Network::parameters() const {
  std::vector<const Tensor*> out;
  std::function<void(const std::vector<Layer>&)> walk = [&](const std::vector<Layer>& ls) {
    for (const Layer& l : ls) {
      std::visit(overloaded{
                     [&](const Dense& d) { out.push_back(&d.weights), out.push_back(&d.bias); },
                     [&](const Conv2d& c) { out.push_back(&c.kernels), out.push_back(&c.bias); },
                     [&](const Residual& r) { walk(r.body); },
                     [](const auto&) {},
                 },
                 l.op);
    }
  };
  walk(layers_);
  return out;
}

std::vector<Tensor*> Network::mutable_parameters() {
  std::vector<Tensor*> out;
  std::function<void(std::vector<Layer>&)> walk = [&](std::vector<Layer>& ls) {
    for (Layer& l : ls) {
      std::visit(overloaded{
                     [&](Dense& d) { out.push_back(&d.weights), out.push_back(&d.bias); },
                     [&](Conv2d& c) { out.push_back(&c.kernels), out.push_back(&c.bias); },
                     [&](Residual& r) { walk(r.body); },
                     [](auto&) {},
                 },
                 l.op);
    }
  };
  walk(layers_);
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : parameters()) n += t->numel();
  return n;
}

std::vector<double> Network::flat_weights() const {
  std::vector<double> w;
  for (const Tensor* t : parameters()) w.insert(w.end(), t->data().begin(), t->data().end());
  return w;
}

void Network::set_flat_weights(const std::vector<double>& w) {
  if (w.size() != parameter_count()) throw ShapeError("flat weight vector has wrong length");
  std::size_t off = 0;
  for (Tensor* t : mutable_parameters()) {
    std::copy_n(w.begin() + static_cast<std::ptrdiff_t>(off), t->numel(), t->data().begin());
    off += t->numel();
  }
}

void Network::check_batch(const Dataset& batch) const {
  const std::size_t m = batch.size();
  if (m == 0) throw DomainError("empty batch");
  if (batch.inputs.shape() != batch_shape(m, input_shape_)) {
    throw ShapeError("batch inputs " + shape_str(batch.inputs.shape()) +
                     " do not match model input " + shape_str(input_shape_));
  }
  const std::size_t o = shape_numel(output_shape_);
  switch (loss_) {
    case LossKind::SoftmaxCrossEntropy:
      if (batch.labels.size() != m) throw ShapeError("label count does not match batch size");
      for (int y : batch.labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= o) {
          throw DomainError("label " + std::to_string(y) + " outside [0," + std::to_string(o) +
                            ")");
        }
      }
      break;
    case LossKind::MeanSquaredError:
      if (batch.targets.numel() != m * o) {
        throw ShapeError("regression targets " + shape_str(batch.targets.shape()) +
                         " do not match outputs [" + std::to_string(m) + "," +
                         std::to_string(o) + "]");
      }
      break;
    case LossKind::MeanOutput:
      break;
  }
}

std::vector<double> Network::sample_losses(const Tensor& output, const Dataset& batch) const {
  const std::size_t m = output.dim(0);
  const std::size_t o = output.numel() / m;
  const auto z = output.data();
  std::vector<double> losses(m);
  for (std::size_t s = 0; s < m; ++s) {
    const double* row = z.data() + s * o;
    switch (loss_) {
      case LossKind::SoftmaxCrossEntropy: {
        const double mx = *std::max_element(row, row + o);
        double sum = 0.0;
        for (std::size_t c = 0; c < o; ++c) sum += std::exp(row[c] - mx);
        losses[s] = mx + std::log(sum) - row[batch.labels[s]];
        break;
      }
      case LossKind::MeanSquaredError: {
        double acc = 0.0;
        for (std::size_t c = 0; c < o; ++c) {
          const double e = row[c] - batch.targets[s * o + c];
          acc += e * e;
        }
        losses[s] = acc / static_cast<double>(o);
        break;
      }
      case LossKind::MeanOutput: {
        double acc = 0.0;
        for (std::size_t c = 0; c < o; ++c) acc += row[c];
        losses[s] = acc / static_cast<double>(o);
        break;
      }
    }
  }
  return losses;
}

namespace {

double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

}  // namespace

Tensor Network::run(const std::vector<Layer>& layers, Tensor x, std::size_t& point,
                    const InjectionPlan* plan, std::vector<Tensor>& inputs) const {
  for (const Layer& layer : layers) {
    const std::size_t p = point++;
    if (plan) {
      if (plan->transform) plan->transform(p, x);
      if (plan->target && *plan->target == p) {
        for (double& v : x.data()) v += plan->offset;
      }
    }
    inputs[p] = x;
    x = std::visit(overloaded{
                       [&](const Dense& d) { return dense_forward(d, x); },
                       [&](const Conv2d& c) { return conv_forward(c, x); },
                       [&](const Relu&) {
                         Tensor y = x;
                         for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
                         return y;
                       },
                       [&](const Flatten&) {
                         const std::size_t m = x.dim(0);
                         return x.reshaped({m, x.numel() / m});
                       },
                       [&](const Residual& r) {
                         Tensor y = run(r.body, x, point, plan, inputs);
                         auto yd = y.data();
                         const auto xd = x.data();
                         for (std::size_t i = 0; i < yd.size(); ++i) yd[i] += xd[i];
                         return y;
                       },
                   },
                   layer.op);
  }
  return x;
}

ForwardResult Network::forward(const Dataset& batch, const InjectionPlan* plan) const {
  check_batch(batch);
  ForwardResult r;
  r.trace.inputs.resize(points_.size());
  std::size_t point = 0;
  r.output = run(layers_, batch.inputs, point, plan, r.trace.inputs);
  r.loss = mean_of(sample_losses(r.output, batch));
  r.trace.loss = r.loss;
  return r;
}

Tensor Network::back(const std::vector<Layer>& layers, Tensor grad, std::size_t first_point,
                     std::size_t first_param, const std::vector<Tensor>& inputs,
                     GradientSet& grads) const {
  std::vector<std::size_t> point_of(layers.size()), param_of(layers.size());
  for (std::size_t j = 0, p = first_point, q = first_param; j < layers.size(); ++j) {
    point_of[j] = p;
    param_of[j] = q;
    p += count_points(layers[j]);
    q += count_params(layers[j]);
  }
  for (std::size_t j = layers.size(); j-- > 0;) {
    const std::size_t p = point_of[j];
    const std::size_t q = param_of[j];
    const Tensor& x = inputs[p];
    const std::size_t m = x.dim(0);
    Tensor gx = std::visit(
        overloaded{
            [&](const Dense& d) {
              Tensor g(x.shape());
              auto gw = grads.params[q].data();
              auto gb = grads.params[q + 1].data();
              const auto gy = grad.data();
              const auto xd = x.data();
              const auto w = d.weights.data();
              auto gxd = g.data();
              for (std::size_t s = 0; s < m; ++s) {
                for (std::size_t o = 0; o < d.out; ++o) {
                  const double dy = gy[s * d.out + o];
                  gb[o] += dy;
                  for (std::size_t i = 0; i < d.in; ++i) {
                    gw[o * d.in + i] += dy * xd[s * d.in + i];
                    gxd[s * d.in + i] += dy * w[o * d.in + i];
                  }
                }
              }
              return g;
            },
            [&](const Conv2d& c) {
              Tensor g(x.shape());
              auto gb = grads.params[q + 1].data();
              const Shape sample_in(x.shape().begin() + 1, x.shape().end());
              const std::size_t in_n = shape_numel(sample_in);
              for (std::size_t s = 0; s < m; ++s) {
                Tensor gy = grad.slice0(s);
                const std::size_t plane = gy.dim(1) * gy.dim(2);
                for (std::size_t f = 0; f < c.out_ch; ++f) {
                  for (std::size_t i = 0; i < plane; ++i) gb[f] += gy[f * plane + i];
                }
                conv2d_kernel_grad_accum(gy, x.slice0(s), c.stride, c.zero_pad, grads.params[q]);
                Tensor gi = conv2d_input_grad(gy, c.kernels, sample_in, c.stride, c.zero_pad);
                std::copy(gi.data().begin(), gi.data().end(),
                          g.data().begin() + static_cast<std::ptrdiff_t>(s * in_n));
              }
              return g;
            },
            [&](const Relu&) {
              Tensor g = grad;
              auto gd = g.data();
              const auto xd = x.data();
              for (std::size_t i = 0; i < gd.size(); ++i) {
                if (!(xd[i] > 0.0)) gd[i] = 0.0;
              }
              return g;
            },
            [&](const Flatten&) { return grad.reshaped(x.shape()); },
            [&](const Residual& r) {
              Tensor g = back(r.body, grad, p + 1, q, inputs, grads);
              auto gd = g.data();
              const auto skip = grad.data();
              for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += skip[i];
              return g;
            },
        },
        layers[j].op);
    grads.inputs[p] = gx;
    grad = std::move(gx);
  }
  return grad;
}

GradientSet Network::backward(const Dataset& batch, const InjectionPlan* plan) const {
  check_batch(batch);
  std::vector<Tensor> inputs(points_.size());
  std::size_t point = 0;
  Tensor out = run(layers_, batch.inputs, point, plan, inputs);

  GradientSet g;
  g.loss = mean_of(sample_losses(out, batch));
  g.inputs.resize(points_.size());
  for (const Tensor* t : parameters()) g.params.emplace_back(t->shape());

  const std::size_t m = out.dim(0);
  const std::size_t o = out.numel() / m;
  const double inv_m = 1.0 / static_cast<double>(m);
  Tensor dz(out.shape());
  const auto z = out.data();
  auto d = dz.data();
  for (std::size_t s = 0; s < m; ++s) {
    const double* row = z.data() + s * o;
    switch (loss_) {
      case LossKind::SoftmaxCrossEntropy: {
        const double mx = *std::max_element(row, row + o);
        double sum = 0.0;
        for (std::size_t c = 0; c < o; ++c) sum += std::exp(row[c] - mx);
        for (std::size_t c = 0; c < o; ++c) {
          const double p = std::exp(row[c] - mx) / sum;
          d[s * o + c] = (p - (static_cast<int>(c) == batch.labels[s] ? 1.0 : 0.0)) * inv_m;
        }
        break;
      }
      case LossKind::MeanSquaredError:
        for (std::size_t c = 0; c < o; ++c) {
          d[s * o + c] = 2.0 * (row[c] - batch.targets[s * o + c]) /
                         static_cast<double>(o) * inv_m;
        }
        break;
      case LossKind::MeanOutput:
        for (std::size_t c = 0; c < o; ++c) d[s * o + c] = inv_m / static_cast<double>(o);
        break;
    }
  }
  back(layers_, std::move(dz), 0, 0, inputs, g);
  return g;
}

}  // namespace mpq
