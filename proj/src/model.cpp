#include "noisyforge/model.hpp"

#include <algorithm>
#include <cmath>

#include "noisyforge/error.hpp"
#include "noisyforge/ops.hpp"
#include "noisyforge/rng.hpp"

namespace noisyforge {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require_param_shape(const Tensor& t, const Shape& expected, std::size_t index, const char* what) {
  if (t.shape() != expected) {
    throw DimensionError("layer " + std::to_string(index) + " " + what + " has shape " + shape_string(t.shape()) +
                         ", expected " + shape_string(expected));
  }
}

Shape infer_output(const Layer& layer, const Shape& in, std::size_t index) {
  const auto fail = [&](const std::string& why) -> DimensionError {
    return DimensionError("layer " + std::to_string(index) + " (" + layer_name(layer) + "): " + why +
                          " for input " + shape_string(in));
  };
  return std::visit(
      Overloaded{
          [&](const DenseLayer& d) -> Shape {
            if (in.size() != 1 || in[0] != d.in) throw fail("expects a flat input of " + std::to_string(d.in));
            require_param_shape(d.weight, {d.in, d.out}, index, "weight");
            require_param_shape(d.bias, {d.out}, index, "bias");
            return {d.out};
          },
          [&](const ConvLayer& c) -> Shape {
            if (in.size() != 3 || in[0] != c.in_channels) {
              throw fail("expects " + std::to_string(c.in_channels) + " input channels");
            }
            if (c.stride == 0 || c.kernel == 0) throw fail("kernel and stride must be positive");
            if (c.kernel > in[1] + 2 * c.padding || c.kernel > in[2] + 2 * c.padding) throw fail("kernel too large");
            require_param_shape(c.weight, {c.out_channels, c.in_channels, c.kernel, c.kernel}, index, "weight");
            require_param_shape(c.bias, {c.out_channels}, index, "bias");
            return {c.out_channels, (in[1] + 2 * c.padding - c.kernel) / c.stride + 1,
                    (in[2] + 2 * c.padding - c.kernel) / c.stride + 1};
          },
          [&](const ReluLayer&) -> Shape { return in; },
          [&](const MaxPoolLayer& p) -> Shape {
            if (in.size() != 3) throw fail("expects a C x H x W input");
            if (p.window == 0 || p.stride == 0) throw fail("window and stride must be positive");
            if (p.window > in[1] || p.window > in[2]) throw fail("window too large");
            return {in[0], (in[1] - p.window) / p.stride + 1, (in[2] - p.window) / p.stride + 1};
          },
          [&](const FlattenLayer&) -> Shape { return {shape_numel(in)}; },
      },
      layer);
}

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, RngStream stream) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.mutable_data()) v = static_cast<float>((2.0 * stream.next_uniform() - 1.0) * bound);
  t.set_requires_grad(true);
  return t;
}

Tensor zero_bias(std::size_t n) {
  Tensor t({n}, 0.0f);
  t.set_requires_grad(true);
  return t;
}

DenseLayer make_dense(std::size_t in, std::size_t out, const RngStream& root, std::size_t index) {
  return DenseLayer{in, out, kaiming_uniform({in, out}, in, root.with_layer(index)), zero_bias(out)};
}

ConvLayer make_conv(std::size_t in, std::size_t out, std::size_t k, const RngStream& root, std::size_t index) {
  return ConvLayer{in, out, k, 1, 0, kaiming_uniform({out, in, k, k}, in * k * k, root.with_layer(index)),
                   zero_bias(out)};
}

Tensor copy_param(const Tensor& t) {
  Tensor c = t.clone();
  c.set_requires_grad(t.requires_grad());
  return c;
}

}  // namespace

std::string layer_name(const Layer& layer) {
  return std::visit(Overloaded{
                        [](const DenseLayer& d) { return "Dense(" + std::to_string(d.in) + "->" + std::to_string(d.out) + ")"; },
                        [](const ConvLayer& c) {
                          return "Conv(" + std::to_string(c.in_channels) + "->" + std::to_string(c.out_channels) + ", k" +
                                 std::to_string(c.kernel) + ", s" + std::to_string(c.stride) + ", p" +
                                 std::to_string(c.padding) + ")";
                        },
                        [](const ReluLayer&) { return std::string("ReLU"); },
                        [](const MaxPoolLayer& p) {
                          return "MaxPool(" + std::to_string(p.window) + ", s" + std::to_string(p.stride) + ")";
                        },
                        [](const FlattenLayer&) { return std::string("Flatten"); },
                    },
                    layer);
}

std::vector<std::size_t> default_injection_points(const std::vector<Layer>& layers, InjectionOptions options) {
  std::vector<std::size_t> points;
  std::size_t last_dense = layers.size();
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (std::holds_alternative<DenseLayer>(layers[i])) last_dense = i;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const bool relu = std::holds_alternative<ReluLayer>(layers[i]);
    const bool pool = std::holds_alternative<MaxPoolLayer>(layers[i]);
    const bool logits = i == last_dense && i + 1 == layers.size();
    if ((relu && options.after_relu) || (pool && options.after_pool) || (logits && options.logits)) {
      points.push_back(i);
    }
  }
  return points;
}

ModelGraph::ModelGraph(Shape input_shape, std::vector<Layer> layers, std::size_t num_classes,
                       std::vector<std::size_t> injection_points)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), num_classes_(num_classes) {
  if (layers_.empty()) throw DimensionError("model has no layers");
  if (input_shape_.empty()) throw DimensionError("model input shape is empty");
  Shape current = input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    current = infer_output(layers_[i], current, i);
    shapes_.push_back(current);
  }
  if (current != Shape{num_classes_}) {
    throw DimensionError("model output " + shape_string(current) + " does not match " + std::to_string(num_classes_) +
                         " classes");
  }
  set_injection_points(std::move(injection_points));
}

void ModelGraph::set_injection_points(std::vector<std::size_t> points) {
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i] >= layers_.size()) {
      throw UsageError("injection point " + std::to_string(points[i]) + " is not a layer index");
    }
    if (i > 0 && points[i] <= points[i - 1]) throw UsageError("injection points must be strictly increasing");
  }
  injection_points_ = std::move(points);
}

std::vector<Tensor> ModelGraph::parameters() const {
  std::vector<Tensor> out;
  for (const auto& layer : layers_) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      out.push_back(d->weight);
      out.push_back(d->bias);
    } else if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      out.push_back(c->weight);
      out.push_back(c->bias);
    }
  }
  return out;
}

std::vector<std::string> ModelGraph::parameter_names() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (std::holds_alternative<DenseLayer>(layers_[i]) || std::holds_alternative<ConvLayer>(layers_[i])) {
      out.push_back("layer" + std::to_string(i) + ".weight");
      out.push_back("layer" + std::to_string(i) + ".bias");
    }
  }
  return out;
}

std::size_t ModelGraph::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

ModelGraph ModelGraph::clone() const {
  std::vector<Layer> copy;
  copy.reserve(layers_.size());
  for (const auto& layer : layers_) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      copy.emplace_back(DenseLayer{d->in, d->out, copy_param(d->weight), copy_param(d->bias)});
    } else if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      copy.emplace_back(ConvLayer{c->in_channels, c->out_channels, c->kernel, c->stride, c->padding,
                                  copy_param(c->weight), copy_param(c->bias)});
    } else {
      copy.push_back(layer);
    }
  }
  return ModelGraph(input_shape_, std::move(copy), num_classes_, injection_points_);
}

bool ModelGraph::same_architecture(const ModelGraph& other) const {
  if (input_shape_ != other.input_shape_ || num_classes_ != other.num_classes_ ||
      layers_.size() != other.layers_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layer_name(layers_[i]) != layer_name(other.layers_[i])) return false;
  return true;
}

ModelGraph build_preset(const std::string& name, const Shape& input_shape, std::size_t num_classes,
                        std::uint64_t seed, InjectionOptions options) {
  if (num_classes == 0) throw UsageError("num_classes must be positive");
  const RngStream root(seed, RngPath{Purpose::kInit, 0, 0, 0, 0});
  std::vector<Layer> layers;
  if (name == "lenet5") {
    if (input_shape.size() != 3) {
      throw UsageError("lenet5 expects a C x H x W input, got " + shape_string(input_shape));
    }
    const std::size_t c = input_shape[0];
    layers.emplace_back(make_conv(c, 6, 5, root, 0));
    layers.emplace_back(ReluLayer{});
    layers.emplace_back(MaxPoolLayer{2, 2});
    layers.emplace_back(make_conv(6, 16, 5, root, 3));
    layers.emplace_back(ReluLayer{});
    layers.emplace_back(MaxPoolLayer{2, 2});
    layers.emplace_back(FlattenLayer{});
    // Shapes after the conv stack depend on the input resolution.
    Shape s = input_shape;
    for (const auto& l : layers) s = infer_output(l, s, 0);
    const std::size_t flat = s[0];
    layers.emplace_back(make_dense(flat, 120, root, 7));
    layers.emplace_back(ReluLayer{});
    layers.emplace_back(make_dense(120, 84, root, 9));
    layers.emplace_back(ReluLayer{});
    layers.emplace_back(make_dense(84, num_classes, root, 11));
  } else if (name == "mlp2") {
    std::size_t index = 0;
    if (input_shape.size() != 1) {
      layers.emplace_back(FlattenLayer{});
      ++index;
    }
    const std::size_t flat = shape_numel(input_shape);
    layers.emplace_back(make_dense(flat, 256, root, index));
    layers.emplace_back(ReluLayer{});
    layers.emplace_back(make_dense(256, num_classes, root, index + 2));
  } else {
    throw UsageError("unknown model preset '" + name + "' (expected lenet5 or mlp2)");
  }
  auto points = default_injection_points(layers, options);
  return ModelGraph(input_shape, std::move(layers), num_classes, std::move(points));
}

Tensor forward(const ModelGraph& model, const Tensor& batch, const NoiseContext* noise, Tape* tape) {
  Shape expected{batch.rank() > 0 ? batch.dim(0) : 0};
  expected.insert(expected.end(), model.input_shape().begin(), model.input_shape().end());
  if (batch.shape() != expected) {
    throw DimensionError("forward: batch " + shape_string(batch.shape()) + " does not match model input " +
                         shape_string(model.input_shape()));
  }
  const std::size_t n = batch.dim(0);
  const bool noisy = noise != nullptr && noise->rows() > 0;
  if (noisy && noise->rows() != n) {
    throw DimensionError("forward: noise context has " + std::to_string(noise->rows()) + " rows for a batch of " +
                         std::to_string(n));
  }
  const auto& points = model.injection_points();
  auto next_point = points.begin();

  Tensor x = batch;
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const auto& layer = model.layers()[i];
    x = std::visit(Overloaded{
                       [&](const DenseLayer& d) {
                         return ops::add_bias(ops::matmul(x, d.weight, tape), d.bias, tape);
                       },
                       [&](const ConvLayer& c) {
                         return ops::add_channel_bias(ops::conv2d(x, c.weight, c.stride, c.padding, tape), c.bias,
                                                      tape);
                       },
                       [&](const ReluLayer&) { return ops::relu(x, tape); },
                       [&](const MaxPoolLayer& p) { return ops::max_pool2d(x, p.window, p.stride, tape); },
                       [&](const FlattenLayer&) {
                         return ops::reshape(x, Shape{n, shape_numel(model.output_shape(i))}, tape);
                       },
                   },
                   layer);
    if (next_point != points.end() && *next_point == i) {
      ++next_point;
      // Safe in place: no op in the engine reads its own output during
      // backward, so the recorded gradients are those of x + constant.
      if (noisy) inject_noise(x, *noise, i);
    }
  }
  return x;
}

std::vector<int> predict_labels(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("predict_labels: logits must be N x K, got " + shape_string(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  auto z = logits.data();
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = z.data() + i * k;
    out[i] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

double predict_accuracy(const Tensor& logits, std::span<const int> labels) {
  const auto predicted = predict_labels(logits);
  if (predicted.size() != labels.size()) {
    throw DimensionError("predict_accuracy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(predicted.size()) + " rows");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace noisyforge
