#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "noisyforge/noise.hpp"
#include "noisyforge/tensor.hpp"

namespace noisyforge {

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
};

struct ConvLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  Tensor weight;  // [out_channels x in_channels x kernel x kernel]
  Tensor bias;    // [out_channels]
};

struct ReluLayer {};

struct MaxPoolLayer {
  std::size_t window = 2;
  std::size_t stride = 2;
};

struct FlattenLayer {};

using Layer = std::variant<DenseLayer, ConvLayer, ReluLayer, MaxPoolLayer, FlattenLayer>;

std::string layer_name(const Layer& layer);

// Where noise is added. Pooling outputs and logits are switches because the
// placement between layers leaves them open.
struct InjectionOptions {
  bool after_relu = true;
  bool after_pool = false;
  bool logits = true;
};

std::vector<std::size_t> default_injection_points(const std::vector<Layer>& layers, InjectionOptions options);

/// Ordered layer list plus the layer indices after which noise is injected.
///
/// Copies share parameter storage (Tensor is a handle); clone() gives an
/// independent model. Construction validates that layer shapes compose and
/// that the last layer produces `num_classes` logits.
class ModelGraph {
 public:
  ModelGraph(Shape input_shape, std::vector<Layer> layers, std::size_t num_classes,
             std::vector<std::size_t> injection_points);

  const Shape& input_shape() const { return input_shape_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t num_classes() const { return num_classes_; }
  const std::vector<std::size_t>& injection_points() const { return injection_points_; }
  void set_injection_points(std::vector<std::size_t> points);

  // Per-sample output shape of layer `index`.
  const Shape& output_shape(std::size_t index) const { return shapes_.at(index); }

  std::vector<Tensor> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::size_t parameter_count() const;

  ModelGraph clone() const;

  // Same layer kinds and hyperparameters, input shape and class count.
  bool same_architecture(const ModelGraph& other) const;

 private:
  Shape input_shape_;
  std::vector<Layer> layers_;
  std::size_t num_classes_;
  std::vector<std::size_t> injection_points_;
  std::vector<Shape> shapes_;
};

// "lenet5" or "mlp2". Parameters are Kaiming-uniform, biases zero, all drawn
// from streams derived from `seed`.
ModelGraph build_preset(const std::string& name, const Shape& input_shape, std::size_t num_classes,
                        std::uint64_t seed, InjectionOptions options = {});

// Logits for `batch` [N x input_shape...]. With a noise context, each
// injection point adds that row's noise to the activation in place; the noise
// never enters the tape, so gradients flow through injection points as if
// the noise were a constant input.
Tensor forward(const ModelGraph& model, const Tensor& batch, const NoiseContext* noise = nullptr,
               Tape* tape = nullptr);

// Argmax per row; ties go to the lowest class index.
std::vector<int> predict_labels(const Tensor& logits);
double predict_accuracy(const Tensor& logits, std::span<const int> labels);

}  // namespace noisyforge
