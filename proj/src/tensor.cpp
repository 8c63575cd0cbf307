#include "noisyforge/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "noisyforge/error.hpp"

namespace noisyforge {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

struct Tensor::Impl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;
  bool requires_grad = false;
  // Index of the producing node on `tape`, or -1 for leaves.
  const Tape* tape = nullptr;
  std::ptrdiff_t node = -1;
};

Tensor::Tensor() : impl_(std::make_shared<Impl>()) { impl_->data.assign(1, 0.0f); }

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<Impl>()) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor shape " + shape_string(shape) + " has a zero dimension");
  }
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : impl_(std::make_shared<Impl>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor shape " + shape_string(shape) + " has a zero dimension");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(impl_->shape));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<const float> Tensor::data() const { return impl_->data; }
std::span<float> Tensor::mutable_data() { return impl_->data; }

float Tensor::item() const {
  if (impl_->data.size() != 1) {
    throw UsageError("item() requires a single-element tensor, got " + shape_string(impl_->shape));
  }
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool value) { impl_->requires_grad = value; }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const float> Tensor::grad() const { return impl_->grad; }

std::span<float> Tensor::grad_buffer() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad;
}

void Tensor::zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f); }

Tensor Tensor::clone() const {
  Tensor copy;
  copy.impl_->shape = impl_->shape;
  copy.impl_->data = impl_->data;
  return copy;
}

void Tape::record(std::string_view op, std::vector<Tensor> inputs, Tensor output, BackwardFn backward) {
  const auto index = static_cast<std::ptrdiff_t>(nodes_.size());
  for (const auto& in : inputs) {
    if (in.impl_->tape == this && in.impl_->node >= index) {
      throw UsageError("tape node for " + std::string(op) + " consumes a tensor created later");
    }
  }
  output.impl_->tape = this;
  output.impl_->node = index;
  output.impl_->requires_grad = true;
  nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (loss.impl_->tape != this || loss.impl_->node < 0) {
    throw UsageError("backward: loss was not produced on this tape");
  }
  Tensor seed = loss;
  seed.grad_buffer()[0] += 1.0f;
  for (auto i = loss.impl_->node; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.output.has_grad()) continue;  // not reachable from the loss
    n.backward();
  }
}

void Tape::clear() {
  for (auto& n : nodes_) {
    n.output.impl_->tape = nullptr;
    n.output.impl_->node = -1;
  }
  nodes_.clear();
}

}  // namespace noisyforge
