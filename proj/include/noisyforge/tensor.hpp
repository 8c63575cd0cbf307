#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace noisyforge {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tape;

/// Dense row-major float32 array with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage. Use clone() for
/// an independent copy. A tensor that does not require grad is treated as
/// immutable once handed to an op, so it may be shared across threads.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float value) { return Tensor(Shape{}, std::vector<float>{value}); }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const float> data() const;
  std::span<float> mutable_data();
  float item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  std::span<const float> grad() const;
  // Returns the gradient buffer, allocating it zero-filled on first use.
  // Const like the rest of the handle: the buffer lives in shared storage.
  std::span<float> grad_buffer() const;
  void zero_grad();

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  friend class Tape;
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

/// Append-only record of differentiable ops, replayed in reverse by
/// backward(). Each node's inputs were created before the node itself, so
/// construction order is a valid topological order.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  struct Node {
    std::string_view op;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  Tape() = default;
  ~Tape() { clear(); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers `output` as produced by `op` from `inputs`. `backward` reads
  // output.grad() and accumulates into the inputs' grad buffers.
  void record(std::string_view op, std::vector<Tensor> inputs, Tensor output, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and runs every node in reverse order.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t index) const { return nodes_.at(index); }
  void clear();

 private:
  std::vector<Node> nodes_;
};

}  // namespace noisyforge
