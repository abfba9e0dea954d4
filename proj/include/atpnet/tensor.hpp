#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace atp {

// Extents of a rank-4 tensor in (batch, channel, height, width) order.
struct Shape {
  std::array<std::int64_t, 4> dims{0, 0, 0, 0};

  constexpr Shape() = default;
  constexpr Shape(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w)
      : dims{n, c, h, w} {}

  constexpr std::int64_t n() const { return dims[0]; }
  constexpr std::int64_t c() const { return dims[1]; }
  constexpr std::int64_t h() const { return dims[2]; }
  constexpr std::int64_t w() const { return dims[3]; }
  constexpr std::int64_t numel() const { return dims[0] * dims[1] * dims[2] * dims[3]; }

  constexpr bool operator==(const Shape&) const = default;

  std::string to_string() const;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  // Empty until a gradient has been accumulated.
  std::vector<T> grad;
  bool requires_grad = false;
  bool backward_done = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  // Returns the gradient buffer, allocating zeros on first use.
  std::span<T> grad_buffer();
};

}  // namespace detail

// Thread-local switch for graph recording. Inference paths disable it so
// forward passes on shared parameters never touch gradient state.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool enabled);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Dense rank-4 array with reverse-mode differentiation. Copies share the
// underlying node, like a handle; use detach() for an independent value.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);
  static Tensor from_node(NodePtr node);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::int64_t numel() const { return shape().numel(); }

  std::span<const T> data() const;
  // Writable view of the values. Only meaningful for leaves; writing into an
  // intermediate does not propagate to anything already computed from it.
  std::span<T> mutable_data();
  T item() const;
  T at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;

  bool requires_grad() const;
  void set_requires_grad(bool requires_grad);
  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  // Copy of the values with no graph attached.
  Tensor detach() const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> values(data().begin(), data().end());
    return Tensor<U>(shape(), std::move(values));
  }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Builds an op output. The backward closure receives the output node; its
// gradient is populated and it must accumulate into node.parents. Parents
// are only recorded when grad mode is on and at least one input needs grad.
template <typename T>
Tensor<T> make_op_result(Shape shape, std::vector<T> values,
                         const std::vector<Tensor<T>>& inputs,
                         std::function<void(detail::Node<T>&)> backward_fn);

// Populates gradients on every leaf reachable from a scalar loss. A graph
// can be differentiated once; a second call raises GraphError.
template <typename T>
void backward(const Tensor<T>& loss);

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace atp
