#include "atpnet/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include "atpnet/errors.hpp"

namespace atp {

std::string Shape::to_string() const {
  return "(" + std::to_string(dims[0]) + ", " + std::to_string(dims[1]) + ", " +
         std::to_string(dims[2]) + ", " + std::to_string(dims[3]) + ")";
}

namespace detail {

template <typename T>
std::span<T> Node<T>::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), T(0));
  return grad;
}

}  // namespace detail

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool enabled) { g_grad_enabled = enabled; }

template <typename T>
Tensor<T>::Tensor(Shape shape, bool requires_grad)
    : Tensor(shape, std::vector<T>(static_cast<std::size_t>(std::max<std::int64_t>(shape.numel(), 0)), T(0)),
             requires_grad) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) {
  for (auto d : shape.dims) {
    if (d < 0) throw ShapeError("negative extent in shape " + shape.to_string());
  }
  if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape.to_string());
  }
  node_ = std::make_shared<detail::Node<T>>();
  node_->shape = shape;
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  return Tensor(shape, std::vector<T>(static_cast<std::size_t>(shape.numel()), value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return full(Shape{1, 1, 1, 1}, value, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_node(NodePtr node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  static const Shape kEmpty{};
  return node_ ? node_->shape : kEmpty;
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  if (!node_) return {};
  return node_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node_) return {};
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().to_string());
  return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
  const Shape& s = shape();
  return node_->data[static_cast<std::size_t>(((n * s.c() + c) * s.h() + h) * s.w() + w)];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool requires_grad) {
  if (node_) node_->requires_grad = requires_grad;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return node_ && !node_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!node_) return {};
  return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  if (!node_) return {};
  return node_->grad_buffer();
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (node_) node_->grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  if (!node_) return {};
  return Tensor(node_->shape, node_->data, false);
}

template <typename T>
Tensor<T> make_op_result(Shape shape, std::vector<T> values, const std::vector<Tensor<T>>& inputs,
                         std::function<void(detail::Node<T>&)> backward_fn) {
  Tensor<T> out(shape, std::move(values), false);
  if (!GradMode::enabled()) return out;
  bool needs_grad = false;
  for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  if (!needs_grad) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.parents.reserve(inputs.size());
  for (const auto& in : inputs) node.parents.push_back(in.node());
  node.backward_fn = std::move(backward_fn);
  return out;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw GraphError("backward() requires a scalar loss, got shape " + loss.shape().to_string());
  }
  auto root = loss.node();
  if (root->backward_done) {
    throw GraphError("backward() called twice on the same graph; rebuild the forward pass first");
  }
  if (!root->requires_grad) {
    root->backward_done = true;
    return;
  }

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> visited;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node<T>* parent = node->parents[next++].get();
      if (parent && parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) {
      node->backward_fn(*node);
      // Interior gradients are no longer needed once propagated.
      if (node != root.get()) std::vector<T>().swap(node->grad);
    }
  }
  root->backward_done = true;
}

template struct detail::Node<float>;
template struct detail::Node<double>;
template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> make_op_result(Shape, std::vector<float>, const std::vector<Tensor<float>>&,
                                      std::function<void(detail::Node<float>&)>);
template Tensor<double> make_op_result(Shape, std::vector<double>, const std::vector<Tensor<double>>&,
                                       std::function<void(detail::Node<double>&)>);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace atp
