#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace eqsae::num {

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParamError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Dims = std::vector<std::size_t>;

std::size_t element_count(const Dims& dims);
std::string dims_to_string(const Dims& dims);

namespace detail {

template <typename T>
struct Node {
  Dims dims;
  std::vector<T> value;
  std::vector<T> grad;  // empty until backward reaches this node
  bool is_param = false;
  bool needs_grad = false;     // is_param or has a param ancestor
  bool backward_done = false;  // set on the node backward() ran from
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  std::size_t size() const { return value.size(); }
  T* ensure_grad();  // allocates and zeroes on first use
};

}  // namespace detail

// Value-semantic handle to an autograd node; copies share the node. Graphs
// are built by the free-function ops below and dropped when the last handle
// goes away. Parameters are leaves that outlive the graphs built on them.
// A whole graph uses one scalar type; float and double never mix.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Dims dims);
  static Tensor full(Dims dims, T value);
  static Tensor from_data(Dims dims, std::vector<T> data);
  // Leaf that collects gradients.
  static Tensor param(Dims dims, std::vector<T> data);

  bool valid() const { return node_ != nullptr; }
  const Dims& dims() const { return node_->dims; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const T> values() const { return {node_->value.data(), node_->value.size()}; }
  // In-place mutation; meant for optimizer updates, IO and test probes on
  // leaves, not for nodes inside a live graph.
  std::span<T> values_mut() { return {node_->value.data(), node_->value.size()}; }

  bool is_param() const { return node_->is_param; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const;
  void clear_grad() { node_->grad.clear(); }

  T scalar() const;
  bool all_finite() const;
  void check_finite(const std::string& what) const;

  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

// y[i,j] = sum_k w[j,k] * x[i,k] + b[j];  x: [batch, in], w: [out, in], b: [out].
template <typename T>
Tensor<T> apply_linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// Cross-correlation with zero padding. x: [batch, c_in, h, w],
// kernel: [c_out, c_in, kh, kw].
template <typename T>
Tensor<T> apply_conv2d(const Tensor<T>& x, const Tensor<T>& kernel, int stride, int pad);

// Scatter-accumulate transposed convolution. x: [batch, c_in, h, w],
// kernel: [c_in, c_out, kh, kw]. Exact adjoint of apply_conv2d for the same
// kernel memory and matching stride/pad.
template <typename T>
Tensor<T> apply_conv_transpose2d(const Tensor<T>& x, const Tensor<T>& kernel,
                                 int stride, int pad, int out_pad);

// Elementwise max(0, x); subgradient at 0 is 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& x);

// Keeps the k largest entries per row by value (ties toward the lowest
// index), zeroes the rest. x: [batch, n]. Gradients flow only through kept
// entries.
template <typename T>
Tensor<T> topk(const Tensor<T>& x, int k);

// Mean of squared elementwise differences; returns a scalar node.
template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b);

// Same data, new dims; element counts must match.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Dims dims);

// Sum of scalar nodes; lets a step objective with several terms reach
// backward() as a single root.
template <typename T>
Tensor<T> sum_scalars(const std::vector<Tensor<T>>& terms);

// Reverse-mode sweep from a scalar loss. Populates grad buffers of every
// reachable node that needs one. Running twice from the same node without
// rebuilding the graph is an error, as is a loss with no parameter anywhere
// upstream.
template <typename T>
void backward(const Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace eqsae::num
