#pragma once

// Dense fp64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle to a graph node. Ops create new nodes and, when
// gradients are enabled and any input requires them, link the result to its
// inputs together with a backward rule. There is no global tape: the graph is
// owned by the tensors themselves, so independent workers never share state.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stmrgnn/random.hpp"

namespace stmrgnn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad();
  bool is_leaf() const { return inputs.empty(); }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t size() const;

  std::span<const double> data() const;
  // Writable view of a leaf's values (parameter updates, test fixtures).
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  // Gradient buffer, zeros for a requires_grad leaf that was not reached.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Same values, no history.
  Tensor detach() const;
  Tensor clone() const;
  Tensor reshape(Shape shape) const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_op_result(std::string_view, Shape, std::vector<double>, std::initializer_list<const Tensor*>,
                               std::function<void(detail::Node&)>);

  std::shared_ptr<detail::Node> node_;
};

// Builds an op output node. Checks values are finite, records inputs and the
// backward rule only when gradients are enabled and some input requires grad.
Tensor make_op_result(std::string_view op, Shape shape, std::vector<double> values,
                      std::initializer_list<const Tensor*> inputs, std::function<void(detail::Node&)> backward);

// Gradient recording switch, per thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Recorded op nodes reachable from a scalar loss, in topological order
// (inputs before outputs).
class Tape {
 public:
  static Tape record(const Tensor& loss);

  const std::vector<detail::Node*>& nodes() const { return nodes_; }
  bool empty() const { return nodes_.empty(); }
  // Seeds d(loss)/d(loss) = 1 and applies every backward rule once, in reverse order.
  void backward();

 private:
  Tensor loss_;
  std::vector<detail::Node*> nodes_;
};

void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Ops. Shapes are row-major; "axis" arguments index into the shape.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Euclidean norm over the last axis; result drops that axis.
Tensor l2_norm_last_axis(const Tensor& a);

// [p x q] . [q x r]
Tensor matmul(const Tensor& a, const Tensor& b);
// [u x p x q] . [u x q x r] -> [u x p x r], slice by slice.
Tensor batch_matmul(const Tensor& a, const Tensor& b);

// Valid (unpadded) 1-D convolution over the last axis.
// x: [nodes x c_in x time], kernel: [c_out x c_in x k], bias: [c_out] or undefined.
// Output step t reads input steps t .. t+k-1.
Tensor causal_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias);

// Multi-relation generalized graph convolution, before the activation:
//   out[b, r, m, o, l] = sum_{n, c} adj[r, m, n] * h[b, n, c, l] * w[r, c, o] + bias[o]
// h: [batch x N_src x c_in x time], adj: [u x N_dst x N_src], w: [u x c_in x c_out],
// bias: [c_out]. Output: [batch x u x N_dst x c_out x time].
Tensor graph_conv(const Tensor& h, const Tensor& adj, const Tensor& w, const Tensor& bias);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

// Relation attention logits. z: [batch x R x N x c x time], w: [R*c x 1], b: [1].
//   out[b, r, n, l] = sum_o z[b, r, n, o, l] * w[r*c + o] + b
Tensor relation_scores(const Tensor& z, const Tensor& w, const Tensor& b);

// Weighted sum over the relation axis. z: [batch x R x N x c x time],
// weights: [batch x R x N x time] -> [batch x N x c x time].
Tensor relation_mix(const Tensor& z, const Tensor& weights);

Tensor softmax(const Tensor& x, std::size_t axis);

// Normalizes along `axis` to zero mean / unit variance with eps in the
// denominator, then applies per-position gain and offset (both [shape[axis]]).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, std::size_t axis,
                  double eps = 1e-5);

// Inverted dropout; identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);

}  // namespace stmrgnn
