#include "stmrgnn/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "stmrgnn/errors.hpp"

namespace stmrgnn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

thread_local bool t_grad_enabled = true;

void require_ndim(const Tensor& t, std::size_t n, std::string_view op, std::string_view arg) {
  if (!t.defined()) throw ContractError(std::string(op) + ": " + std::string(arg) + " is undefined");
  if (t.ndim() != n) {
    throw DimensionError(std::string(op) + ": " + std::string(arg) + " must have " + std::to_string(n) +
                         " dims, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, std::string_view op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename F>
Tensor unary(const Tensor& a, std::string_view op, F forward, std::function<void(detail::Node&)> bw) {
  std::vector<double> out(a.size());
  const auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(in[i]);
  return make_op_result(op, a.shape(), std::move(out), {&a}, std::move(bw));
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? " x " : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

// ---------------------------------------------------------------------------
// Tensor handle

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_size(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                         " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  if (requires_grad) node->ensure_grad();
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::size() const { return node_ ? node_->value.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!node_) throw ContractError("undefined tensor");
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw ContractError("undefined tensor");
  if (!node_->is_leaf()) throw ContractError("only leaf tensors are writable");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank does not match " + shape_str(s));
  std::size_t flat = 0;
  std::size_t i = 0;
  for (std::size_t idx : index) {
    if (idx >= s[i]) throw DimensionError("index out of range for " + shape_str(s));
    flat = flat * s[i] + idx;
    ++i;
  }
  return node_->value[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!node_) throw ContractError("undefined tensor");
  if (!node_->is_leaf()) throw ContractError("requires_grad can only be set on leaves");
  node_->requires_grad = flag;
  if (flag) node_->ensure_grad();
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

std::span<const double> Tensor::grad() const {
  if (!node_) throw ContractError("undefined tensor");
  if (!has_grad()) throw ContractError("tensor has no gradient buffer");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!node_) throw ContractError("undefined tensor");
  return node_->ensure_grad();
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

Tensor Tensor::clone() const { return from(shape(), node_->value, requires_grad() && node_->is_leaf()); }

Tensor Tensor::reshape(Shape new_shape) const {
  if (shape_size(new_shape) != size()) {
    throw DimensionError("reshape: cannot view " + shape_str(shape()) + " as " + shape_str(new_shape));
  }
  return make_op_result("reshape", std::move(new_shape), node_->value, {this}, [](detail::Node& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor make_op_result(std::string_view op, Shape shape, std::vector<double> values,
                      std::initializer_list<const Tensor*> inputs, std::function<void(detail::Node&)> backward) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value in output");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  bool any = false;
  if (t_grad_enabled) {
    for (const Tensor* t : inputs) any = any || (t && t->requires_grad());
  }
  if (any) {
    node->requires_grad = true;
    for (const Tensor* t : inputs) {
      node->inputs.push_back(t && t->defined() ? t->node_ptr() : std::make_shared<detail::Node>());
    }
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Tape

Tape Tape::record(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined loss");
  if (loss.size() != 1) throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  Tape tape;
  tape.loss_ = loss;
  if (!loss.requires_grad()) return tape;
  // Iterative post-order DFS.
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node(), 0}};
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && !visited.contains(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void Tape::backward() {
  if (nodes_.empty()) return;
  for (detail::Node* n : nodes_) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
    else n->ensure_grad();
  }
  nodes_.back()->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

void backward(const Tensor& loss) { Tape::record(loss).backward(); }

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_op_result("add", a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_op_result("sub", a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    const double sign[2] = {1.0, -1.0};
    for (std::size_t k = 0; k < 2; ++k) {
      auto& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      auto& g = in.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_op_result("mul", a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) {
      auto& g = A.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      auto& g = B.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, "scale", [factor](double v) { return v * factor; }, [factor](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor relu(const Tensor& a) {
  return unary(a, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in.value[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  auto f = [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return unary(a, "sigmoid", f, [](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = self.value[i];
      g[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Tensor abs(const Tensor& a) {
  return unary(a, "abs", [](double v) { return std::fabs(v); }, [](detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = in.value[i];
      g[i] += self.grad[i] * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
    }
  });
}

Tensor square(const Tensor& a) {
  return unary(a, "square", [](double v) { return v * v; }, [](detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * in.value[i] * self.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  const auto x = a.data();
  double s = 0.0;
  for (double v : x) s += v;
  return make_op_result("sum", {1}, {s}, {&a}, [](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor l2_norm_last_axis(const Tensor& a) {
  if (!a.defined() || a.ndim() == 0) throw DimensionError("l2_norm_last_axis: need at least one axis");
  const std::size_t d = a.shape().back();
  const std::size_t rows = a.size() / d;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(rows);
  const auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += x[r * d + j] * x[r * d + j];
    out[r] = std::sqrt(s);
  }
  return make_op_result("l2_norm", std::move(out_shape), std::move(out), {&a}, [d](detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t r = 0; r < self.value.size(); ++r) {
      const double n = self.value[r];
      if (n == 0.0) continue;  // subgradient 0 at the origin
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += self.grad[r] * in.value[r * d + j] / n;
    }
  });
}

// ---------------------------------------------------------------------------
// Matrix products

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_ndim(a, 2, "matmul", "a");
  require_ndim(b, 2, "matmul", "b");
  const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
  if (b.dim(0) != q) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(p * r);
  MapMat(out.data(), p, r).noalias() = ConstMapMat(a.data().data(), p, q) * ConstMapMat(b.data().data(), q, r);
  return make_op_result("matmul", {p, r}, std::move(out), {&a, &b}, [p, q, r](detail::Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    ConstMapMat G(self.grad.data(), p, r);
    if (A.requires_grad) {
      MapMat(A.ensure_grad().data(), p, q).noalias() += G * ConstMapMat(B.value.data(), q, r).transpose();
    }
    if (B.requires_grad) {
      MapMat(B.ensure_grad().data(), q, r).noalias() += ConstMapMat(A.value.data(), p, q).transpose() * G;
    }
  });
}

Tensor batch_matmul(const Tensor& a, const Tensor& b) {
  require_ndim(a, 3, "batch_matmul", "a");
  require_ndim(b, 3, "batch_matmul", "b");
  const std::size_t u = a.dim(0), p = a.dim(1), q = a.dim(2), r = b.dim(2);
  if (b.dim(0) != u || b.dim(1) != q) {
    throw DimensionError("batch_matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(u * p * r);
  for (std::size_t i = 0; i < u; ++i) {
    MapMat(out.data() + i * p * r, p, r).noalias() =
        ConstMapMat(a.data().data() + i * p * q, p, q) * ConstMapMat(b.data().data() + i * q * r, q, r);
  }
  return make_op_result("batch_matmul", {u, p, r}, std::move(out), {&a, &b}, [u, p, q, r](detail::Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    for (std::size_t i = 0; i < u; ++i) {
      ConstMapMat G(self.grad.data() + i * p * r, p, r);
      if (A.requires_grad) {
        MapMat(A.ensure_grad().data() + i * p * q, p, q).noalias() +=
            G * ConstMapMat(B.value.data() + i * q * r, q, r).transpose();
      }
      if (B.requires_grad) {
        MapMat(B.ensure_grad().data() + i * q * r, q, r).noalias() +=
            ConstMapMat(A.value.data() + i * p * q, p, q).transpose() * G;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Temporal convolution (im2col + one GEMM)

namespace {

// cols[(s*Lo + t), k*C + c] = x[s, c, t + k]
void im2col(const double* x, std::size_t S, std::size_t C, std::size_t L, std::size_t K, double* cols) {
  const std::size_t Lo = L - K + 1;
  const std::size_t width = C * K;
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* row = x + (s * C + c) * L;
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t t = 0; t < Lo; ++t) cols[(s * Lo + t) * width + k * C + c] = row[t + k];
      }
    }
  }
}

}  // namespace

Tensor causal_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  require_ndim(x, 3, "causal_conv1d", "x");
  require_ndim(kernel, 3, "causal_conv1d", "kernel");
  const std::size_t S = x.dim(0), C = x.dim(1), L = x.dim(2);
  const std::size_t O = kernel.dim(0), K = kernel.dim(2);
  if (kernel.dim(1) != C) {
    throw DimensionError("causal_conv1d: input " + shape_str(x.shape()) + " incompatible with kernel " +
                         shape_str(kernel.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{O}) {
    throw DimensionError("causal_conv1d: bias " + shape_str(bias.shape()) + " does not match c_out " +
                         std::to_string(O));
  }
  if (L < K) {
    throw SequenceTooShortError("causal_conv1d: sequence length " + std::to_string(L) + " shorter than kernel " +
                                std::to_string(K));
  }
  const std::size_t Lo = L - K + 1;
  const std::size_t width = C * K;

  // wcol[k*C + c, o] = kernel[o, c, k]
  auto pack_kernel = [=](const double* w) {
    RowMat wcol(width, O);
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t k = 0; k < K; ++k) wcol(k * C + c, o) = w[(o * C + c) * K + k];
    return wcol;
  };

  RowMat cols(S * Lo, width);
  im2col(x.data().data(), S, C, L, K, cols.data());
  RowMat y = cols * pack_kernel(kernel.data().data());

  std::vector<double> out(S * O * Lo);
  const double* b = bias.defined() ? bias.data().data() : nullptr;
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t t = 0; t < Lo; ++t)
      for (std::size_t o = 0; o < O; ++o) out[(s * O + o) * Lo + t] = y(s * Lo + t, o) + (b ? b[o] : 0.0);

  return make_op_result(
      "causal_conv1d", {S, O, Lo}, std::move(out), {&x, &kernel, &bias},
      [=](detail::Node& self) {
        auto& X = *self.inputs[0];
        auto& W = *self.inputs[1];
        auto& B = *self.inputs[2];
        RowMat g(S * Lo, O);
        for (std::size_t s = 0; s < S; ++s)
          for (std::size_t o = 0; o < O; ++o)
            for (std::size_t t = 0; t < Lo; ++t) g(s * Lo + t, o) = self.grad[(s * O + o) * Lo + t];
        if (B.requires_grad) {
          auto& gb = B.ensure_grad();
          for (std::size_t o = 0; o < O; ++o) gb[o] += g.col(o).sum();
        }
        if (W.requires_grad) {
          RowMat xcols(S * Lo, width);
          im2col(X.value.data(), S, C, L, K, xcols.data());
          RowMat gw = xcols.transpose() * g;
          auto& gk = W.ensure_grad();
          for (std::size_t o = 0; o < O; ++o)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t k = 0; k < K; ++k) gk[(o * C + c) * K + k] += gw(k * C + c, o);
        }
        if (X.requires_grad) {
          RowMat gcols = g * pack_kernel(W.value.data()).transpose();
          auto& gx = X.ensure_grad();
          for (std::size_t s = 0; s < S; ++s)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t k = 0; k < K; ++k)
                for (std::size_t t = 0; t < Lo; ++t)
                  gx[(s * C + c) * L + t + k] += gcols(s * Lo + t, k * C + c);
        }
      });
}

// ---------------------------------------------------------------------------
// Graph convolution

Tensor graph_conv(const Tensor& h, const Tensor& adj, const Tensor& w, const Tensor& bias) {
  require_ndim(h, 4, "graph_conv", "features");
  require_ndim(adj, 3, "graph_conv", "adjacency");
  require_ndim(w, 3, "graph_conv", "weight");
  const std::size_t B = h.dim(0), N = h.dim(1), C = h.dim(2), L = h.dim(3);
  const std::size_t U = adj.dim(0), M = adj.dim(1);
  const std::size_t O = w.dim(2);
  if (adj.dim(2) != N) {
    throw DimensionError("graph_conv: adjacency " + shape_str(adj.shape()) + " does not match source features " +
                         shape_str(h.shape()));
  }
  if (w.dim(0) != U || w.dim(1) != C) {
    throw DimensionError("graph_conv: weight " + shape_str(w.shape()) + " incompatible with adjacency " +
                         shape_str(adj.shape()) + " and features " + shape_str(h.shape()));
  }
  if (!bias.defined() || bias.shape() != Shape{O}) {
    throw DimensionError("graph_conv: bias must have shape [" + std::to_string(O) + "]");
  }

  // ht[(b*N + n)*L + l, c] = h[b, n, c, l]
  auto transpose_features = [=](const double* src) {
    RowMat ht(B * N * L, C);
    for (std::size_t bn = 0; bn < B * N; ++bn)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t l = 0; l < L; ++l) ht(bn * L + l, c) = src[(bn * C + c) * L + l];
    return ht;
  };
  const RowMat ht = transpose_features(h.data().data());
  const double* A = adj.data().data();
  const double* bptr = bias.data().data();

  std::vector<double> out(B * U * M * O * L);
  for (std::size_t r = 0; r < U; ++r) {
    // y rows ordered (b, n, l) -> per b a [N x L*O] row-major block.
    const RowMat y = ht * ConstMapMat(w.data().data() + r * C * O, C, O);
    ConstMapMat Ar(A + r * M * N, M, N);
    for (std::size_t b = 0; b < B; ++b) {
      const RowMat p = Ar * ConstMapMat(y.data() + b * N * L * O, N, L * O);
      double* dst = out.data() + ((b * U + r) * M) * O * L;
      for (std::size_t m = 0; m < M; ++m)
        for (std::size_t l = 0; l < L; ++l)
          for (std::size_t o = 0; o < O; ++o) dst[(m * O + o) * L + l] = p(m, l * O + o) + bptr[o];
    }
  }

  return make_op_result(
      "graph_conv", {B, U, M, O, L}, std::move(out), {&h, &adj, &w, &bias},
      [=](detail::Node& self) {
        auto& H = *self.inputs[0];
        auto& Adj = *self.inputs[1];
        auto& W = *self.inputs[2];
        auto& Bias = *self.inputs[3];
        const RowMat hts = transpose_features(H.value.data());
        RowMat dht = RowMat::Zero(B * N * L, C);
        for (std::size_t r = 0; r < U; ++r) {
          ConstMapMat Ar(Adj.value.data() + r * M * N, M, N);
          ConstMapMat Wr(W.value.data() + r * C * O, C, O);
          RowMat dy(B * N * L, O);
          RowMat y;
          if (Adj.requires_grad) y = hts * Wr;
          for (std::size_t b = 0; b < B; ++b) {
            RowMat g(M, L * O);
            const double* src = self.grad.data() + ((b * U + r) * M) * O * L;
            for (std::size_t m = 0; m < M; ++m)
              for (std::size_t o = 0; o < O; ++o)
                for (std::size_t l = 0; l < L; ++l) g(m, l * O + o) = src[(m * O + o) * L + l];
            if (Bias.requires_grad) {
              auto& gb = Bias.ensure_grad();
              for (std::size_t m = 0; m < M; ++m)
                for (std::size_t l = 0; l < L; ++l)
                  for (std::size_t o = 0; o < O; ++o) gb[o] += g(m, l * O + o);
            }
            if (Adj.requires_grad) {
              MapMat(Adj.ensure_grad().data() + r * M * N, M, N).noalias() +=
                  g * ConstMapMat(y.data() + b * N * L * O, N, L * O).transpose();
            }
            MapMat(dy.data() + b * N * L * O, N, L * O).noalias() = Ar.transpose() * g;
          }
          if (W.requires_grad) {
            MapMat(W.ensure_grad().data() + r * C * O, C, O).noalias() += hts.transpose() * dy;
          }
          if (H.requires_grad) dht.noalias() += dy * Wr.transpose();
        }
        if (H.requires_grad) {
          auto& gh = H.ensure_grad();
          for (std::size_t bn = 0; bn < B * N; ++bn)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t l = 0; l < L; ++l) gh[(bn * C + c) * L + l] += dht(bn * L + l, c);
        }
      });
}

// ---------------------------------------------------------------------------
// Shape ops

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(first));
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisSplit os = split_axis(out_shape, axis, "concat");
  std::vector<double> out(shape_size(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].data();
    const std::size_t chunk = extents[k] * os.inner;
    for (std::size_t o = 0; o < os.outer; ++o) {
      std::copy_n(src.data() + o * chunk, chunk, out.data() + o * os.extent * os.inner + offset * os.inner);
    }
    offset += extents[k];
  }
  // make_op_result takes an initializer_list; wire variable-arity inputs by hand.
  Tensor result = make_op_result("concat", out_shape, std::move(out), {}, {});
  bool any = false;
  if (grad_enabled()) {
    for (const auto& p : parts) any = any || p.requires_grad();
  }
  if (any) {
    detail::Node* node = result.node();
    node->requires_grad = true;
    for (const auto& p : parts) node->inputs.push_back(p.node_ptr());
    node->backward = [os, extents](detail::Node& self) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < self.inputs.size(); ++k) {
        auto& in = *self.inputs[k];
        const std::size_t chunk = extents[k] * os.inner;
        if (in.requires_grad) {
          auto& g = in.ensure_grad();
          for (std::size_t o = 0; o < os.outer; ++o) {
            const double* src = self.grad.data() + o * os.extent * os.inner + off * os.inner;
            for (std::size_t i = 0; i < chunk; ++i) g[o * chunk + i] += src[i];
          }
        }
        off += extents[k];
      }
    };
  }
  return result;
}

// ---------------------------------------------------------------------------
// Relation attention

Tensor relation_scores(const Tensor& z, const Tensor& w, const Tensor& b) {
  require_ndim(z, 5, "relation_scores", "features");
  const std::size_t B = z.dim(0), R = z.dim(1), N = z.dim(2), C = z.dim(3), L = z.dim(4);
  if (w.shape() != Shape{R * C, 1}) {
    throw DimensionError("relation_scores: attention weight " + shape_str(w.shape()) + " does not match " +
                         std::to_string(R) + " relations x " + std::to_string(C) + " channels");
  }
  if (b.shape() != Shape{1}) throw DimensionError("relation_scores: bias must be a scalar");
  std::vector<double> out(B * R * N * L);
  const auto zx = z.data(), wx = w.data();
  const double bias = b.item();
  for (std::size_t br = 0; br < B * R; ++br) {
    const std::size_t r = br % R;
    for (std::size_t n = 0; n < N; ++n) {
      double* dst = out.data() + (br * N + n) * L;
      for (std::size_t l = 0; l < L; ++l) dst[l] = bias;
      for (std::size_t c = 0; c < C; ++c) {
        const double wc = wx[r * C + c];
        const double* src = zx.data() + ((br * N + n) * C + c) * L;
        for (std::size_t l = 0; l < L; ++l) dst[l] += wc * src[l];
      }
    }
  }
  return make_op_result("relation_scores", {B, R, N, L}, std::move(out), {&z, &w, &b}, [=](detail::Node& self) {
    auto& Z = *self.inputs[0];
    auto& W = *self.inputs[1];
    auto& Bs = *self.inputs[2];
    if (Bs.requires_grad) {
      double s = 0.0;
      for (double g : self.grad) s += g;
      Bs.ensure_grad()[0] += s;
    }
    std::vector<double>* gz = Z.requires_grad ? &Z.ensure_grad() : nullptr;
    std::vector<double>* gw = W.requires_grad ? &W.ensure_grad() : nullptr;
    for (std::size_t br = 0; br < B * R; ++br) {
      const std::size_t r = br % R;
      for (std::size_t n = 0; n < N; ++n) {
        const double* g = self.grad.data() + (br * N + n) * L;
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t base = ((br * N + n) * C + c) * L;
          if (gw) {
            double s = 0.0;
            for (std::size_t l = 0; l < L; ++l) s += g[l] * Z.value[base + l];
            (*gw)[r * C + c] += s;
          }
          if (gz) {
            const double wc = W.value[r * C + c];
            for (std::size_t l = 0; l < L; ++l) (*gz)[base + l] += g[l] * wc;
          }
        }
      }
    }
  });
}

Tensor relation_mix(const Tensor& z, const Tensor& weights) {
  require_ndim(z, 5, "relation_mix", "features");
  const std::size_t B = z.dim(0), R = z.dim(1), N = z.dim(2), C = z.dim(3), L = z.dim(4);
  if (weights.shape() != Shape{B, R, N, L}) {
    throw DimensionError("relation_mix: weights " + shape_str(weights.shape()) + " do not match features " +
                         shape_str(z.shape()));
  }
  std::vector<double> out(B * N * C * L, 0.0);
  const auto zx = z.data(), ax = weights.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t n = 0; n < N; ++n) {
        const double* a = ax.data() + ((b * R + r) * N + n) * L;
        for (std::size_t c = 0; c < C; ++c) {
          const double* src = zx.data() + (((b * R + r) * N + n) * C + c) * L;
          double* dst = out.data() + ((b * N + n) * C + c) * L;
          for (std::size_t l = 0; l < L; ++l) dst[l] += a[l] * src[l];
        }
      }
  return make_op_result("relation_mix", {B, N, C, L}, std::move(out), {&z, &weights}, [=](detail::Node& self) {
    auto& Z = *self.inputs[0];
    auto& A = *self.inputs[1];
    std::vector<double>* gz = Z.requires_grad ? &Z.ensure_grad() : nullptr;
    std::vector<double>* ga = A.requires_grad ? &A.ensure_grad() : nullptr;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t abase = ((b * R + r) * N + n) * L;
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t zbase = (((b * R + r) * N + n) * C + c) * L;
            const double* g = self.grad.data() + ((b * N + n) * C + c) * L;
            for (std::size_t l = 0; l < L; ++l) {
              if (gz) (*gz)[zbase + l] += g[l] * A.value[abase + l];
              if (ga) (*ga)[abase + l] += g[l] * Z.value[zbase + l];
            }
          }
        }
  });
}

// ---------------------------------------------------------------------------
// Normalizers

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  std::vector<double> out(x.size());
  const auto in = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = in[base];
      for (std::size_t j = 1; j < s.extent; ++j) mx = std::max(mx, in[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.extent; ++j) {
        const double e = std::exp(in[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.extent; ++j) out[base + j * s.inner] /= total;
    }
  return make_op_result("softmax", x.shape(), std::move(out), {&x}, [s](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.extent; ++j) {
          const std::size_t k = base + j * s.inner;
          dot += self.value[k] * self.grad[k];
        }
        for (std::size_t j = 0; j < s.extent; ++j) {
          const std::size_t k = base + j * s.inner;
          g[k] += self.value[k] * (self.grad[k] - dot);
        }
      }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, std::size_t axis, double eps) {
  const AxisSplit s = split_axis(x.shape(), axis, "layer_norm");
  if (gain.shape() != Shape{s.extent} || offset.shape() != Shape{s.extent}) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / offset " + shape_str(offset.shape()) +
                         " must match axis extent " + std::to_string(s.extent));
  }
  std::vector<double> out(x.size());
  std::vector<double> inv_std(s.outer * s.inner);
  const auto in = x.data(), gx = gain.data(), bx = offset.data();
  const double n = static_cast<double>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mu = 0.0;
      for (std::size_t j = 0; j < s.extent; ++j) mu += in[base + j * s.inner];
      mu /= n;
      double var = 0.0;
      for (std::size_t j = 0; j < s.extent; ++j) {
        const double d = in[base + j * s.inner] - mu;
        var += d * d;
      }
      var /= n;
      const double is = 1.0 / std::sqrt(var + eps);
      if (!std::isfinite(is)) throw NumericError("layer_norm: zero variance with eps = 0");
      inv_std[o * s.inner + i] = is;
      for (std::size_t j = 0; j < s.extent; ++j) {
        const std::size_t k = base + j * s.inner;
        out[k] = gx[j] * (in[k] - mu) * is + bx[j];
      }
    }
  return make_op_result(
      "layer_norm", x.shape(), std::move(out), {&x, &gain, &offset},
      [s, n, inv_std = std::move(inv_std)](detail::Node& self) {
        auto& X = *self.inputs[0];
        auto& G = *self.inputs[1];
        auto& Bo = *self.inputs[2];
        std::vector<double> xhat(s.extent), dxhat(s.extent);
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            const double is = inv_std[o * s.inner + i];
            double mu = 0.0;
            for (std::size_t j = 0; j < s.extent; ++j) mu += X.value[base + j * s.inner];
            mu /= n;
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < s.extent; ++j) {
              const std::size_t k = base + j * s.inner;
              xhat[j] = (X.value[k] - mu) * is;
              dxhat[j] = self.grad[k] * G.value[j];
              mean_dxhat += dxhat[j];
              mean_dxhat_xhat += dxhat[j] * xhat[j];
            }
            mean_dxhat /= n;
            mean_dxhat_xhat /= n;
            if (Bo.requires_grad) {
              auto& gb = Bo.ensure_grad();
              for (std::size_t j = 0; j < s.extent; ++j) gb[j] += self.grad[base + j * s.inner];
            }
            if (G.requires_grad) {
              auto& gg = G.ensure_grad();
              for (std::size_t j = 0; j < s.extent; ++j) gg[j] += self.grad[base + j * s.inner] * xhat[j];
            }
            if (X.requires_grad) {
              auto& gx = X.ensure_grad();
              for (std::size_t j = 0; j < s.extent; ++j) {
                gx[base + j * s.inner] += is * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
              }
            }
          }
      });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  std::vector<double> mask(x.size());
  const double keep = 1.0 / (1.0 - rate);
  for (double& m : mask) m = rng.uniform() >= rate ? keep : 0.0;
  std::vector<double> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * mask[i];
  return make_op_result("dropout", x.shape(), std::move(out), {&x}, [mask = std::move(mask)](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

}  // namespace stmrgnn
