#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "otml/errors.hpp"

namespace otml {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Graph;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::unique_ptr<std::vector<double>> grad;  // allocated lazily, same numel as data
  bool requires_grad = false;
  const char* op = nullptr;          // null for leaves and constants
  const Graph* owner = nullptr;      // graph that recorded this node, null for leaves
  std::function<void(const Node&)> backward;  // accumulates into parents' grads

  void add_grad(const double* g, std::size_t n);
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

// Dense row-major 64-bit float tensor. Value-semantic handle onto a shared
// node; copying a Tensor aliases the same storage (torch-like semantics).
// All stored values are finite by construction: non-finite data is rejected
// at creation and every op checks its output.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor identity(std::size_t n);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  bool requires_grad() const;

  std::span<const double> data() const;
  // Direct mutation is reserved for leaves (parameter updates between steps).
  std::span<double> mutable_data();

  double value() const;  // scalar tensors only
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;
  double at(std::size_t i, std::size_t j, std::size_t k) const;

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  detail::Node* node() const { return node_.get(); }
  const detail::NodePtr& node_ptr() const { return node_; }

 private:
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
  detail::NodePtr node_;

  friend Tensor make_op_result(const char* op, Shape shape,
                               std::vector<double> data,
                               std::initializer_list<Tensor> inputs,
                               std::function<void(const detail::Node&)> backward);
};

// Define-by-run tape. Ops record onto the thread's active graph (if any);
// a forward pass builds a fresh graph, backward() consumes it exactly once.
// A graph and its tensors stay on one thread; distinct graphs are
// independent and may run concurrently.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  ~Graph();

  // RAII activation: while alive, ops on this thread record here.
  class Scope {
   public:
    explicit Scope(Graph& g);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Graph* prev_;
  };

  // Reverse-mode sweep from a scalar root recorded on this graph. Visits the
  // tape in reverse append order; each reachable requires_grad leaf ends up
  // holding d(root)/d(leaf), contributions from multiple consumers summed.
  void backward(const Tensor& root);

  void clear();
  bool consumed() const { return consumed_; }
  std::size_t node_count() const { return nodes_.size(); }

  static Graph* current();

 private:
  void append(detail::NodePtr node);

  std::vector<detail::NodePtr> nodes_;
  bool consumed_ = false;

  friend Tensor make_op_result(const char* op, Shape shape,
                               std::vector<double> data,
                               std::initializer_list<Tensor> inputs,
                               std::function<void(const detail::Node&)> backward);
};

// ---------------------------------------------------------------------------
// Differentiable operations. Each op validates shapes, checks its output for
// NaN/Inf (NumericError names the op) and registers an exact adjoint.
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor max_with_scalar(const Tensor& a, double c);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor mean_along_axis(const Tensor& a, std::size_t axis);
// Unbiased (n-1) variance along the given axis of a 2-D tensor.
Tensor variance_along_axis(const Tensor& a, std::size_t axis);
Tensor l2_norm_along_axis(const Tensor& a, std::size_t axis);

Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start,
             std::size_t len);

// Numerically stable (max-subtracted) softmax / log-sum-exp along an axis.
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor logsumexp_along_axis(const Tensor& a, std::size_t axis);

// Rank patterns used by the rest of the library in place of broadcasting.
Tensor rows_scale(const Tensor& m, const Tensor& s);  // m[i,j] * s[i]
Tensor cols_scale(const Tensor& m, const Tensor& s);  // m[i,j] * s[j]
Tensor rows_add(const Tensor& m, const Tensor& r);    // m[i,j] + r[i]
Tensor cols_add(const Tensor& m, const Tensor& c);    // m[i,j] + c[j]
Tensor channel_add(const Tensor& x, const Tensor& b); // x[c,h,w] + b[c]

// Direct 2-D convolution: input [c_in,h,w], kernels [c_out,c_in,kh,kw].
// Output spatial size floor((dim + 2*padding - k)/stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride,
              std::size_t padding);

// Per-column standardization with learned affine and running statistics.
// Training mode needs n >= 2 rows and uses the unbiased column variance, so
// an already standardized batch passes through unchanged (up to eps); eval
// mode applies the stored running statistics.
class BatchNorm1d {
 public:
  BatchNorm1d() = default;
  BatchNorm1d(std::size_t dim, double eps = 1e-5, double momentum = 0.1);

  Tensor forward(const Tensor& x, bool training);

  Tensor& gamma() { return gamma_; }
  Tensor& beta() { return beta_; }
  const Tensor& gamma() const { return gamma_; }
  const Tensor& beta() const { return beta_; }
  std::vector<double>& running_mean() { return running_mean_; }
  std::vector<double>& running_var() { return running_var_; }
  double eps() const { return eps_; }
  std::size_t dim() const { return dim_; }

 private:
  std::size_t dim_ = 0;
  double eps_ = 1e-5;
  double momentum_ = 0.1;
  Tensor gamma_, beta_;
  std::vector<double> running_mean_, running_var_;
};

// Names of every differentiable primitive the engine registers, in a fixed
// order. The gradcheck suite iterates this list; a drift test asserts it
// covers each registered op exactly once.
std::span<const char* const> differentiable_op_names();

// Op constructor used by the built-in ops and by modules that add fused
// composites: validates the output for NaN/Inf (NumericError names `op`) and
// records the node with its adjoint when a graph is active and any input
// requires gradients.
Tensor make_op_result(const char* op, Shape shape, std::vector<double> data,
                      std::initializer_list<Tensor> inputs,
                      std::function<void(const detail::Node&)> backward);

}  // namespace otml
