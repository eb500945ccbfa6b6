#include "otml/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <utility>

namespace otml {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

namespace {

thread_local Graph* g_current_graph = nullptr;

void check_finite(const char* op, const std::vector<double>& data) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("op '") + op +
                         "' produced a non-finite value");
    }
  }
}

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    shape_fail(op, "expected rank " + std::to_string(rank) + " tensor, got " +
                       shape_str(t.shape()));
  }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_fail(op, "shape mismatch " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
  }
}

}  // namespace

namespace detail {

void Node::add_grad(const double* g, std::size_t n) {
  if (!requires_grad) return;
  if (!grad) grad = std::make_unique<std::vector<double>>(data.size(), 0.0);
  double* dst = grad->data();
  for (std::size_t i = 0; i < n; ++i) dst[i] += g[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return from_data(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> data(shape_numel(shape), value);
  return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values,
                         bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  if (values.empty()) values.assign(n, 0.0);
  if (values.size() != n) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError("tensor created with a non-finite value");
    }
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::identity(std::size_t n) {
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
  return from_data({n, n}, std::move(d));
}

const Shape& Tensor::shape() const {
  if (!node_) throw GraphError("use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::size() const { return node_ ? node_->data.size() : 0; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const double> Tensor::data() const {
  if (!node_) throw GraphError("use of an undefined tensor");
  return {node_->data.data(), node_->data.size()};
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw GraphError("use of an undefined tensor");
  if (node_->op != nullptr) {
    throw GraphError("cannot mutate an op result in place");
  }
  return {node_->data.data(), node_->data.size()};
}

double Tensor::value() const {
  if (size() != 1) {
    throw ShapeError("value() requires a scalar tensor, got " +
                     shape_str(shape()));
  }
  return node_->data[0];
}

double Tensor::at(std::size_t i) const { return data()[i]; }

double Tensor::at(std::size_t i, std::size_t j) const {
  const Shape& s = shape();
  if (s.size() != 2) throw ShapeError("at(i,j) requires rank 2");
  return node_->data[i * s[1] + j];
}

double Tensor::at(std::size_t i, std::size_t j, std::size_t k) const {
  const Shape& s = shape();
  if (s.size() != 3) throw ShapeError("at(i,j,k) requires rank 3");
  return node_->data[(i * s[1] + j) * s[2] + k];
}

bool Tensor::has_grad() const { return node_ && node_->grad != nullptr; }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw GraphError("tensor holds no gradient");
  return {node_->grad->data(), node_->grad->size()};
}

void Tensor::zero_grad() {
  if (node_) node_->grad.reset();
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

Graph::~Graph() {
  if (g_current_graph == this) g_current_graph = nullptr;
}

Graph::Scope::Scope(Graph& g) : prev_(g_current_graph) { g_current_graph = &g; }

Graph::Scope::~Scope() { g_current_graph = prev_; }

Graph* Graph::current() { return g_current_graph; }

void Graph::append(detail::NodePtr node) { nodes_.push_back(std::move(node)); }

void Graph::clear() {
  nodes_.clear();
  consumed_ = false;
}

void Graph::backward(const Tensor& root) {
  if (!root.defined()) throw GraphError("backward: undefined root");
  if (root.size() != 1) {
    throw GraphError("backward: root must be a scalar, got " +
                     shape_str(root.shape()));
  }
  detail::Node* rn = root.node();
  if (rn->owner != this) {
    throw GraphError("backward: root was not produced by this graph");
  }
  if (consumed_) {
    throw GraphError("backward: graph already consumed; rebuild the forward "
                     "pass before differentiating again");
  }
  consumed_ = true;
  rn->grad = std::make_unique<std::vector<double>>(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node& n = **it;
    if (n.grad && n.backward) n.backward(n);
  }
}

// Central op constructor: validates the output, then either records the node
// on the active graph (when gradients are wanted) or returns plain data.
Tensor make_op_result(const char* op, Shape shape, std::vector<double> data,
                      std::initializer_list<Tensor> inputs,
                      std::function<void(const detail::Node&)> backward) {
  check_finite(op, data);
  bool wants_grad = false;
  for (const Tensor& t : inputs) wants_grad = wants_grad || t.requires_grad();

  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);

  Graph* g = Graph::current();
  if (g != nullptr && wants_grad) {
    node->requires_grad = true;
    node->op = op;
    node->owner = g;
    node->backward = std::move(backward);
    g->append(node);
  }
  return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  // Accepts [m,k]x[k,n] -> [m,n], [m,k]x[k] -> [m] and [k]x[k,n] -> [n].
  const bool a_vec = a.rank() == 1;
  const bool b_vec = b.rank() == 1;
  if (a.rank() > 2 || b.rank() > 2 || (a_vec && b_vec)) {
    shape_fail("matmul", "unsupported ranks " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
  }
  const std::size_t m = a_vec ? 1 : a.shape()[0];
  const std::size_t k = a_vec ? a.shape()[0] : a.shape()[1];
  const std::size_t kb = b_vec ? b.shape()[0] : b.shape()[0];
  const std::size_t n = b_vec ? 1 : b.shape()[1];
  if (k != kb) {
    shape_fail("matmul", "inner dimensions disagree: " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()));
  }

  const double* pa = a.data().data();
  const double* pb = b.data().data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    double* orow = out.data() + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = arow[l];
      if (av == 0.0) continue;
      const double* brow = pb + l * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }

  Shape out_shape;
  if (a_vec) {
    out_shape = {n};
  } else if (b_vec) {
    out_shape = {m};
  } else {
    out_shape = {m, n};
  }

  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_op_result(
      "matmul", std::move(out_shape), std::move(out), {a, b},
      [an, bn, m, k, n](const detail::Node& self) {
        const double* g = self.grad->data();
        if (an->requires_grad) {
          // da = g . b^T
          std::vector<double> da(m * k, 0.0);
          const double* pb = bn->data.data();
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g + i * n;
            double* drow = da.data() + i * k;
            for (std::size_t l = 0; l < k; ++l) {
              const double* brow = pb + l * n;
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              drow[l] = acc;
            }
          }
          an->add_grad(da.data(), da.size());
        }
        if (bn->requires_grad) {
          // db = a^T . g
          std::vector<double> db(k * n, 0.0);
          const double* pa = an->data.data();
          for (std::size_t i = 0; i < m; ++i) {
            const double* arow = pa + i * k;
            const double* grow = g + i * n;
            for (std::size_t l = 0; l < k; ++l) {
              const double av = arow[l];
              if (av == 0.0) continue;
              double* drow = db.data() + l * n;
              for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
            }
          }
          bn->add_grad(db.data(), db.size());
        }
      });
}

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_elementwise(const char* op, const Tensor& a, const Tensor& b,
                          Fwd fwd, Bwd bwd) {
  require_same_shape(op, a, b);
  const std::size_t n = a.size();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(pa[i], pb[i]);

  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_op_result(
      op, a.shape(), std::move(out), {a, b},
      [an, bn, n, bwd](const detail::Node& self) {
        const double* g = self.grad->data();
        std::vector<double> da, db;
        if (an->requires_grad) da.resize(n);
        if (bn->requires_grad) db.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
          double ga = 0.0, gb = 0.0;
          bwd(an->data[i], bn->data[i], self.data[i], g[i], ga, gb);
          if (!da.empty()) da[i] = ga;
          if (!db.empty()) db[i] = gb;
        }
        if (!da.empty()) an->add_grad(da.data(), n);
        if (!db.empty()) bn->add_grad(db.data(), n);
      });
}

template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const char* op, const Tensor& a, Fwd fwd, Bwd bwd) {
  const std::size_t n = a.size();
  const double* pa = a.data().data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(pa[i]);

  auto an = a.node_ptr();
  return make_op_result(op, a.shape(), std::move(out), {a},
                        [an, n, bwd](const detail::Node& self) {
                          const double* g = self.grad->data();
                          std::vector<double> da(n);
                          for (std::size_t i = 0; i < n; ++i) {
                            da[i] = bwd(an->data[i], self.data[i]) * g[i];
                          }
                          an->add_grad(da.data(), n);
                        });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double, double g, double& ga, double& gb) {
        ga = g;
        gb = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double, double g, double& ga, double& gb) {
        ga = g;
        gb = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double, double g, double& ga, double& gb) {
        ga = g * y;
        gb = g * x;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  return binary_elementwise(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double out, double g, double& ga, double& gb) {
        ga = g / y;
        gb = -g * out / y;
      });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_elementwise(
      "add_scalar", a, [c](double x) { return x + c; },
      [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
  return unary_elementwise(
      "mul_scalar", a, [c](double x) { return x * c; },
      [c](double, double) { return c; });
}

Tensor exp(const Tensor& a) {
  return unary_elementwise(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (v <= 0.0) throw DomainError("log: non-positive input");
  }
  return unary_elementwise(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  for (double v : a.data()) {
    if (v < 0.0) throw DomainError("sqrt: negative input");
  }
  return unary_elementwise(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor relu(const Tensor& a) {
  return unary_elementwise(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor max_with_scalar(const Tensor& a, double c) {
  return unary_elementwise(
      "max_with_scalar", a, [c](double x) { return x > c ? x : c; },
      [c](double x, double) { return x > c ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  const std::size_t n = a.size();
  auto an = a.node_ptr();
  return make_op_result("sum", {1}, {acc}, {a},
                        [an, n](const detail::Node& self) {
                          const double g = (*self.grad)[0];
                          std::vector<double> da(n, g);
                          an->add_grad(da.data(), n);
                        });
}

Tensor mean(const Tensor& a) {
  const std::size_t n = a.size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  auto an = a.node_ptr();
  return make_op_result("mean", {1}, {acc / static_cast<double>(n)}, {a},
                        [an, n](const detail::Node& self) {
                          const double g =
                              (*self.grad)[0] / static_cast<double>(n);
                          std::vector<double> da(n, g);
                          an->add_grad(da.data(), n);
                        });
}

namespace {

// Shared geometry for the rank-2 axis reductions.
struct Axis2d {
  std::size_t rows, cols;
  bool along_cols;  // axis == 1: reduce each row over its columns
};

Axis2d axis2d(const char* op, const Tensor& a, std::size_t axis) {
  require_rank(op, a, 2);
  if (axis > 1) shape_fail(op, "axis out of range");
  return {a.shape()[0], a.shape()[1], axis == 1};
}

}  // namespace

Tensor mean_along_axis(const Tensor& a, std::size_t axis) {
  const Axis2d ax = axis2d("mean_along_axis", a, axis);
  const double* p = a.data().data();
  const std::size_t out_n = ax.along_cols ? ax.rows : ax.cols;
  const std::size_t red_n = ax.along_cols ? ax.cols : ax.rows;
  std::vector<double> out(out_n, 0.0);
  for (std::size_t i = 0; i < ax.rows; ++i) {
    for (std::size_t j = 0; j < ax.cols; ++j) {
      out[ax.along_cols ? i : j] += p[i * ax.cols + j];
    }
  }
  for (double& v : out) v /= static_cast<double>(red_n);

  auto an = a.node_ptr();
  return make_op_result(
      "mean_along_axis", {out_n}, std::move(out), {a},
      [an, ax, red_n](const detail::Node& self) {
        const double* g = self.grad->data();
        std::vector<double> da(ax.rows * ax.cols);
        for (std::size_t i = 0; i < ax.rows; ++i) {
          for (std::size_t j = 0; j < ax.cols; ++j) {
            da[i * ax.cols + j] =
                g[ax.along_cols ? i : j] / static_cast<double>(red_n);
          }
        }
        an->add_grad(da.data(), da.size());
      });
}

Tensor variance_along_axis(const Tensor& a, std::size_t axis) {
  const Axis2d ax = axis2d("variance_along_axis", a, axis);
  const std::size_t red_n = ax.along_cols ? ax.cols : ax.rows;
  if (red_n < 2) {
    throw BatchSizeError(
        "variance_along_axis: need at least 2 samples along the reduced axis");
  }
  const double* p = a.data().data();
  const std::size_t out_n = ax.along_cols ? ax.rows : ax.cols;
  std::vector<double> mu(out_n, 0.0), out(out_n, 0.0);
  for (std::size_t i = 0; i < ax.rows; ++i) {
    for (std::size_t j = 0; j < ax.cols; ++j) {
      mu[ax.along_cols ? i : j] += p[i * ax.cols + j];
    }
  }
  for (double& v : mu) v /= static_cast<double>(red_n);
  for (std::size_t i = 0; i < ax.rows; ++i) {
    for (std::size_t j = 0; j < ax.cols; ++j) {
      const std::size_t o = ax.along_cols ? i : j;
      const double c = p[i * ax.cols + j] - mu[o];
      out[o] += c * c;
    }
  }
  for (double& v : out) v /= static_cast<double>(red_n - 1);

  auto an = a.node_ptr();
  return make_op_result(
      "variance_along_axis", {out_n}, std::move(out), {a},
      [an, ax, red_n, mu = std::move(mu)](const detail::Node& self) {
        const double* g = self.grad->data();
        const double scale = 2.0 / static_cast<double>(red_n - 1);
        std::vector<double> da(ax.rows * ax.cols);
        for (std::size_t i = 0; i < ax.rows; ++i) {
          for (std::size_t j = 0; j < ax.cols; ++j) {
            const std::size_t o = ax.along_cols ? i : j;
            da[i * ax.cols + j] =
                g[o] * scale * (an->data[i * ax.cols + j] - mu[o]);
          }
        }
        an->add_grad(da.data(), da.size());
      });
}

Tensor l2_norm_along_axis(const Tensor& a, std::size_t axis) {
  const Axis2d ax = axis2d("l2_norm_along_axis", a, axis);
  const double* p = a.data().data();
  const std::size_t out_n = ax.along_cols ? ax.rows : ax.cols;
  std::vector<double> out(out_n, 0.0);
  for (std::size_t i = 0; i < ax.rows; ++i) {
    for (std::size_t j = 0; j < ax.cols; ++j) {
      const double v = p[i * ax.cols + j];
      out[ax.along_cols ? i : j] += v * v;
    }
  }
  for (double& v : out) v = std::sqrt(v);

  auto an = a.node_ptr();
  return make_op_result(
      "l2_norm_along_axis", {out_n}, std::move(out), {a},
      [an, ax](const detail::Node& self) {
        const double* g = self.grad->data();
        std::vector<double> da(ax.rows * ax.cols, 0.0);
        for (std::size_t i = 0; i < ax.rows; ++i) {
          for (std::size_t j = 0; j < ax.cols; ++j) {
            const std::size_t o = ax.along_cols ? i : j;
            const double norm = self.data[o];
            if (norm > 0.0) {
              da[i * ax.cols + j] =
                  g[o] * an->data[i * ax.cols + j] / norm;
            }
          }
        }
        an->add_grad(da.data(), da.size());
      });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  const double* p = a.data().data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = p[i * n + j];
  }
  auto an = a.node_ptr();
  return make_op_result("transpose", {n, m}, std::move(out), {a},
                        [an, m, n](const detail::Node& self) {
                          const double* g = self.grad->data();
                          std::vector<double> da(m * n);
                          for (std::size_t j = 0; j < n; ++j) {
                            for (std::size_t i = 0; i < m; ++i) {
                              da[i * n + j] = g[j * m + i];
                            }
                          }
                          an->add_grad(da.data(), da.size());
                        });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    shape_fail("reshape", "cannot reshape " + shape_str(a.shape()) + " to " +
                              shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  auto an = a.node_ptr();
  const std::size_t n = a.size();
  return make_op_result("reshape", std::move(shape), std::move(out), {a},
                        [an, n](const detail::Node& self) {
                          an->add_grad(self.grad->data(), n);
                        });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t rank = parts[0].rank();
  if (axis >= rank) shape_fail("concat", "axis out of range");
  Shape out_shape = parts[0].shape();
  for (std::size_t p = 1; p < parts.size(); ++p) {
    const Shape& s = parts[p].shape();
    if (s.size() != rank) shape_fail("concat", "rank mismatch");
    for (std::size_t d = 0; d < rank; ++d) {
      if (d != axis && s[d] != out_shape[d]) {
        shape_fail("concat", "off-axis dimension mismatch");
      }
    }
    out_shape[axis] += s[axis];
  }

  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];
  for (std::size_t d = axis + 1; d < rank; ++d) inner *= out_shape[d];
  const std::size_t out_axis = out_shape[axis];

  std::vector<double> out(outer * out_axis * inner);
  std::size_t offset = 0;
  std::vector<std::size_t> offsets(parts.size());
  for (std::size_t p = 0; p < parts.size(); ++p) {
    offsets[p] = offset;
    const std::size_t pa = parts[p].shape()[axis];
    const double* src = parts[p].data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src + o * pa * inner, src + (o + 1) * pa * inner,
                out.data() + (o * out_axis + offset) * inner);
    }
    offset += pa;
  }

  std::vector<detail::NodePtr> nodes;
  std::vector<std::size_t> axis_lens;
  nodes.reserve(parts.size());
  for (const Tensor& t : parts) {
    nodes.push_back(t.node_ptr());
    axis_lens.push_back(t.shape()[axis]);
  }
  bool wants = false;
  for (const Tensor& t : parts) wants = wants || t.requires_grad();

  // Variadic input list: route requires_grad through a representative pair.
  Tensor probe = parts[0];
  auto backward = [nodes = std::move(nodes), axis_lens = std::move(axis_lens),
                   offsets = std::move(offsets), outer, inner,
                   out_axis](const detail::Node& self) {
    const double* g = self.grad->data();
    for (std::size_t p = 0; p < nodes.size(); ++p) {
      if (!nodes[p]->requires_grad) continue;
      const std::size_t pa = axis_lens[p];
      std::vector<double> dp(outer * pa * inner);
      for (std::size_t o = 0; o < outer; ++o) {
        std::copy(g + (o * out_axis + offsets[p]) * inner,
                  g + (o * out_axis + offsets[p] + pa) * inner,
                  dp.data() + o * pa * inner);
      }
      nodes[p]->add_grad(dp.data(), dp.size());
    }
  };
  if (wants && parts.size() > 1) {
    // Ensure recording triggers even if only a later part requires grad.
    for (const Tensor& t : parts) {
      if (t.requires_grad()) {
        probe = t;
        break;
      }
    }
  }
  return make_op_result("concat", std::move(out_shape), std::move(out), {probe},
                        std::move(backward));
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start,
             std::size_t len) {
  const Shape& s = a.shape();
  if (axis >= s.size()) shape_fail("slice", "axis out of range");
  if (start + len > s[axis]) shape_fail("slice", "range out of bounds");
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t ax = s[axis];

  Shape out_shape = s;
  out_shape[axis] = len;
  std::vector<double> out(outer * len * inner);
  const double* p = a.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(p + (o * ax + start) * inner, p + (o * ax + start + len) * inner,
              out.data() + o * len * inner);
  }

  auto an = a.node_ptr();
  return make_op_result(
      "slice", std::move(out_shape), std::move(out), {a},
      [an, outer, inner, ax, start, len](const detail::Node& self) {
        const double* g = self.grad->data();
        std::vector<double> da(outer * ax * inner, 0.0);
        for (std::size_t o = 0; o < outer; ++o) {
          std::copy(g + o * len * inner, g + (o + 1) * len * inner,
                    da.data() + (o * ax + start) * inner);
        }
        an->add_grad(da.data(), da.size());
      });
}

namespace {

// softmax / logsumexp share row-view plumbing: the reduced axis is viewed as
// contiguous rows of length `width`, `count` of them, with an index map for
// axis 0 of rank-2 tensors.
struct RowView {
  std::size_t count, width;
  bool strided;          // axis 0 of a rank-2 tensor
  std::size_t stride;    // column stride when strided
  std::size_t idx(std::size_t r, std::size_t w) const {
    return strided ? w * stride + r : r * width + w;
  }
};

RowView row_view(const char* op, const Tensor& a, std::size_t axis) {
  if (a.rank() == 1) {
    if (axis != 0) shape_fail(op, "axis out of range for rank-1 tensor");
    return {1, a.shape()[0], false, 0};
  }
  if (a.rank() == 2) {
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    if (axis == 1) return {m, n, false, 0};
    if (axis == 0) return {n, m, true, n};
    shape_fail(op, "axis out of range");
  }
  shape_fail(op, "rank must be 1 or 2");
}

}  // namespace

Tensor softmax(const Tensor& a, std::size_t axis) {
  const RowView rv = row_view("softmax", a, axis);
  const double* p = a.data().data();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rv.count; ++r) {
    double mx = -1e300;
    for (std::size_t w = 0; w < rv.width; ++w) mx = std::max(mx, p[rv.idx(r, w)]);
    double z = 0.0;
    for (std::size_t w = 0; w < rv.width; ++w) {
      const double e = std::exp(p[rv.idx(r, w)] - mx);
      out[rv.idx(r, w)] = e;
      z += e;
    }
    for (std::size_t w = 0; w < rv.width; ++w) out[rv.idx(r, w)] /= z;
  }

  auto an = a.node_ptr();
  return make_op_result(
      "softmax", a.shape(), std::move(out), {a},
      [an, rv](const detail::Node& self) {
        const double* g = self.grad->data();
        const double* y = self.data.data();
        std::vector<double> da(self.data.size());
        for (std::size_t r = 0; r < rv.count; ++r) {
          double dot = 0.0;
          for (std::size_t w = 0; w < rv.width; ++w) {
            const std::size_t i = rv.idx(r, w);
            dot += g[i] * y[i];
          }
          for (std::size_t w = 0; w < rv.width; ++w) {
            const std::size_t i = rv.idx(r, w);
            da[i] = y[i] * (g[i] - dot);
          }
        }
        an->add_grad(da.data(), da.size());
      });
}

Tensor logsumexp_along_axis(const Tensor& a, std::size_t axis) {
  const RowView rv = row_view("logsumexp", a, axis);
  const double* p = a.data().data();
  std::vector<double> out(rv.count);
  for (std::size_t r = 0; r < rv.count; ++r) {
    double mx = -1e300;
    for (std::size_t w = 0; w < rv.width; ++w) mx = std::max(mx, p[rv.idx(r, w)]);
    double z = 0.0;
    for (std::size_t w = 0; w < rv.width; ++w) z += std::exp(p[rv.idx(r, w)] - mx);
    out[r] = mx + std::log(z);
  }

  auto an = a.node_ptr();
  return make_op_result(
      "logsumexp", {rv.count}, std::move(out), {a},
      [an, rv](const detail::Node& self) {
        const double* g = self.grad->data();
        const double* lse = self.data.data();
        std::vector<double> da(an->data.size());
        for (std::size_t r = 0; r < rv.count; ++r) {
          for (std::size_t w = 0; w < rv.width; ++w) {
            const std::size_t i = rv.idx(r, w);
            da[i] = g[r] * std::exp(an->data[i] - lse[r]);
          }
        }
        an->add_grad(da.data(), da.size());
      });
}

namespace {

enum class RcKind { RowScale, ColScale, RowAdd, ColAdd };

Tensor rowcol_op(const char* op, RcKind kind, const Tensor& m,
                 const Tensor& v) {
  require_rank(op, m, 2);
  require_rank(op, v, 1);
  const std::size_t rows = m.shape()[0], cols = m.shape()[1];
  const bool row_wise = kind == RcKind::RowScale || kind == RcKind::RowAdd;
  const bool scaling = kind == RcKind::RowScale || kind == RcKind::ColScale;
  if (v.shape()[0] != (row_wise ? rows : cols)) {
    shape_fail(op, "vector length " + shape_str(v.shape()) +
                       " incompatible with matrix " + shape_str(m.shape()));
  }
  const double* pm = m.data().data();
  const double* pv = v.data().data();
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double s = pv[row_wise ? i : j];
      const double x = pm[i * cols + j];
      out[i * cols + j] = scaling ? x * s : x + s;
    }
  }

  auto mn = m.node_ptr();
  auto vn = v.node_ptr();
  return make_op_result(
      op, m.shape(), std::move(out), {m, v},
      [mn, vn, rows, cols, row_wise, scaling](const detail::Node& self) {
        const double* g = self.grad->data();
        if (mn->requires_grad) {
          std::vector<double> dm(rows * cols);
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
              const double s = vn->data[row_wise ? i : j];
              dm[i * cols + j] = scaling ? g[i * cols + j] * s : g[i * cols + j];
            }
          }
          mn->add_grad(dm.data(), dm.size());
        }
        if (vn->requires_grad) {
          std::vector<double> dv(row_wise ? rows : cols, 0.0);
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
              const double contrib =
                  scaling ? g[i * cols + j] * mn->data[i * cols + j]
                          : g[i * cols + j];
              dv[row_wise ? i : j] += contrib;
            }
          }
          vn->add_grad(dv.data(), dv.size());
        }
      });
}

}  // namespace

Tensor rows_scale(const Tensor& m, const Tensor& s) {
  return rowcol_op("rows_scale", RcKind::RowScale, m, s);
}
Tensor cols_scale(const Tensor& m, const Tensor& s) {
  return rowcol_op("cols_scale", RcKind::ColScale, m, s);
}
Tensor rows_add(const Tensor& m, const Tensor& r) {
  return rowcol_op("rows_add", RcKind::RowAdd, m, r);
}
Tensor cols_add(const Tensor& m, const Tensor& c) {
  return rowcol_op("cols_add", RcKind::ColAdd, m, c);
}

Tensor channel_add(const Tensor& x, const Tensor& b) {
  require_rank("channel_add", x, 3);
  require_rank("channel_add", b, 1);
  const std::size_t c = x.shape()[0], spatial = x.shape()[1] * x.shape()[2];
  if (b.shape()[0] != c) shape_fail("channel_add", "bias length != channels");
  const double* px = x.data().data();
  const double* pb = b.data().data();
  std::vector<double> out(x.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t s = 0; s < spatial; ++s) {
      out[ch * spatial + s] = px[ch * spatial + s] + pb[ch];
    }
  }
  auto xn = x.node_ptr();
  auto bn = b.node_ptr();
  return make_op_result(
      "channel_add", x.shape(), std::move(out), {x, b},
      [xn, bn, c, spatial](const detail::Node& self) {
        const double* g = self.grad->data();
        if (xn->requires_grad) xn->add_grad(g, c * spatial);
        if (bn->requires_grad) {
          std::vector<double> db(c, 0.0);
          for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t s = 0; s < spatial; ++s) db[ch] += g[ch * spatial + s];
          }
          bn->add_grad(db.data(), c);
        }
      });
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride,
              std::size_t padding) {
  require_rank("conv2d", input, 3);
  if (kernels.rank() != 4) shape_fail("conv2d", "kernels must be rank 4");
  const std::size_t cin = input.shape()[0], h = input.shape()[1],
                    w = input.shape()[2];
  const std::size_t cout = kernels.shape()[0], kcin = kernels.shape()[1],
                    kh = kernels.shape()[2], kw = kernels.shape()[3];
  if (kcin != cin) shape_fail("conv2d", "kernel channel count != input channels");
  if (stride == 0) shape_fail("conv2d", "stride must be positive");
  if (kh > h + 2 * padding || kw > w + 2 * padding) {
    shape_fail("conv2d", "kernel larger than padded input");
  }
  const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kw) / stride + 1;

  const double* pin = input.data().data();
  const double* pk = kernels.data().data();
  std::vector<double> out(cout * oh * ow, 0.0);
  const long ip = static_cast<long>(padding);
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* iplane = pin + ci * h * w;
      const double* kplane = pk + (co * cin + ci) * kh * kw;
      double* oplane = out.data() + co * oh * ow;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const long iy = static_cast<long>(oy * stride + ky) - ip;
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long ix = static_cast<long>(ox * stride + kx) - ip;
              if (ix < 0 || ix >= static_cast<long>(w)) continue;
              acc += iplane[iy * static_cast<long>(w) + ix] *
                     kplane[ky * kw + kx];
            }
          }
          oplane[oy * ow + ox] += acc;
        }
      }
    }
  }

  auto in_n = input.node_ptr();
  auto k_n = kernels.node_ptr();
  return make_op_result(
      "conv2d", {cout, oh, ow}, std::move(out), {input, kernels},
      [in_n, k_n, cin, h, w, cout, kh, kw, oh, ow, stride,
       ip](const detail::Node& self) {
        const double* g = self.grad->data();
        std::vector<double> din, dk;
        if (in_n->requires_grad) din.assign(cin * h * w, 0.0);
        if (k_n->requires_grad) dk.assign(cout * cin * kh * kw, 0.0);
        for (std::size_t co = 0; co < cout; ++co) {
          const double* gplane = g + co * oh * ow;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* iplane = in_n->data.data() + ci * h * w;
            const double* kplane = k_n->data.data() + (co * cin + ci) * kh * kw;
            double* dip = din.empty() ? nullptr : din.data() + ci * h * w;
            double* dkp = dk.empty() ? nullptr
                                     : dk.data() + (co * cin + ci) * kh * kw;
            for (std::size_t oy = 0; oy < oh; ++oy) {
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const double gv = gplane[oy * ow + ox];
                if (gv == 0.0) continue;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                  const long iy = static_cast<long>(oy * stride + ky) - ip;
                  if (iy < 0 || iy >= static_cast<long>(h)) continue;
                  for (std::size_t kx = 0; kx < kw; ++kx) {
                    const long ix = static_cast<long>(ox * stride + kx) - ip;
                    if (ix < 0 || ix >= static_cast<long>(w)) continue;
                    const std::size_t ii =
                        static_cast<std::size_t>(iy * static_cast<long>(w) + ix);
                    if (dip) dip[ii] += gv * kplane[ky * kw + kx];
                    if (dkp) dkp[ky * kw + kx] += gv * iplane[ii];
                  }
                }
              }
            }
          }
        }
        if (!din.empty()) in_n->add_grad(din.data(), din.size());
        if (!dk.empty()) k_n->add_grad(dk.data(), dk.size());
      });
}

// ---------------------------------------------------------------------------
// BatchNorm1d
// ---------------------------------------------------------------------------

BatchNorm1d::BatchNorm1d(std::size_t dim, double eps, double momentum)
    : dim_(dim),
      eps_(eps),
      momentum_(momentum),
      gamma_(Tensor::full({dim}, 1.0, true)),
      beta_(Tensor::zeros({dim}, true)),
      running_mean_(dim, 0.0),
      running_var_(dim, 1.0) {}

Tensor BatchNorm1d::forward(const Tensor& x, bool training) {
  require_rank("batchnorm1d", x, 2);
  if (x.shape()[1] != dim_) {
    throw ShapeError("batchnorm1d: feature width " +
                     std::to_string(x.shape()[1]) + " != configured " +
                     std::to_string(dim_));
  }
  Tensor xhat;
  if (training) {
    if (x.shape()[0] < 2) {
      throw BatchSizeError("batchnorm1d: training mode needs a batch of >= 2");
    }
    Tensor mu = mean_along_axis(x, 0);
    Tensor var = variance_along_axis(x, 0);
    Tensor centered = cols_add(x, neg(mu));
    Tensor inv_std =
        div(Tensor::full({dim_}, 1.0), sqrt(add_scalar(var, eps_)));
    xhat = cols_scale(centered, inv_std);
    for (std::size_t j = 0; j < dim_; ++j) {
      running_mean_[j] =
          (1.0 - momentum_) * running_mean_[j] + momentum_ * mu.at(j);
      running_var_[j] =
          (1.0 - momentum_) * running_var_[j] + momentum_ * var.at(j);
    }
  } else {
    std::vector<double> inv(dim_);
    for (std::size_t j = 0; j < dim_; ++j) {
      inv[j] = 1.0 / std::sqrt(running_var_[j] + eps_);
    }
    std::vector<double> neg_mu(dim_);
    for (std::size_t j = 0; j < dim_; ++j) neg_mu[j] = -running_mean_[j];
    xhat = cols_scale(cols_add(x, Tensor::from_data({dim_}, neg_mu)),
                      Tensor::from_data({dim_}, inv));
  }
  return cols_add(cols_scale(xhat, gamma_), beta_);
}

// ---------------------------------------------------------------------------
// Op registry
// ---------------------------------------------------------------------------

namespace {
constexpr const char* kDifferentiableOps[] = {
    "matmul",        "add",
    "sub",           "mul",
    "div",           "add_scalar",
    "mul_scalar",    "exp",
    "log",           "sqrt",
    "relu",          "max_with_scalar",
    "sum",           "mean",
    "mean_along_axis", "variance_along_axis",
    "l2_norm_along_axis", "transpose",
    "reshape",       "concat",
    "slice",         "softmax",
    "logsumexp",     "rows_scale",
    "cols_scale",    "rows_add",
    "cols_add",      "channel_add",
    "conv2d",
};
}  // namespace

std::span<const char* const> differentiable_op_names() {
  return {kDifferentiableOps,
          sizeof(kDifferentiableOps) / sizeof(kDifferentiableOps[0])};
}

}  // namespace otml
