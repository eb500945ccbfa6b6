#include "otml/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>

#include "otml/cvsim.hpp"
#include "otml/model.hpp"
#include "otml/ot.hpp"
#include "otml/regularizers.hpp"
#include "otml/rng.hpp"
#include "otml/tensor.hpp"

namespace otml::gradcheck {

namespace {

constexpr double kStep = 1e-6;
constexpr double kOpThreshold = 1e-4;
constexpr double kCompositeThreshold = 1e-3;

Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi,
                     bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

// Keeps inputs a safe distance from a derivative kink so the central
// difference never straddles it.
Tensor nudged_tensor(Shape shape, Rng& rng, double lo, double hi, double kink,
                     double margin) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) {
    x = rng.uniform(lo, hi);
    if (std::abs(x - kink) < margin) x = kink + (x >= kink ? margin : -margin);
  }
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

// Scalar projection with weights frozen on first use, so repeated
// evaluations of a loss closure see one fixed function.
class FixedProjection {
 public:
  explicit FixedProjection(std::uint64_t seed) : rng_(seed) {}

  Tensor operator()(const Tensor& t) {
    if (weights_.empty()) {
      shape_ = t.shape();
      weights_.resize(t.size());
      for (double& w : weights_) w = rng_.uniform(-1.0, 1.0);
    }
    return sum(mul(t, Tensor::from_data(shape_, weights_)));
  }

 private:
  Rng rng_;
  Shape shape_;
  std::vector<double> weights_;
};

using LossFn = std::function<Tensor()>;

OpCheck check(const std::string& name, std::vector<Tensor> leaves,
              const LossFn& loss_fn, double threshold, bool corrupt) {
  std::vector<std::vector<double>> analytic;
  {
    Graph g;
    Graph::Scope scope(g);
    Tensor loss = loss_fn();
    g.backward(loss);
    for (Tensor& leaf : leaves) {
      if (leaf.has_grad()) {
        analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
      } else {
        analytic.emplace_back(leaf.size(), 0.0);
      }
      leaf.zero_grad();
    }
  }
  if (corrupt) {
    for (auto& grads : analytic) {
      for (double& v : grads) v = v * 1.001 + 1e-3;
    }
  }

  OpCheck result{name, 0.0, threshold, false};
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto values = leaves[l].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + kStep;
      const double up = loss_fn().value();
      values[i] = saved - kStep;
      const double down = loss_fn().value();
      values[i] = saved;
      const double fd = (up - down) / (2.0 * kStep);
      const double a = analytic[l][i];
      const double err =
          std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1.0});
      result.max_rel_err = std::max(result.max_rel_err, err);
    }
  }
  result.pass = result.max_rel_err <= threshold;
  return result;
}

// The per-op check table. Keys must cover differentiable_op_names() exactly;
// the run() preamble reports any drift as a failure.
std::map<std::string, std::function<OpCheck(Rng&, bool)>> op_checks() {
  std::map<std::string, std::function<OpCheck(Rng&, bool)>> table;

  auto unary = [](const char* name, auto op, double lo, double hi) {
    return [name, op, lo, hi](Rng& rng, bool corrupt) {
      Tensor x = random_tensor({2, 3}, rng, lo, hi);
      FixedProjection proj(rng.next_u64());
      return check(
          name, {x}, [&, op] { return proj(op(x)); }, kOpThreshold, corrupt);
    };
  };
  auto binary = [](const char* name, auto op, double lo_b, double hi_b) {
    return [name, op, lo_b, hi_b](Rng& rng, bool corrupt) {
      Tensor a = random_tensor({2, 3}, rng, -2, 2);
      Tensor b = random_tensor({2, 3}, rng, lo_b, hi_b);
      FixedProjection proj(rng.next_u64());
      return check(
          name, {a, b}, [&, op] { return proj(op(a, b)); }, kOpThreshold,
          corrupt);
    };
  };

  table["add"] =
      binary("add", [](auto& a, auto& b) { return add(a, b); }, -2, 2);
  table["sub"] =
      binary("sub", [](auto& a, auto& b) { return sub(a, b); }, -2, 2);
  table["mul"] =
      binary("mul", [](auto& a, auto& b) { return mul(a, b); }, -2, 2);
  table["div"] =
      binary("div", [](auto& a, auto& b) { return div(a, b); }, 0.5, 2.0);
  table["add_scalar"] = unary(
      "add_scalar", [](const Tensor& t) { return add_scalar(t, 0.37); }, -2, 2);
  table["mul_scalar"] = unary(
      "mul_scalar", [](const Tensor& t) { return mul_scalar(t, -1.31); }, -2,
      2);
  table["exp"] = unary("exp", [](const Tensor& t) { return exp(t); }, -2, 2);
  table["log"] = unary("log", [](const Tensor& t) { return log(t); }, 0.4, 2.4);
  table["sqrt"] =
      unary("sqrt", [](const Tensor& t) { return sqrt(t); }, 0.3, 2.0);
  table["relu"] = [](Rng& rng, bool corrupt) {
    Tensor x = nudged_tensor({2, 3}, rng, -2, 2, 0.0, 0.05);
    FixedProjection proj(rng.next_u64());
    return check(
        "relu", {x}, [&] { return proj(relu(x)); }, kOpThreshold, corrupt);
  };
  table["max_with_scalar"] = [](Rng& rng, bool corrupt) {
    Tensor x = nudged_tensor({2, 3}, rng, -2, 2, 0.15, 0.05);
    FixedProjection proj(rng.next_u64());
    return check(
        "max_with_scalar", {x}, [&] { return proj(max_with_scalar(x, 0.15)); },
        kOpThreshold, corrupt);
  };
  table["sum"] =
      unary("sum", [](const Tensor& t) { return sum(t); }, -2, 2);
  table["mean"] =
      unary("mean", [](const Tensor& t) { return mean(t); }, -2, 2);
  table["mean_along_axis"] = unary(
      "mean_along_axis",
      [](const Tensor& t) {
        return concat({mean_along_axis(t, 0), mean_along_axis(t, 1)}, 0);
      },
      -2, 2);
  table["variance_along_axis"] = [](Rng& rng, bool corrupt) {
    Tensor x = random_tensor({4, 3}, rng, -2, 2);
    FixedProjection proj(rng.next_u64());
    return check(
        "variance_along_axis", {x},
        [&] {
          return proj(concat(
              {variance_along_axis(x, 0), variance_along_axis(x, 1)}, 0));
        },
        kOpThreshold, corrupt);
  };
  table["l2_norm_along_axis"] = [](Rng& rng, bool corrupt) {
    Tensor x = random_tensor({3, 4}, rng, 0.2, 2.0);
    FixedProjection proj(rng.next_u64());
    return check(
        "l2_norm_along_axis", {x},
        [&] {
          return proj(concat(
              {l2_norm_along_axis(x, 0), l2_norm_along_axis(x, 1)}, 0));
        },
        kOpThreshold, corrupt);
  };
  table["transpose"] = unary(
      "transpose", [](const Tensor& t) { return transpose(t); }, -2, 2);
  table["reshape"] = unary(
      "reshape", [](const Tensor& t) { return reshape(t, {3, 2}); }, -2, 2);
  table["concat"] = [](Rng& rng, bool corrupt) {
    Tensor a = random_tensor({2, 3}, rng, -2, 2);
    Tensor b = random_tensor({2, 2}, rng, -2, 2);
    FixedProjection proj(rng.next_u64());
    return check(
        "concat", {a, b}, [&] { return proj(concat({a, b}, 1)); },
        kOpThreshold, corrupt);
  };
  table["slice"] = unary(
      "slice", [](const Tensor& t) { return slice(t, 1, 1, 2); }, -2, 2);
  table["softmax"] = unary(
      "softmax",
      [](const Tensor& t) {
        return concat(
            {reshape(softmax(t, 0), {6}), reshape(softmax(t, 1), {6})}, 0);
      },
      -2, 2);
  table["logsumexp"] = unary(
      "logsumexp",
      [](const Tensor& t) {
        return concat(
            {logsumexp_along_axis(t, 0), logsumexp_along_axis(t, 1)}, 0);
      },
      -2, 2);
  table["matmul"] = [](Rng& rng, bool corrupt) {
    Tensor a = random_tensor({3, 4}, rng, -2, 2);
    Tensor b = random_tensor({4, 2}, rng, -2, 2);
    FixedProjection proj(rng.next_u64());
    return check(
        "matmul", {a, b}, [&] { return proj(matmul(a, b)); }, kOpThreshold,
        corrupt);
  };
  auto vector_op = [](const char* name, auto op, bool row_vec) {
    return [name, op, row_vec](Rng& rng, bool corrupt) {
      Tensor m = random_tensor({3, 4}, rng, -2, 2);
      Tensor v = random_tensor({row_vec ? 3u : 4u}, rng, -2, 2);
      FixedProjection proj(rng.next_u64());
      return check(
          name, {m, v}, [&, op] { return proj(op(m, v)); }, kOpThreshold,
          corrupt);
    };
  };
  table["rows_scale"] = vector_op(
      "rows_scale", [](auto& m, auto& v) { return rows_scale(m, v); }, true);
  table["cols_scale"] = vector_op(
      "cols_scale", [](auto& m, auto& v) { return cols_scale(m, v); }, false);
  table["rows_add"] = vector_op(
      "rows_add", [](auto& m, auto& v) { return rows_add(m, v); }, true);
  table["cols_add"] = vector_op(
      "cols_add", [](auto& m, auto& v) { return cols_add(m, v); }, false);
  table["channel_add"] = [](Rng& rng, bool corrupt) {
    Tensor x = random_tensor({2, 3, 3}, rng, -2, 2);
    Tensor b = random_tensor({2}, rng, -2, 2);
    FixedProjection proj(rng.next_u64());
    return check(
        "channel_add", {x, b}, [&] { return proj(channel_add(x, b)); },
        kOpThreshold, corrupt);
  };
  table["conv2d"] = [](Rng& rng, bool corrupt) {
    Tensor img = random_tensor({2, 5, 5}, rng, -2, 2);
    Tensor kernels = random_tensor({3, 2, 3, 3}, rng, -1, 1);
    FixedProjection proj(rng.next_u64());
    return check(
        "conv2d", {img, kernels},
        [&] { return proj(conv2d(img, kernels, 2, 1)); }, kOpThreshold,
        corrupt);
  };
  return table;
}

OpCheck check_batchnorm(Rng& rng, bool corrupt) {
  Tensor x = random_tensor({4, 3}, rng, -2, 2);
  BatchNorm1d bn(3, 1e-4);
  FixedProjection proj(rng.next_u64());
  return check(
      "batchnorm1d", {x, bn.gamma(), bn.beta()},
      [&] { return proj(bn.forward(x, true)); }, kOpThreshold, corrupt);
}

OpCheck check_cross_attend(Rng& rng, bool corrupt) {
  const std::size_t d = 4;
  Rng init_rng(rng.next_u64());
  cvsim::CvSimParams p = cvsim::CvSimParams::init(d, 2, 1, init_rng);
  Tensor g_src = random_tensor({d}, rng, -1, 1);
  Tensor g_tgt = random_tensor({d}, rng, -1, 1);
  FixedProjection proj(rng.next_u64());
  return check(
      "cross_attend", {g_src, g_tgt, p.w_q, p.w_k, p.w_v},
      [&] { return proj(cvsim::cross_attend(g_src, g_tgt, p)); },
      kOpThreshold, corrupt);
}

OpCheck check_variance_term(Rng& rng, bool corrupt) {
  // Column stds stay well below the hinge kink at gamma = 1.
  Tensor q = random_tensor({5, 3}, rng, -0.4, 0.4);
  return check(
      "variance_term", {q},
      [&] { return reg::variance_term(q, 1.0, 1e-4); }, kOpThreshold, corrupt);
}

OpCheck check_covariance_term(Rng& rng, bool corrupt) {
  Tensor q = random_tensor({5, 3}, rng, -2, 2);
  return check(
      "covariance_term", {q}, [&] { return reg::covariance_term(q); },
      kOpThreshold, corrupt);
}

OpCheck check_sinkhorn_unrolled(Rng& rng, bool corrupt) {
  const std::size_t d = 3;
  Tensor m = random_tensor({d, d}, rng, 0.0, 2.0);
  Tensor mu_logits = random_tensor({d}, rng, -1, 1);
  Tensor nu_logits = random_tensor({d}, rng, -1, 1);
  ot::SinkhornOptions opts;
  opts.mode = ot::SinkhornMode::kUnrolled;
  opts.unrolled_iters = 30;
  auto loss = [&] {
    ot::TransportProblem problem{
        m, ot::Marginal::from_tensor(softmax(mu_logits, 0)),
        ot::Marginal::from_tensor(softmax(nu_logits, 0)), 0.1};
    ot::TransportPlan plan = ot::sinkhorn(problem, opts);
    return ot::ot_loss(plan, m);
  };
  return check("sinkhorn_unrolled", {m, mu_logits, nu_logits}, loss,
               kCompositeThreshold, corrupt);
}

OpCheck check_loss_total(Rng& rng, bool corrupt) {
  // Tiny end-to-end configuration: 2 samples, 8x8 images, d=8, n_tok=4.
  model::EncoderConfig enc;
  enc.blocks = {{8, 3, 2}, {8, 3, 2}};
  enc.input_h = enc.input_w = 8;
  model::ExpanderConfig exp;
  exp.widths = {16, 16, 16};
  model::ModelParams params =
      model::ModelParams::init(enc, exp, 4, 2, 1.0, rng.next_u64());

  model::ObjectiveConfig obj;
  obj.weights = {0.6, 25.0, 1.0};
  obj.ot_epsilon = 0.1;
  obj.sinkhorn.mode = ot::SinkhornMode::kUnrolled;
  obj.sinkhorn.unrolled_iters = 20;

  std::vector<Tensor> batch_s, batch_t;
  for (int i = 0; i < 2; ++i) {
    batch_s.push_back(random_tensor({1, 8, 8}, rng, 0.05, 0.95, false));
    batch_t.push_back(random_tensor({1, 8, 8}, rng, 0.05, 0.95, false));
  }

  std::vector<Tensor> leaves;
  for (const model::NamedParam& p : params.parameters()) {
    leaves.push_back(p.tensor);
  }
  auto loss = [&] {
    // Reset running stats so batchnorm's side effects stay out of the
    // differences.
    for (auto& [name, buf] : params.buffers()) {
      const bool is_var = name.find("running_var") != std::string::npos;
      buf->assign(buf->size(), is_var ? 1.0 : 0.0);
    }
    model::ForwardResult fwd =
        model::forward_loss(batch_s, batch_t, params, obj);
    return fwd.total;
  };
  return check("loss_total", leaves, loss, kCompositeThreshold, corrupt);
}

}  // namespace

std::string Report::to_string() const {
  std::string out;
  char line[160];
  for (const OpCheck& c : checks) {
    std::snprintf(line, sizeof(line), "%-22s max rel err %.3e  (<= %.0e)  %s\n",
                  c.name.c_str(), c.max_rel_err, c.threshold,
                  c.pass ? "ok" : "FAIL");
    out += line;
  }
  out += all_pass ? "gradcheck: all adjoints verified\n"
                  : "gradcheck: FAILURES detected\n";
  return out;
}

Report run(std::uint64_t seed, const std::string& corrupt_op) {
  Rng rng(seed ^ 0x6a09e667f3bcc908ULL);
  Report report;
  report.all_pass = true;

  auto table = op_checks();
  // Registry discipline: every registered differentiable op has exactly one
  // check and the table holds nothing stale.
  for (const char* name : differentiable_op_names()) {
    if (table.find(name) == table.end()) {
      report.checks.push_back(
          {std::string(name) + " (missing check)", 1.0, 0.0, false});
      report.all_pass = false;
    }
  }
  if (table.size() != differentiable_op_names().size()) {
    report.checks.push_back(
        {"registry drift (stale check entries)", 1.0, 0.0, false});
    report.all_pass = false;
  }

  for (const char* name : differentiable_op_names()) {
    const auto it = table.find(name);
    if (it == table.end()) continue;
    OpCheck c = it->second(rng, corrupt_op == name);
    report.all_pass = report.all_pass && c.pass;
    report.checks.push_back(std::move(c));
  }

  using CompositeFn = OpCheck (*)(Rng&, bool);
  const std::pair<const char*, CompositeFn> composites[] = {
      {"batchnorm1d", &check_batchnorm},
      {"cross_attend", &check_cross_attend},
      {"variance_term", &check_variance_term},
      {"covariance_term", &check_covariance_term},
      {"sinkhorn_unrolled", &check_sinkhorn_unrolled},
      {"loss_total", &check_loss_total},
  };
  for (const auto& [name, fn] : composites) {
    OpCheck c = fn(rng, corrupt_op == name);
    report.all_pass = report.all_pass && c.pass;
    report.checks.push_back(std::move(c));
  }
  return report;
}

}  // namespace otml::gradcheck
