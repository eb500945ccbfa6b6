#include "otml/ot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <utility>
#include <vector>

namespace otml::ot {

namespace {

// Spec'd pivot threshold for the simplex: costs live in [0,2], so an
// absolute epsilon is adequate.
constexpr double kSimplexTol = 1e-12;

// Clip to [-1, 1] with identity gradient. Exact cosine values can spill past
// 1 by a couple of ulps; this keeps the documented bounds without killing the
// gradient of perfectly aligned channels.
Tensor unit_clip(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = std::clamp(v, -1.0, 1.0);
  auto xn = x.node_ptr();
  const std::size_t n = out.size();
  return make_op_result("unit_clip", x.shape(), std::move(out), {x},
                        [xn, n](const detail::Node& self) {
                          xn->add_grad(self.grad->data(), n);
                        });
}

void marginal_errors(const std::vector<double>& t, std::size_t d,
                     const std::vector<double>& mu,
                     const std::vector<double>& nu, double* row_err,
                     double* col_err) {
  double re = 0.0, ce = 0.0;
  std::vector<double> col(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      row += t[i * d + j];
      col[j] += t[i * d + j];
    }
    re += std::abs(row - mu[i]);
  }
  for (std::size_t j = 0; j < d; ++j) ce += std::abs(col[j] - nu[j]);
  *row_err = re;
  *col_err = ce;
}

double inner(const std::vector<double>& a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

FeatureMap FeatureMap::from_tensor(Tensor t) {
  if (t.rank() != 2) {
    throw ShapeError("feature map must be rank 2 [channels, spatial], got " +
                     shape_str(t.shape()));
  }
  if (t.shape()[0] < 2 || t.shape()[1] < 1) {
    throw ShapeError("feature map needs >= 2 channels and >= 1 position");
  }
  return FeatureMap{std::move(t)};
}

Marginal Marginal::from_tensor(Tensor t) {
  if (t.rank() != 1 || t.shape()[0] == 0) {
    throw ShapeError("marginal must be a non-empty vector");
  }
  double total = 0.0;
  for (double v : t.data()) {
    if (v <= 0.0) throw DomainError("marginal entries must be positive");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw DomainError("marginal must sum to 1 (got " + std::to_string(total) +
                      ")");
  }
  return Marginal{std::move(t)};
}

void TransportProblem::validate() const {
  if (cost.rank() != 2 || cost.shape()[0] != cost.shape()[1]) {
    throw ShapeError("transport cost must be square");
  }
  if (cost.shape()[0] != mu.dim() || cost.shape()[0] != nu.dim()) {
    throw ShapeError("marginal length does not match cost dimension");
  }
  if (!(epsilon > 0.0)) {
    throw DomainError("sinkhorn regularization epsilon must be positive");
  }
}

Tensor build_discrepancy(const FeatureMap& z_s, const FeatureMap& z_t) {
  if (z_s.channels() != z_t.channels() || z_s.spatial() != z_t.spatial()) {
    throw ShapeError("feature maps disagree: " + shape_str(z_s.values.shape()) +
                     " vs " + shape_str(z_t.values.shape()));
  }
  for (const FeatureMap* fm : {&z_s, &z_t}) {
    const std::size_t d = fm->channels(), hw = fm->spatial();
    auto data = fm->values.data();
    for (std::size_t i = 0; i < d; ++i) {
      double norm2 = 0.0;
      for (std::size_t j = 0; j < hw; ++j) {
        const double v = data[i * hw + j];
        norm2 += v * v;
      }
      if (norm2 == 0.0) {
        throw DomainError("degenerate feature: channel row " +
                          std::to_string(i) + " is the zero vector");
      }
    }
  }

  const std::size_t d = z_s.channels();
  Tensor ones = Tensor::full({d}, 1.0);
  Tensor s_hat = rows_scale(z_s.values,
                            div(ones, l2_norm_along_axis(z_s.values, 1)));
  Tensor t_hat = rows_scale(z_t.values,
                            div(ones, l2_norm_along_axis(z_t.values, 1)));
  return unit_clip(matmul(s_hat, transpose(t_hat)));
}

Tensor build_cost(const Tensor& c) {
  if (c.rank() != 2) throw ShapeError("discrepancy matrix must be rank 2");
  for (double v : c.data()) {
    if (v < -1.0 || v > 1.0) {
      throw DomainError("discrepancy entries must lie in [-1, 1]");
    }
  }
  return add_scalar(neg(c), 1.0);
}

namespace {

// Plain-array log-domain Sinkhorn used by the detached path. Runs until both
// L1 marginal violations drop to tol or the iteration budget is exhausted.
struct RawSinkhorn {
  std::vector<double> coupling;
  std::size_t iterations = 0;
  double marginal_error = 0.0;
};

RawSinkhorn sinkhorn_raw(std::span<const double> m, std::size_t d,
                         std::span<const double> mu, std::span<const double> nu,
                         double eps, std::size_t max_iters, double tol) {
  std::vector<double> log_mu(d), log_nu(d), f(d, 0.0), g(d, 0.0), t(d * d);
  for (std::size_t i = 0; i < d; ++i) log_mu[i] = std::log(mu[i]);
  for (std::size_t j = 0; j < d; ++j) log_nu[j] = std::log(nu[j]);

  auto rebuild_plan = [&] {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        t[i * d + j] = std::exp((f[i] + g[j] - m[i * d + j]) / eps);
      }
    }
  };

  std::vector<double> mu_vec(mu.begin(), mu.end());
  std::vector<double> nu_vec(nu.begin(), nu.end());
  const std::size_t check_every = 10;
  std::size_t it = 0;
  double err = std::numeric_limits<double>::infinity();
  while (it < max_iters) {
    ++it;
    for (std::size_t i = 0; i < d; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < d; ++j) {
        mx = std::max(mx, (g[j] - m[i * d + j]) / eps);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        z += std::exp((g[j] - m[i * d + j]) / eps - mx);
      }
      f[i] = eps * (log_mu[i] - (mx + std::log(z)));
    }
    for (std::size_t j = 0; j < d; ++j) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < d; ++i) {
        mx = std::max(mx, (f[i] - m[i * d + j]) / eps);
      }
      double z = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        z += std::exp((f[i] - m[i * d + j]) / eps - mx);
      }
      g[j] = eps * (log_nu[j] - (mx + std::log(z)));
    }
    if (it % check_every == 0 || it == max_iters) {
      rebuild_plan();
      double re, ce;
      marginal_errors(t, d, mu_vec, nu_vec, &re, &ce);
      err = std::max(re, ce);
      if (err <= tol) break;
    }
  }
  rebuild_plan();
  double re, ce;
  marginal_errors(t, d, mu_vec, nu_vec, &re, &ce);
  return RawSinkhorn{std::move(t), it, std::max(re, ce)};
}

TransportPlan sinkhorn_unrolled(const TransportProblem& p,
                                const SinkhornOptions& opts) {
  const std::size_t d = p.dim();
  const double inv_eps = 1.0 / p.epsilon;

  Tensor log_mu = log(p.mu.weights);
  Tensor log_nu = log(p.nu.weights);
  Tensor neg_m_over_eps = mul_scalar(p.cost, -inv_eps);

  Tensor f = Tensor::zeros({d});
  Tensor g = Tensor::zeros({d});
  for (std::size_t it = 0; it < opts.unrolled_iters; ++it) {
    Tensor xf = cols_add(neg_m_over_eps, mul_scalar(g, inv_eps));
    f = mul_scalar(sub(log_mu, logsumexp_along_axis(xf, 1)), p.epsilon);
    Tensor xg = rows_add(neg_m_over_eps, mul_scalar(f, inv_eps));
    g = mul_scalar(sub(log_nu, logsumexp_along_axis(xg, 0)), p.epsilon);
  }
  Tensor coupling = exp(rows_add(cols_add(neg_m_over_eps, mul_scalar(g, inv_eps)),
                                 mul_scalar(f, inv_eps)));

  TransportPlan plan;
  plan.coupling = coupling;
  plan.iterations = opts.unrolled_iters;
  plan.tol = opts.tol;
  std::vector<double> t(coupling.data().begin(), coupling.data().end());
  std::vector<double> mu(p.mu.weights.data().begin(), p.mu.weights.data().end());
  std::vector<double> nu(p.nu.weights.data().begin(), p.nu.weights.data().end());
  double re, ce;
  marginal_errors(t, d, mu, nu, &re, &ce);
  plan.marginal_error = std::max(re, ce);
  plan.cost = inner(t, p.cost.data());
  return plan;
}

}  // namespace

TransportPlan sinkhorn(const TransportProblem& problem,
                       const SinkhornOptions& options) {
  problem.validate();
  if (options.mode == SinkhornMode::kUnrolled) {
    return sinkhorn_unrolled(problem, options);
  }

  const std::size_t d = problem.dim();
  RawSinkhorn raw =
      sinkhorn_raw(problem.cost.data(), d, problem.mu.weights.data(),
                   problem.nu.weights.data(), problem.epsilon,
                   options.max_iters, options.tol);

  TransportPlan plan;
  plan.cost = inner(raw.coupling, problem.cost.data());
  plan.iterations = raw.iterations;
  plan.marginal_error = raw.marginal_error;
  plan.tol = options.tol;
  plan.coupling = Tensor::from_data({d, d}, std::move(raw.coupling));

  if (plan.marginal_error > 100.0 * options.tol) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "sinkhorn did not converge: marginal error %.3e > 100 x tol "
                  "%.1e after %zu iterations",
                  plan.marginal_error, options.tol, plan.iterations);
    throw OtConvergenceError(buf, plan);
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Transportation simplex
// ---------------------------------------------------------------------------

namespace {

struct SimplexState {
  std::size_t d;
  std::vector<double> cost;
  std::vector<double> flow;     // d*d, meaningful on basic cells
  std::vector<char> basic;      // d*d membership flags
  std::size_t basic_count = 0;

  std::size_t idx(std::size_t i, std::size_t j) const { return i * d + j; }
};

// Northwest-corner start. Moves one index per placement so the basis ends up
// with exactly 2d-1 cells, keeping zero-flow cells on degenerate ties.
void northwest_corner(SimplexState& s, std::vector<double> supply,
                      std::vector<double> demand) {
  std::size_t i = 0, j = 0;
  const std::size_t target = 2 * s.d - 1;
  while (s.basic_count < target) {
    const double q = std::min(supply[i], demand[j]);
    s.flow[s.idx(i, j)] = q;
    s.basic[s.idx(i, j)] = 1;
    ++s.basic_count;
    supply[i] -= q;
    demand[j] -= q;
    if (s.basic_count == target) break;
    if (supply[i] <= demand[j] && i + 1 < s.d) {
      ++i;
    } else {
      ++j;
    }
  }
}

// Solve u_i + v_j = c_ij over the basic spanning tree (u_0 = 0).
void potentials(const SimplexState& s, std::vector<double>& u,
                std::vector<double>& v) {
  const std::size_t d = s.d;
  std::vector<char> u_set(d, 0), v_set(d, 0);
  u.assign(d, 0.0);
  v.assign(d, 0.0);
  u_set[0] = 1;
  bool progress = true;
  std::size_t assigned = 1;
  while (assigned < 2 * d && progress) {
    progress = false;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        if (!s.basic[s.idx(i, j)]) continue;
        if (u_set[i] && !v_set[j]) {
          v[j] = s.cost[s.idx(i, j)] - u[i];
          v_set[j] = 1;
          ++assigned;
          progress = true;
        } else if (v_set[j] && !u_set[i]) {
          u[i] = s.cost[s.idx(i, j)] - v[j];
          u_set[i] = 1;
          ++assigned;
          progress = true;
        }
      }
    }
  }
  if (assigned != 2 * d) {
    throw NumericError("transportation simplex: basis lost connectivity");
  }
}

// Unique alternating cycle that the entering cell closes: path through the
// basic spanning tree from the entering row vertex to its column vertex.
// Returned as cells, entering first; odd positions give up flow.
std::vector<std::pair<std::size_t, std::size_t>> find_cycle(
    const SimplexState& s, std::size_t ei, std::size_t ej) {
  const std::size_t d = s.d;
  // Vertices: rows 0..d-1, cols d..2d-1. DFS over basic edges.
  std::vector<int> parent(2 * d, -1);
  std::vector<char> seen(2 * d, 0);
  std::vector<std::size_t> stack;
  stack.push_back(ei);
  seen[ei] = 1;
  while (!stack.empty()) {
    const std::size_t vtx = stack.back();
    stack.pop_back();
    if (vtx < d) {
      const std::size_t i = vtx;
      for (std::size_t j = 0; j < d; ++j) {
        if (!s.basic[s.idx(i, j)] || seen[d + j]) continue;
        seen[d + j] = 1;
        parent[d + j] = static_cast<int>(vtx);
        stack.push_back(d + j);
      }
    } else {
      const std::size_t j = vtx - d;
      for (std::size_t i = 0; i < d; ++i) {
        if (!s.basic[s.idx(i, j)] || seen[i]) continue;
        seen[i] = 1;
        parent[i] = static_cast<int>(vtx);
        stack.push_back(i);
      }
    }
  }
  if (!seen[d + ej]) {
    throw NumericError("transportation simplex: no cycle for entering cell");
  }

  // Walk col(ej) -> ... -> row(ei); every consecutive vertex pair is a basic
  // cell. Prepending the entering cell closes the cycle.
  std::vector<std::pair<std::size_t, std::size_t>> cycle{{ei, ej}};
  std::size_t vtx = d + ej;
  while (vtx != ei) {
    const std::size_t pv = static_cast<std::size_t>(parent[vtx]);
    if (vtx >= d) {
      cycle.emplace_back(pv, vtx - d);  // row par -> this col
    } else {
      cycle.emplace_back(vtx, pv - d);  // this row -> col parent
    }
    vtx = pv;
  }
  return cycle;
}

}  // namespace

TransportPlan exact_ot_oracle(const Tensor& cost, const Marginal& mu,
                              const Marginal& nu) {
  if (cost.rank() != 2 || cost.shape()[0] != cost.shape()[1]) {
    throw ShapeError("oracle cost must be square");
  }
  const std::size_t d = cost.shape()[0];
  if (d != mu.dim() || d != nu.dim()) {
    throw ShapeError("oracle marginal length does not match cost dimension");
  }
  if (d > 16) {
    throw DomainError("exact_ot_oracle dimension guard: d <= 16 required");
  }

  SimplexState s;
  s.d = d;
  s.cost.assign(cost.data().begin(), cost.data().end());
  s.flow.assign(d * d, 0.0);
  s.basic.assign(d * d, 0);
  northwest_corner(s, {mu.weights.data().begin(), mu.weights.data().end()},
                   {nu.weights.data().begin(), nu.weights.data().end()});

  std::vector<double> u, v;
  std::size_t pivots = 0;
  const std::size_t pivot_cap = 100000;
  while (true) {
    potentials(s, u, v);

    // Bland's rule: the lowest-index cell with a negative reduced cost.
    std::size_t ei = d, ej = d;
    for (std::size_t i = 0; i < d && ei == d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        if (s.basic[s.idx(i, j)]) continue;
        if (s.cost[s.idx(i, j)] - u[i] - v[j] < -kSimplexTol) {
          ei = i;
          ej = j;
          break;
        }
      }
    }
    if (ei == d) break;  // optimal

    auto cycle = find_cycle(s, ei, ej);
    double theta = std::numeric_limits<double>::infinity();
    std::size_t leave_pos = 0;
    for (std::size_t p = 1; p < cycle.size(); p += 2) {
      const double fl = s.flow[s.idx(cycle[p].first, cycle[p].second)];
      const std::size_t lin = s.idx(cycle[p].first, cycle[p].second);
      // Bland again on ties: smallest linear index leaves.
      if (fl < theta - kSimplexTol ||
          (std::abs(fl - theta) <= kSimplexTol &&
           lin < s.idx(cycle[leave_pos].first, cycle[leave_pos].second))) {
        theta = fl;
        leave_pos = p;
      }
    }
    for (std::size_t p = 0; p < cycle.size(); ++p) {
      const std::size_t lin = s.idx(cycle[p].first, cycle[p].second);
      if (p % 2 == 0) {
        s.flow[lin] += theta;
      } else {
        s.flow[lin] -= theta;
      }
    }
    const std::size_t leave_lin =
        s.idx(cycle[leave_pos].first, cycle[leave_pos].second);
    s.flow[leave_lin] = 0.0;
    s.basic[leave_lin] = 0;
    s.basic[s.idx(ei, ej)] = 1;
    s.flow[s.idx(ei, ej)] = theta;
    if (++pivots > pivot_cap) {
      throw ConvergenceError("transportation simplex exceeded pivot cap");
    }
  }

  for (double& fl : s.flow) {
    if (fl < 0.0 && fl > -1e-15) fl = 0.0;
  }

  TransportPlan plan;
  plan.cost = inner(s.flow, cost.data());
  plan.iterations = pivots;
  plan.tol = 0.0;
  std::vector<double> mu_vec(mu.weights.data().begin(), mu.weights.data().end());
  std::vector<double> nu_vec(nu.weights.data().begin(), nu.weights.data().end());
  double re, ce;
  marginal_errors(s.flow, d, mu_vec, nu_vec, &re, &ce);
  plan.marginal_error = std::max(re, ce);
  plan.coupling = Tensor::from_data({d, d}, std::move(s.flow));
  return plan;
}

Tensor ot_loss(const TransportPlan& plan, const Tensor& cost) {
  if (plan.coupling.shape() != cost.shape()) {
    throw ShapeError("plan and cost shapes disagree");
  }
  return sum(mul(plan.coupling, cost));
}

}  // namespace otml::ot
