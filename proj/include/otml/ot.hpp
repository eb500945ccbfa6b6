#pragma once

#include <cstddef>
#include <string>

#include "otml/tensor.hpp"

namespace otml::ot {

// Dense per-image activation block: `channels` rows of length `spatial`,
// one row per channel across all spatial positions.
struct FeatureMap {
  Tensor values;  // [channels, spatial]

  static FeatureMap from_tensor(Tensor t);
  std::size_t channels() const { return values.shape()[0]; }
  std::size_t spatial() const { return values.shape()[1]; }
};

// Strictly positive weight vector summing to 1 (checked to 1e-9).
struct Marginal {
  Tensor weights;  // [d]

  static Marginal from_tensor(Tensor t);
  std::size_t dim() const { return weights.shape()[0]; }
};

struct TransportProblem {
  Tensor cost;  // [d, d]
  Marginal mu;
  Marginal nu;
  double epsilon = 0.05;

  void validate() const;
  std::size_t dim() const { return mu.dim(); }
};

// unrolled: the returned coupling stays on the differentiation graph (fixed
// iteration count, no early stop) so gradients reach the cost and both
// marginals. detached: plain scaling loop with early stopping; the coupling
// is a constant and only <T,M> propagates gradient to the cost.
enum class SinkhornMode { kUnrolled, kDetached };

struct SinkhornOptions {
  SinkhornMode mode = SinkhornMode::kUnrolled;
  std::size_t unrolled_iters = 50;
  std::size_t max_iters = 10000;
  double tol = 1e-6;
};

struct TransportPlan {
  Tensor coupling;  // [d, d], nonnegative
  double cost = 0.0;
  std::size_t iterations = 0;
  double marginal_error = 0.0;  // max of the two L1 constraint violations
  double tol = 0.0;             // tolerance the solve was run with
};

// Non-convergence of the detached solver; carries the partial plan.
class OtConvergenceError : public ConvergenceError {
 public:
  OtConvergenceError(const std::string& what, TransportPlan plan)
      : ConvergenceError(what), plan(std::move(plan)) {}
  TransportPlan plan;
};

// C[i][j] = cosine similarity between channel row i of z_s and channel row j
// of z_t. Entries land in [-1, 1] exactly (floating-point spill is clipped
// with an identity-gradient guard); differentiable w.r.t. both inputs.
Tensor build_discrepancy(const FeatureMap& z_s, const FeatureMap& z_t);

// M = 1 - C, entries in [0, 2]. Rejects C outside [-1, 1].
Tensor build_cost(const Tensor& c);

// Entropic OT via log-domain Sinkhorn on dual potentials with max-subtracted
// log-sum-exp. Detached mode raises OtConvergenceError when the marginal
// error still exceeds 100x tol after max_iters.
TransportPlan sinkhorn(const TransportProblem& problem,
                       const SinkhornOptions& options = {});

// Exact LP optimum via the transportation simplex: northwest-corner start,
// MODI pivoting, Bland's rule for anti-cycling. Guarded to d <= 16.
TransportPlan exact_ot_oracle(const Tensor& cost, const Marginal& mu,
                              const Marginal& nu);

// Frobenius inner product <T, M> as a graph scalar.
Tensor ot_loss(const TransportPlan& plan, const Tensor& cost);

}  // namespace otml::ot
