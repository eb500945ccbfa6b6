#pragma once

#include <cstddef>

#include "otml/ot.hpp"
#include "otml/rng.hpp"
#include "otml/tensor.hpp"

namespace otml::cvsim {

// Projection weights and geometry for one cross-view attention branch.
// A pooled d-vector is viewed as token_count tokens of width d/token_count,
// split across `heads` subspaces, so the attention has a real target axis.
struct CvSimParams {
  Tensor w_q, w_k, w_v;  // [d, d]
  std::size_t heads = 1;
  std::size_t token_count = 8;

  // Orthogonal init scaled by 1/sqrt(d): keeps the early marginals smooth
  // instead of near one-hot.
  static CvSimParams init(std::size_t dim, std::size_t token_count,
                          std::size_t heads, Rng& rng);

  std::size_t dim() const { return w_q.defined() ? w_q.shape()[0] : 0; }
  void validate(std::size_t dim) const;
};

// q = W_q g_src, k = W_k g_tgt, v = W_v g_tgt; per head, scaled dot-product
// attention over the target tokens; heads and tokens re-flattened to R^d.
Tensor cross_attend(const Tensor& g_src, const Tensor& g_tgt,
                    const CvSimParams& params);

struct MarginalPair {
  ot::Marginal mu, nu;
  Tensor r_s, r_t;  // refined vectors before the softmax
};

// r_s = attend(g_s -> g_t), r_t = attend(g_t -> g_s) with the roles of the
// views interchanged; softmax(r / temperature) gives the transport marginals.
MarginalPair make_marginals(const Tensor& g_s, const Tensor& g_t,
                            const CvSimParams& branch_s,
                            const CvSimParams& branch_t, double temperature);

}  // namespace otml::cvsim
