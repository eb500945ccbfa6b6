#include "otml/cvsim.hpp"

#include <cmath>
#include <vector>

namespace otml::cvsim {

namespace {

// Random orthogonal matrix (modified Gram-Schmidt to orthonormal rows, then
// a global scale).
Tensor orthogonal_init(std::size_t d, double scale, Rng& rng) {
  std::vector<double> rows(d * d);
  for (double& v : rows) v = rng.normal();
  for (std::size_t i = 0; i < d; ++i) {
    double* ri = rows.data() + i * d;
    double norm = 0.0;
    for (;;) {
      for (std::size_t k = 0; k < i; ++k) {
        const double* rk = rows.data() + k * d;
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += ri[j] * rk[j];
        for (std::size_t j = 0; j < d; ++j) ri[j] -= dot * rk[j];
      }
      norm = 0.0;
      for (std::size_t j = 0; j < d; ++j) norm += ri[j] * ri[j];
      norm = std::sqrt(norm);
      if (norm >= 1e-12) break;
      for (std::size_t j = 0; j < d; ++j) ri[j] = rng.normal();
    }
    for (std::size_t j = 0; j < d; ++j) ri[j] /= norm;
  }
  for (double& v : rows) v *= scale;
  return Tensor::from_data({d, d}, std::move(rows), true);
}

}  // namespace

CvSimParams CvSimParams::init(std::size_t dim, std::size_t token_count,
                              std::size_t heads, Rng& rng) {
  CvSimParams p;
  p.token_count = token_count;
  p.heads = heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  p.w_q = orthogonal_init(dim, scale, rng);
  p.w_k = orthogonal_init(dim, scale, rng);
  p.w_v = orthogonal_init(dim, scale, rng);
  p.validate(dim);
  return p;
}

void CvSimParams::validate(std::size_t dim) const {
  if (token_count == 0 || heads == 0) {
    throw ConfigError("cv-sim: token_count and heads must be positive");
  }
  if (dim % token_count != 0) {
    throw ConfigError("cv-sim: feature dim " + std::to_string(dim) +
                      " not divisible by token_count " +
                      std::to_string(token_count));
  }
  const std::size_t token_width = dim / token_count;
  if (token_width % heads != 0) {
    throw ConfigError("cv-sim: token width " + std::to_string(token_width) +
                      " not divisible by heads " + std::to_string(heads));
  }
  if (w_q.defined() &&
      (w_q.shape() != Shape{dim, dim} || w_k.shape() != Shape{dim, dim} ||
       w_v.shape() != Shape{dim, dim})) {
    throw ConfigError("cv-sim: projection weights must be d x d");
  }
}

Tensor cross_attend(const Tensor& g_src, const Tensor& g_tgt,
                    const CvSimParams& params) {
  if (g_src.rank() != 1 || g_tgt.rank() != 1 ||
      g_src.shape() != g_tgt.shape()) {
    throw ShapeError("cross_attend expects two vectors of equal length");
  }
  const std::size_t d = g_src.shape()[0];
  params.validate(d);
  const std::size_t n_tok = params.token_count;
  const std::size_t tok_w = d / n_tok;
  const std::size_t head_w = tok_w / params.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_w));

  Tensor q = reshape(matmul(params.w_q, g_src), {n_tok, tok_w});
  Tensor k = reshape(matmul(params.w_k, g_tgt), {n_tok, tok_w});
  Tensor v = reshape(matmul(params.w_v, g_tgt), {n_tok, tok_w});

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(params.heads);
  for (std::size_t h = 0; h < params.heads; ++h) {
    Tensor qh = slice(q, 1, h * head_w, head_w);
    Tensor kh = slice(k, 1, h * head_w, head_w);
    Tensor vh = slice(v, 1, h * head_w, head_w);
    Tensor scores = mul_scalar(matmul(qh, transpose(kh)), scale);
    Tensor weights = softmax(scores, 1);
    head_outputs.push_back(matmul(weights, vh));
  }
  Tensor merged =
      params.heads == 1 ? head_outputs[0] : concat(head_outputs, 1);
  return reshape(merged, {d});
}

MarginalPair make_marginals(const Tensor& g_s, const Tensor& g_t,
                            const CvSimParams& branch_s,
                            const CvSimParams& branch_t, double temperature) {
  if (!(temperature > 0.0)) {
    throw DomainError("marginal softmax temperature must be positive");
  }
  MarginalPair out;
  out.r_s = cross_attend(g_s, g_t, branch_s);
  out.r_t = cross_attend(g_t, g_s, branch_t);
  out.mu = ot::Marginal::from_tensor(
      softmax(mul_scalar(out.r_s, 1.0 / temperature), 0));
  out.nu = ot::Marginal::from_tensor(
      softmax(mul_scalar(out.r_t, 1.0 / temperature), 0));
  return out;
}

}  // namespace otml::cvsim
