#include "otml/regularizers.hpp"

#include <vector>

namespace otml::reg {

namespace {

void require_batch(const char* what, const Tensor& q) {
  if (q.rank() != 2) {
    throw ShapeError(std::string(what) + " expects a [batch, dim] tensor");
  }
  if (q.shape()[0] < 2) {
    throw BatchSizeError(std::string(what) + " needs a batch of >= 2");
  }
}

}  // namespace

Tensor variance_term(const Tensor& embeddings, double gamma, double eps) {
  require_batch("variance_term", embeddings);
  Tensor var = variance_along_axis(embeddings, 0);
  Tensor std_dev = sqrt(add_scalar(var, eps));
  Tensor hinge = relu(add_scalar(neg(std_dev), gamma));
  return mean(hinge);
}

Tensor covariance_term(const Tensor& embeddings) {
  require_batch("covariance_term", embeddings);
  const std::size_t n = embeddings.shape()[0];
  const std::size_t dim = embeddings.shape()[1];

  Tensor centered = cols_add(embeddings, neg(mean_along_axis(embeddings, 0)));
  Tensor cov = mul_scalar(matmul(transpose(centered), centered),
                          1.0 / static_cast<double>(n - 1));

  // Off-diagonal mask; D = 1 has no off-diagonal entries and yields 0.
  std::vector<double> mask(dim * dim, 1.0);
  for (std::size_t j = 0; j < dim; ++j) mask[j * dim + j] = 0.0;
  Tensor off_diag = mul(cov, Tensor::from_data({dim, dim}, std::move(mask)));
  return mul_scalar(sum(mul(off_diag, off_diag)),
                    1.0 / static_cast<double>(dim));
}

}  // namespace otml::reg
