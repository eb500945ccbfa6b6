#pragma once

#include "otml/tensor.hpp"

namespace otml::reg {

// Hinge on per-dimension batch std: (1/D) sum_j max(0, gamma - sqrt(Var_j + eps))
// with the unbiased column variance. Zero once every column std reaches gamma;
// equals gamma under full collapse.
Tensor variance_term(const Tensor& embeddings, double gamma, double eps);

// (1/D) sum of squared off-diagonal entries of the unbiased column covariance.
Tensor covariance_term(const Tensor& embeddings);

}  // namespace otml::reg
