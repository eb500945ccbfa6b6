#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "otml/cvsim.hpp"
#include "otml/ot.hpp"
#include "otml/rng.hpp"
#include "otml/tensor.hpp"

namespace otml::model {

struct ConvBlockSpec {
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
};

// Small configurable conv stack standing in for a full backbone. Same-style
// padding kernel/2, rectifier after every block.
struct EncoderConfig {
  std::vector<ConvBlockSpec> blocks = {
      {8, 3, 2}, {16, 3, 2}, {32, 3, 2}, {32, 3, 1}};
  std::size_t input_h = 32;
  std::size_t input_w = 32;

  std::size_t final_channels() const;
  std::pair<std::size_t, std::size_t> output_spatial() const;
  void validate() const;  // final spatial >= 2x2, final channels >= 8
};

struct ExpanderConfig {
  std::vector<std::size_t> widths = {256, 256, 256};
  double bn_eps = 1e-5;

  void validate() const;
};

struct LossWeights {
  double alpha = 0.6;
  double beta = 25.0;
  double eta = 1.0;

  void validate() const;
};

struct LossBreakdown {
  double l_ot = 0.0;
  double l_var = 0.0;
  double l_cov = 0.0;
  double total = 0.0;
  std::size_t sinkhorn_iterations = 0;
  double marginal_error = 0.0;  // worst sample in the batch
};

struct EncoderParams {
  std::vector<Tensor> kernels;  // per block: [c_out, c_in, k, k]
  std::vector<Tensor> biases;   // per block: [c_out]
};

struct ExpanderParams {
  std::vector<Tensor> weights;       // layer i: [in_i, out_i]
  std::vector<Tensor> biases;        // layer i: [out_i]
  std::vector<BatchNorm1d> norms;    // after every layer but the last
};

// Regularizer constants and OT solve settings bundled with the loss weights.
struct ObjectiveConfig {
  LossWeights weights;
  double var_gamma = 1.0;
  double var_eps = 1e-4;
  double ot_epsilon = 0.05;
  ot::SinkhornOptions sinkhorn;
};

struct NamedParam {
  std::string name;
  Tensor tensor;
  bool decay_exempt = false;  // biases and batchnorm affine
};

// Full trainable state of the siamese pipeline. Both branches share the same
// encoder and expander parameters; CV-SIM keeps one parameter set per branch.
struct ModelParams {
  EncoderConfig encoder_cfg;
  ExpanderConfig expander_cfg;
  std::size_t token_count = 8;
  std::size_t heads = 2;
  double temperature = 1.0;

  EncoderParams encoder;
  ExpanderParams expander;
  cvsim::CvSimParams attn_s, attn_t;

  static ModelParams init(const EncoderConfig& enc, const ExpanderConfig& exp,
                          std::size_t token_count, std::size_t heads,
                          double temperature, std::uint64_t seed);

  // Stable-order registry of every trainable tensor (checkpoint + optimizer).
  std::vector<NamedParam> parameters();
  // Non-trainable state that must persist (batchnorm running statistics).
  std::vector<std::pair<std::string, std::vector<double>*>> buffers();
};

// Dense feature map of the configured geometry, spatially flattened.
ot::FeatureMap encode(const Tensor& image, const EncoderConfig& cfg,
                      const EncoderParams& params);

// Global average pooling: per-channel spatial mean.
Tensor gap(const ot::FeatureMap& z);

// MLP head over a [batch, d] matrix of pooled features; batchnorm + rectifier
// between layers, nothing after the last.
Tensor expand(const Tensor& pooled_batch, ExpanderParams& params,
              bool training);

// Per-sample convenience: (g, q) for one dense map. Training mode propagates
// the batchnorm batch-size error (a single sample has no batch statistics);
// eval mode applies the running statistics.
std::pair<Tensor, Tensor> pool_and_expand(const ot::FeatureMap& z,
                                          ExpanderParams& params,
                                          bool training = false);

struct ForwardResult {
  LossBreakdown breakdown;
  Tensor total;  // scalar on the active graph
  Tensor q_s, q_t;
};

// Full objective over a two-view batch: per-sample OT alignment between the
// dense maps with CV-SIM marginals, plus variance/covariance regularizers on
// the expanded embeddings; total = alpha*l_ot + beta*l_var + eta*l_cov.
ForwardResult forward_loss(const std::vector<Tensor>& batch_s,
                           const std::vector<Tensor>& batch_t,
                           ModelParams& params, const ObjectiveConfig& obj);

}  // namespace otml::model
