#include "otml/model.hpp"

#include <cmath>
#include <utility>

#include "otml/regularizers.hpp"

namespace otml::model {

std::size_t EncoderConfig::final_channels() const {
  if (blocks.empty()) throw ConfigError("encoder needs at least one block");
  return blocks.back().out_channels;
}

std::pair<std::size_t, std::size_t> EncoderConfig::output_spatial() const {
  std::size_t h = input_h, w = input_w;
  for (const ConvBlockSpec& b : blocks) {
    const std::size_t pad = b.kernel / 2;
    if (b.kernel > h + 2 * pad || b.kernel > w + 2 * pad || b.stride == 0) {
      throw ConfigError("encoder block geometry invalid at kernel " +
                        std::to_string(b.kernel));
    }
    h = (h + 2 * pad - b.kernel) / b.stride + 1;
    w = (w + 2 * pad - b.kernel) / b.stride + 1;
  }
  return {h, w};
}

void EncoderConfig::validate() const {
  const auto [h, w] = output_spatial();
  if (h < 2 || w < 2) {
    throw ConfigError("encoder output spatial size must be >= 2x2, got " +
                      std::to_string(h) + "x" + std::to_string(w));
  }
  if (final_channels() < 8) {
    throw ConfigError("encoder must end with >= 8 channels");
  }
}

void ExpanderConfig::validate() const {
  if (widths.empty()) throw ConfigError("expander needs at least one layer");
  for (std::size_t w : widths) {
    if (w == 0) throw ConfigError("expander layer width must be positive");
  }
}

void LossWeights::validate() const {
  if (alpha < 0 || beta < 0 || eta < 0) {
    throw ConfigError("loss weights must be nonnegative");
  }
}

namespace {

// Kaiming-style init for rectifier stacks.
Tensor he_init(Shape shape, std::size_t fan_in, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& x : v) x = rng.normal() * scale;
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

}  // namespace

ModelParams ModelParams::init(const EncoderConfig& enc,
                              const ExpanderConfig& exp,
                              std::size_t token_count, std::size_t heads,
                              double temperature, std::uint64_t seed) {
  enc.validate();
  exp.validate();
  if (!(temperature > 0.0)) {
    throw ConfigError("softmax temperature must be positive");
  }

  ModelParams p;
  p.encoder_cfg = enc;
  p.expander_cfg = exp;
  p.token_count = token_count;
  p.heads = heads;
  p.temperature = temperature;

  Rng rng(seed);
  std::size_t c_in = 1;
  for (const ConvBlockSpec& b : enc.blocks) {
    const std::size_t fan_in = c_in * b.kernel * b.kernel;
    p.encoder.kernels.push_back(
        he_init({b.out_channels, c_in, b.kernel, b.kernel}, fan_in, rng));
    p.encoder.biases.push_back(Tensor::zeros({b.out_channels}, true));
    c_in = b.out_channels;
  }

  std::size_t in_w = enc.final_channels();
  for (std::size_t li = 0; li < exp.widths.size(); ++li) {
    const std::size_t out_w = exp.widths[li];
    p.expander.weights.push_back(he_init({in_w, out_w}, in_w, rng));
    p.expander.biases.push_back(Tensor::zeros({out_w}, true));
    if (li + 1 < exp.widths.size()) {
      p.expander.norms.emplace_back(out_w, exp.bn_eps);
    }
    in_w = out_w;
  }

  const std::size_t d = enc.final_channels();
  p.attn_s = cvsim::CvSimParams::init(d, token_count, heads, rng);
  p.attn_t = cvsim::CvSimParams::init(d, token_count, heads, rng);
  return p;
}

std::vector<NamedParam> ModelParams::parameters() {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < encoder.kernels.size(); ++i) {
    out.push_back({"encoder.block" + std::to_string(i) + ".kernel",
                   encoder.kernels[i], false});
    out.push_back({"encoder.block" + std::to_string(i) + ".bias",
                   encoder.biases[i], true});
  }
  for (std::size_t i = 0; i < expander.weights.size(); ++i) {
    out.push_back({"expander.layer" + std::to_string(i) + ".weight",
                   expander.weights[i], false});
    out.push_back({"expander.layer" + std::to_string(i) + ".bias",
                   expander.biases[i], true});
  }
  for (std::size_t i = 0; i < expander.norms.size(); ++i) {
    out.push_back({"expander.norm" + std::to_string(i) + ".gamma",
                   expander.norms[i].gamma(), true});
    out.push_back({"expander.norm" + std::to_string(i) + ".beta",
                   expander.norms[i].beta(), true});
  }
  out.push_back({"cvsim.s.w_q", attn_s.w_q, false});
  out.push_back({"cvsim.s.w_k", attn_s.w_k, false});
  out.push_back({"cvsim.s.w_v", attn_s.w_v, false});
  out.push_back({"cvsim.t.w_q", attn_t.w_q, false});
  out.push_back({"cvsim.t.w_k", attn_t.w_k, false});
  out.push_back({"cvsim.t.w_v", attn_t.w_v, false});
  return out;
}

std::vector<std::pair<std::string, std::vector<double>*>>
ModelParams::buffers() {
  std::vector<std::pair<std::string, std::vector<double>*>> out;
  for (std::size_t i = 0; i < expander.norms.size(); ++i) {
    out.emplace_back("expander.norm" + std::to_string(i) + ".running_mean",
                     &expander.norms[i].running_mean());
    out.emplace_back("expander.norm" + std::to_string(i) + ".running_var",
                     &expander.norms[i].running_var());
  }
  return out;
}

ot::FeatureMap encode(const Tensor& image, const EncoderConfig& cfg,
                      const EncoderParams& params) {
  if (image.rank() != 3 || image.shape()[0] != 1 ||
      image.shape()[1] != cfg.input_h || image.shape()[2] != cfg.input_w) {
    throw ShapeError("encoder expects a [1," + std::to_string(cfg.input_h) +
                     "," + std::to_string(cfg.input_w) + "] image, got " +
                     shape_str(image.shape()));
  }
  Tensor x = image;
  for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
    const ConvBlockSpec& b = cfg.blocks[i];
    x = conv2d(x, params.kernels[i], b.stride, b.kernel / 2);
    x = channel_add(x, params.biases[i]);
    if (i + 1 < cfg.blocks.size()) {
      x = relu(x);
    } else {
      // The final rectifier leaks: a hard rectifier can leave a channel row
      // identically zero, which the cosine alignment rejects as degenerate.
      x = sub(relu(x), mul_scalar(relu(neg(x)), 0.01));
    }
  }
  const Shape& s = x.shape();
  return ot::FeatureMap::from_tensor(reshape(x, {s[0], s[1] * s[2]}));
}

Tensor gap(const ot::FeatureMap& z) { return mean_along_axis(z.values, 1); }

Tensor expand(const Tensor& pooled_batch, ExpanderParams& params,
              bool training) {
  if (pooled_batch.rank() != 2) {
    throw ShapeError("expander expects a [batch, d] matrix");
  }
  Tensor x = pooled_batch;
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    x = cols_add(matmul(x, params.weights[i]), params.biases[i]);
    if (i + 1 < params.weights.size()) {
      x = relu(params.norms[i].forward(x, training));
    }
  }
  return x;
}

std::pair<Tensor, Tensor> pool_and_expand(const ot::FeatureMap& z,
                                          ExpanderParams& params,
                                          bool training) {
  Tensor g = gap(z);
  Tensor q = expand(reshape(g, {1, g.shape()[0]}), params, training);
  return {g, reshape(q, {q.shape()[1]})};
}

ForwardResult forward_loss(const std::vector<Tensor>& batch_s,
                           const std::vector<Tensor>& batch_t,
                           ModelParams& params, const ObjectiveConfig& obj) {
  obj.weights.validate();
  if (batch_s.size() != batch_t.size()) {
    throw ShapeError("view batches must have equal size");
  }
  const std::size_t n = batch_s.size();
  if (n < 2) throw BatchSizeError("forward_loss needs a batch of >= 2");

  std::vector<Tensor> per_sample_ot;
  std::vector<Tensor> pooled_s, pooled_t;
  per_sample_ot.reserve(n);
  pooled_s.reserve(n);
  pooled_t.reserve(n);
  std::size_t iteration_sum = 0;
  double worst_marginal = 0.0;

  for (std::size_t i = 0; i < n; ++i) {
    ot::FeatureMap z_s = encode(batch_s[i], params.encoder_cfg, params.encoder);
    ot::FeatureMap z_t = encode(batch_t[i], params.encoder_cfg, params.encoder);

    Tensor g_s = gap(z_s);
    Tensor g_t = gap(z_t);

    Tensor c = ot::build_discrepancy(z_s, z_t);
    Tensor m = ot::build_cost(c);
    cvsim::MarginalPair marginals = cvsim::make_marginals(
        g_s, g_t, params.attn_s, params.attn_t, params.temperature);

    ot::TransportProblem problem{m, marginals.mu, marginals.nu,
                                 obj.ot_epsilon};
    ot::TransportPlan plan = ot::sinkhorn(problem, obj.sinkhorn);
    iteration_sum += plan.iterations;
    worst_marginal = std::max(worst_marginal, plan.marginal_error);

    per_sample_ot.push_back(reshape(ot::ot_loss(plan, m), {1}));
    pooled_s.push_back(reshape(g_s, {1, g_s.shape()[0]}));
    pooled_t.push_back(reshape(g_t, {1, g_t.shape()[0]}));
  }

  Tensor l_ot = mean(concat(per_sample_ot, 0));

  Tensor g_s_batch = concat(pooled_s, 0);
  Tensor g_t_batch = concat(pooled_t, 0);
  ForwardResult result;
  result.q_s = expand(g_s_batch, params.expander, true);
  result.q_t = expand(g_t_batch, params.expander, true);

  Tensor l_var = add(reg::variance_term(result.q_s, obj.var_gamma, obj.var_eps),
                     reg::variance_term(result.q_t, obj.var_gamma, obj.var_eps));
  Tensor l_cov =
      add(reg::covariance_term(result.q_s), reg::covariance_term(result.q_t));

  result.total = add(add(mul_scalar(l_ot, obj.weights.alpha),
                         mul_scalar(l_var, obj.weights.beta)),
                     mul_scalar(l_cov, obj.weights.eta));

  result.breakdown.l_ot = l_ot.value();
  result.breakdown.l_var = l_var.value();
  result.breakdown.l_cov = l_cov.value();
  result.breakdown.total = result.total.value();
  result.breakdown.sinkhorn_iterations = iteration_sum / n;
  result.breakdown.marginal_error = worst_marginal;
  return result;
}

}  // namespace otml::model
