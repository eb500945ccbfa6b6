#include <doctest.h>

#include <cmath>
#include <vector>

#include "otml/model.hpp"
#include "otml/rng.hpp"

using namespace otml;
using namespace otml::model;

namespace {

Tensor random_image(std::size_t h, std::size_t w, Rng& rng) {
  std::vector<double> v(h * w);
  for (double& x : v) x = rng.uniform(0.05, 0.95);
  return Tensor::from_data({1, h, w}, std::move(v));
}

ModelParams tiny_model(std::uint64_t seed) {
  EncoderConfig enc;
  enc.blocks = {{8, 3, 2}, {8, 3, 2}};
  enc.input_h = enc.input_w = 8;
  ExpanderConfig exp;
  exp.widths = {16, 16, 16};
  return ModelParams::init(enc, exp, 4, 2, 1.0, seed);
}

ObjectiveConfig tiny_objective() {
  ObjectiveConfig obj;
  obj.ot_epsilon = 0.1;
  obj.sinkhorn.mode = ot::SinkhornMode::kUnrolled;
  obj.sinkhorn.unrolled_iters = 20;
  return obj;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("default encoder geometry: 32x32 in, d=32, 4x4 out") {
  EncoderConfig cfg;
  CHECK(cfg.final_channels() == 32);
  const auto [h, w] = cfg.output_spatial();
  CHECK(h == 4);
  CHECK(w == 4);

  ModelParams params = ModelParams::init(cfg, ExpanderConfig{}, 8, 2, 1.0, 1);
  Rng rng(5);
  ot::FeatureMap z = encode(random_image(32, 32, rng), cfg, params.encoder);
  CHECK(z.channels() == 32);
  CHECK(z.spatial() == 16);
}

TEST_CASE("zero image with zero parameters maps to zero") {
  ModelParams params = tiny_model(3);
  for (Tensor& k : params.encoder.kernels) {
    auto data = k.mutable_data();
    std::fill(data.begin(), data.end(), 0.0);
  }
  Tensor zero_img = Tensor::zeros({1, 8, 8});
  ot::FeatureMap z = encode(zero_img, params.encoder_cfg, params.encoder);
  for (double v : z.values.data()) CHECK(v == 0.0);
}

TEST_CASE("encode is deterministic") {
  ModelParams params = tiny_model(7);
  Rng rng(11);
  Tensor img = random_image(8, 8, rng);
  ot::FeatureMap a = encode(img, params.encoder_cfg, params.encoder);
  ot::FeatureMap b = encode(img, params.encoder_cfg, params.encoder);
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    CHECK(a.values.data()[i] == b.values.data()[i]);
  }
}

TEST_CASE("encode rejects geometry mismatches") {
  ModelParams params = tiny_model(7);
  Rng rng(13);
  CHECK_THROWS_AS(encode(random_image(16, 16, rng), params.encoder_cfg,
                         params.encoder),
                  ShapeError);
}

TEST_CASE("gap averages each channel") {
  Tensor values = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  ot::FeatureMap z = ot::FeatureMap::from_tensor(values);
  Tensor g = gap(z);
  CHECK(g.at(0) == doctest::Approx(2.0));
  CHECK(g.at(1) == doctest::Approx(5.0));

  // Constant map pools to the constant.
  ot::FeatureMap c = ot::FeatureMap::from_tensor(Tensor::full({4, 6}, 0.37));
  Tensor pooled = gap(c);
  for (double v : pooled.data()) CHECK(v == doctest::Approx(0.37));
}

TEST_CASE("expander with zero weights yields a finite bias-driven constant") {
  ModelParams params = tiny_model(17);
  for (Tensor& w : params.expander.weights) {
    auto data = w.mutable_data();
    std::fill(data.begin(), data.end(), 0.0);
  }
  Rng rng(19);
  std::vector<double> v(3 * 8);
  for (double& x : v) x = rng.uniform(-1, 1);
  Tensor pooled = Tensor::from_data({3, 8}, std::move(v));
  Tensor q = expand(pooled, params.expander, true);
  CHECK(q.shape() == Shape{3, 16});
  for (double val : q.data()) CHECK(std::isfinite(val));
  // Rows identical: the input no longer matters.
  for (std::size_t j = 0; j < 16; ++j) {
    CHECK(q.at(0, j) == doctest::Approx(q.at(1, j)));
    CHECK(q.at(0, j) == doctest::Approx(q.at(2, j)));
  }
}

TEST_CASE("pool_and_expand per sample: eval works, training needs a batch") {
  ModelParams params = tiny_model(61);
  Rng rng(67);
  ot::FeatureMap z =
      encode(random_image(8, 8, rng), params.encoder_cfg, params.encoder);
  auto [g, q] = pool_and_expand(z, params.expander, false);
  CHECK(g.shape() == Shape{8});
  CHECK(q.shape() == Shape{16});
  for (double v : q.data()) CHECK(std::isfinite(v));

  CHECK_THROWS_AS(pool_and_expand(z, params.expander, true), BatchSizeError);
}

TEST_CASE("weight sharing: one parameter perturbs both branch outputs") {
  ModelParams params = tiny_model(23);
  Rng rng(29);
  Tensor img_a = random_image(8, 8, rng);
  Tensor img_b = random_image(8, 8, rng);

  ot::FeatureMap za0 = encode(img_a, params.encoder_cfg, params.encoder);
  ot::FeatureMap zb0 = encode(img_b, params.encoder_cfg, params.encoder);

  params.encoder.kernels[0].mutable_data()[0] += 0.25;

  ot::FeatureMap za1 = encode(img_a, params.encoder_cfg, params.encoder);
  ot::FeatureMap zb1 = encode(img_b, params.encoder_cfg, params.encoder);

  auto changed = [](const ot::FeatureMap& before, const ot::FeatureMap& after) {
    for (std::size_t i = 0; i < before.values.size(); ++i) {
      if (before.values.data()[i] != after.values.data()[i]) return true;
    }
    return false;
  };
  CHECK(changed(za0, za1));
  CHECK(changed(zb0, zb1));
}

TEST_CASE("forward_loss breakdown recomposes and zero weights zero the total") {
  ModelParams params = tiny_model(31);
  Rng rng(37);
  std::vector<Tensor> bs = {random_image(8, 8, rng), random_image(8, 8, rng)};
  std::vector<Tensor> bt = {random_image(8, 8, rng), random_image(8, 8, rng)};

  ObjectiveConfig obj = tiny_objective();
  Graph g;
  {
    Graph::Scope scope(g);
    ForwardResult r = forward_loss(bs, bt, params, obj);
    const double recomposed = obj.weights.alpha * r.breakdown.l_ot +
                              obj.weights.beta * r.breakdown.l_var +
                              obj.weights.eta * r.breakdown.l_cov;
    CHECK(std::abs(r.breakdown.total - recomposed) <= 1e-9);
    CHECK(r.breakdown.l_ot >= 0.0);
  }

  ObjectiveConfig zeros = tiny_objective();
  zeros.weights = {0.0, 0.0, 0.0};
  Graph g2;
  {
    Graph::Scope scope(g2);
    ForwardResult r = forward_loss(bs, bt, params, zeros);
    CHECK(r.breakdown.total == 0.0);
  }
}

TEST_CASE("identical views with forced shared marginals reach the oracle floor") {
  // mu == nu forced by sharing the branch parameters.
  ModelParams params = tiny_model(47);
  params.attn_t = params.attn_s;
  Rng rng(53);
  std::vector<Tensor> batch = {random_image(8, 8, rng),
                               random_image(8, 8, rng)};
  ObjectiveConfig obj = tiny_objective();
  obj.ot_epsilon = 1e-3;
  obj.sinkhorn.mode = ot::SinkhornMode::kDetached;
  obj.sinkhorn.tol = 1e-9;
  obj.sinkhorn.max_iters = 500000;

  ForwardResult r = forward_loss(batch, batch, params, obj);
  const double d = static_cast<double>(params.encoder_cfg.final_channels());
  CHECK(r.breakdown.l_ot <= obj.ot_epsilon * std::log(d) + 1e-3);
}

TEST_CASE("loss weights must be nonnegative") {
  LossWeights w{-0.1, 25, 1};
  CHECK_THROWS_AS(w.validate(), ConfigError);
}

TEST_CASE("named parameter registry is stable and complete") {
  ModelParams params = tiny_model(59);
  auto named = params.parameters();
  // 2 conv blocks * 2 + 3 expander layers * 2 + 2 norms * 2 + 6 attention.
  CHECK(named.size() == 4 + 6 + 4 + 6);
  auto named2 = params.parameters();
  for (std::size_t i = 0; i < named.size(); ++i) {
    CHECK(named[i].name == named2[i].name);
    CHECK(named[i].tensor.node() == named2[i].tensor.node());
  }
}

TEST_SUITE_END();
