#include "otml/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <thread>

namespace otml::train {

namespace {

double l2_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

bool all_zero(std::span<const double> v) {
  for (double x : v) {
    if (x != 0.0) return false;
  }
  return true;
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("OTML_THREADS")) {
    const long n = std::atol(env);
    if (n >= 1) return static_cast<std::size_t>(n);
  }
  return 1;
}

// Index-parallel helper for per-sample work with independent RNG streams;
// results are identical for any thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn fn) {
  const std::size_t workers = std::min(worker_threads(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([t, n, workers, &fn] {
      for (std::size_t i = t; i < n; i += workers) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

void OptimizerConfig::validate() const {
  if (kind != "lars" && kind != "adam") {
    throw ConfigError("optimizer must be 'lars' or 'adam', got '" + kind + "'");
  }
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be >= 0");
}

void lars_update(std::span<double> weights, std::span<const double> grads,
                 std::vector<double>& momentum_buf, double lr,
                 double weight_decay, double momentum, double trust_coeff,
                 bool exempt) {
  if (momentum_buf.size() != weights.size()) {
    momentum_buf.assign(weights.size(), 0.0);
  }
  double local_lr = 1.0;
  double wd = exempt ? 0.0 : weight_decay;
  if (!exempt) {
    const double w_norm = l2_norm({weights.data(), weights.size()});
    const double g_norm = l2_norm(grads);
    local_lr = trust_coeff * w_norm / (g_norm + wd * w_norm + 1e-12);
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double update = grads[i] + wd * weights[i];
    momentum_buf[i] = momentum * momentum_buf[i] + local_lr * update;
    weights[i] -= lr * momentum_buf[i];
  }
}

Optimizer::Optimizer(OptimizerConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
}

void Optimizer::step(std::vector<model::NamedParam>& params) {
  if (momentum_buf_.size() != params.size()) {
    momentum_buf_.assign(params.size(), {});
    adam_m_.assign(params.size(), {});
    adam_v_.assign(params.size(), {});
  }
  ++step_count_;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = params[p].tensor;
    if (!t.has_grad()) continue;
    auto g = t.grad();
    // No signal, no step: keeps a run with all loss weights zeroed bitwise
    // stationary even under weight decay.
    if (all_zero(g)) {
      t.zero_grad();
      continue;
    }
    auto w = t.mutable_data();
    if (cfg_.kind == "lars") {
      lars_update(w, g, momentum_buf_[p], cfg_.lr, cfg_.weight_decay,
                  cfg_.momentum, cfg_.trust_coeff, params[p].decay_exempt);
    } else {
      auto& m = adam_m_[p];
      auto& v = adam_v_[p];
      if (m.size() != w.size()) {
        m.assign(w.size(), 0.0);
        v.assign(w.size(), 0.0);
      }
      const double wd = params[p].decay_exempt ? 0.0 : cfg_.weight_decay;
      const double bc1 =
          1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(step_count_));
      const double bc2 =
          1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(step_count_));
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double grad = g[i] + wd * w[i];
        m[i] = cfg_.adam_beta1 * m[i] + (1.0 - cfg_.adam_beta1) * grad;
        v[i] = cfg_.adam_beta2 * v[i] + (1.0 - cfg_.adam_beta2) * grad * grad;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
      }
    }
    t.zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch size must be >= 2");
  optimizer.validate();
  objective.weights.validate();
  augment.validate();
}

std::string format_metrics_row(const MetricsRow& row) {
  char buf[320];
  std::snprintf(buf, sizeof(buf),
                "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%zu,%.17g,%.17g", row.step,
                row.l_ot, row.l_var, row.l_cov, row.total, row.feat_std,
                row.sinkhorn_iterations, row.marginal_error, row.wall_ms);
  return buf;
}

Trainer::Trainer(const TrainConfig& cfg, model::ModelParams params,
                 std::vector<Tensor> images)
    : cfg_(cfg),
      params_(std::move(params)),
      images_(std::move(images)),
      optimizer_(cfg.optimizer),
      order_rng_(cfg.seed ^ 0x5b8cf1a3d2e94701ULL) {
  cfg_.validate();
  if (images_.size() < cfg_.batch_size) {
    throw ConfigError("dataset smaller than one batch (" +
                      std::to_string(images_.size()) + " < " +
                      std::to_string(cfg_.batch_size) + ")");
  }
  order_.resize(images_.size());
  std::iota(order_.begin(), order_.end(), 0);
  cursor_ = order_.size();  // trigger a shuffle on the first batch
}

std::vector<std::size_t> Trainer::next_batch() {
  std::vector<std::size_t> batch;
  batch.reserve(cfg_.batch_size);
  while (batch.size() < cfg_.batch_size) {
    if (cursor_ >= order_.size()) {
      for (std::size_t i = order_.size(); i > 1; --i) {
        const std::size_t j = order_rng_.uniform_int(i);
        std::swap(order_[i - 1], order_[j]);
      }
      cursor_ = 0;
    }
    batch.push_back(order_[cursor_++]);
  }
  return batch;
}

MetricsRow Trainer::train_step() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::size_t> batch = next_batch();
  const std::size_t n = batch.size();

  std::vector<Tensor> views_s(n), views_t(n);
  const std::uint64_t base = aug_counter_;
  aug_counter_ += 2 * n;
  parallel_for(n, [&](std::size_t i) {
    Rng rs = Rng::stream(cfg_.augment.seed, base + 2 * i);
    Rng rt = Rng::stream(cfg_.augment.seed, base + 2 * i + 1);
    views_s[i] = data::augment(images_[batch[i]], cfg_.augment, rs);
    views_t[i] = data::augment(images_[batch[i]], cfg_.augment, rt);
  });

  Graph graph;
  model::ForwardResult fwd;
  {
    Graph::Scope scope(graph);
    fwd = model::forward_loss(views_s, views_t, params_, cfg_.objective);
    graph.backward(fwd.total);
  }
  auto named = params_.parameters();
  optimizer_.step(named);

  ++step_;
  MetricsRow row;
  row.step = step_;
  row.l_ot = fwd.breakdown.l_ot;
  row.l_var = fwd.breakdown.l_var;
  row.l_cov = fwd.breakdown.l_cov;
  row.total = fwd.breakdown.total;
  row.sinkhorn_iterations = fwd.breakdown.sinkhorn_iterations;
  row.marginal_error = fwd.breakdown.marginal_error;
  row.feat_std = collapse_report(fwd.q_s).mean_feature_std;
  if (!cfg_.deterministic_metrics) {
    row.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
  }
  return row;
}

void Trainer::run(std::ostream& metrics, const std::string& checkpoint_path,
                  std::uint32_t config_digest) {
  metrics << kMetricsHeader << "\n";
  for (std::size_t s = 0; s < cfg_.steps; ++s) {
    MetricsRow row = train_step();
    metrics << format_metrics_row(row) << "\n";
    if (!checkpoint_path.empty() && cfg_.checkpoint_every > 0 &&
        step_ % cfg_.checkpoint_every == 0) {
      data::save_checkpoint(make_checkpoint(config_digest), checkpoint_path);
    }
  }
  metrics.flush();
  if (!checkpoint_path.empty()) {
    data::save_checkpoint(make_checkpoint(config_digest), checkpoint_path);
  }
}

data::Checkpoint Trainer::make_checkpoint(std::uint32_t config_digest) const {
  return snapshot_model(const_cast<model::ModelParams&>(params_), step_,
                        config_digest);
}

data::Checkpoint snapshot_model(model::ModelParams& params, std::uint64_t step,
                                std::uint32_t config_digest) {
  data::Checkpoint ckpt;
  ckpt.step = step;
  ckpt.config_digest = config_digest;
  for (const model::NamedParam& p : params.parameters()) {
    std::vector<double> copy(p.tensor.data().begin(), p.tensor.data().end());
    ckpt.tensors.emplace_back(
        p.name, Tensor::from_data(p.tensor.shape(), std::move(copy)));
  }
  for (const auto& [name, buf] : params.buffers()) {
    ckpt.tensors.emplace_back(name,
                              Tensor::from_data({buf->size()}, *buf));
  }
  return ckpt;
}

void restore_model(model::ModelParams& params, const data::Checkpoint& ckpt) {
  for (model::NamedParam p : params.parameters()) {
    const Tensor* stored = ckpt.find(p.name);
    if (stored == nullptr) {
      throw FormatError("checkpoint is missing tensor '" + p.name + "'");
    }
    if (stored->shape() != p.tensor.shape()) {
      throw FormatError("checkpoint tensor '" + p.name + "' has shape " +
                        shape_str(stored->shape()) + ", expected " +
                        shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    std::copy(stored->data().begin(), stored->data().end(), dst.begin());
    p.tensor.zero_grad();
  }
  for (auto& [name, buf] : params.buffers()) {
    const Tensor* stored = ckpt.find(name);
    if (stored == nullptr) {
      throw FormatError("checkpoint is missing buffer '" + name + "'");
    }
    if (stored->size() != buf->size()) {
      throw FormatError("checkpoint buffer '" + name + "' has wrong length");
    }
    buf->assign(stored->data().begin(), stored->data().end());
  }
}

// ---------------------------------------------------------------------------
// Linear probes
// ---------------------------------------------------------------------------

namespace {

Tensor pooled_features(model::ModelParams& params, const Tensor& image) {
  return model::gap(model::encode(image, params.encoder_cfg, params.encoder));
}

// Per-class stratified pick of floor(fraction * count) members, shuffled with
// the probe seed. Errors when any class would end up empty.
std::vector<std::size_t> stratified_subset(
    const std::vector<std::size_t>& indices,
    const std::vector<std::size_t>& labels, double fraction,
    std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw ConfigError("label fraction must lie in (0, 1]");
  }
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t idx : indices) by_class[labels[idx]].push_back(idx);

  Rng rng(seed ^ 0x9d2c5680cafebabeULL);
  std::vector<std::size_t> subset;
  for (auto& [label, members] : by_class) {
    const std::size_t take = static_cast<std::size_t>(
        std::floor(fraction * static_cast<double>(members.size()) + 1e-9));
    if (take < 1) {
      throw DomainError("label fraction " + std::to_string(fraction) +
                        " yields no samples for class " +
                        std::to_string(label));
    }
    for (std::size_t i = members.size(); i > 1; --i) {
      const std::size_t j = rng.uniform_int(i);
      std::swap(members[i - 1], members[j]);
    }
    subset.insert(subset.end(), members.begin(), members.begin() + take);
  }
  std::sort(subset.begin(), subset.end());
  return subset;
}

Tensor onehot_rows(const std::vector<std::size_t>& labels,
                   std::size_t num_classes) {
  std::vector<double> m(labels.size() * num_classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    m[i * num_classes + labels[i]] = 1.0;
  }
  return Tensor::from_data({labels.size(), num_classes}, std::move(m));
}

Tensor cross_entropy(const Tensor& logits, const Tensor& onehot) {
  const std::size_t classes = logits.shape()[1];
  Tensor lse = logsumexp_along_axis(logits, 1);
  Tensor picked = mul_scalar(mean_along_axis(mul(logits, onehot), 1),
                             static_cast<double>(classes));
  return mean(sub(lse, picked));
}

struct EvalScores {
  double accuracy = 0.0;
  std::vector<std::vector<double>> class_scores;  // [class][sample]
};

EvalScores score_logits(const Tensor& logits,
                        const std::vector<std::size_t>& labels,
                        std::size_t num_classes) {
  const std::size_t n = logits.shape()[0];
  EvalScores out;
  out.class_scores.assign(num_classes, std::vector<double>(n, 0.0));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    double z = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
      const double v = logits.at(i, c);
      if (v > mx) {
        mx = v;
        arg = c;
      }
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
      z += std::exp(logits.at(i, c) - mx);
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
      out.class_scores[c][i] = std::exp(logits.at(i, c) - mx) / z;
    }
    if (arg == labels[i]) ++hits;
  }
  out.accuracy = static_cast<double>(hits) / static_cast<double>(n);
  return out;
}

}  // namespace

ProbeResult linear_probe(model::ModelParams& params,
                         const data::LabeledDataset& dataset,
                         ProbeProtocol protocol, double label_fraction,
                         const ProbeConfig& cfg) {
  const data::SplitIndices split =
      data::stratified_split(dataset.labels, cfg.holdout_fraction);
  if (split.eval.empty()) {
    throw ConfigError("probe hold-out split is empty; need more data");
  }
  const std::vector<std::size_t> train_idx =
      stratified_subset(split.train, dataset.labels, label_fraction, cfg.seed);
  const std::size_t num_classes = dataset.num_classes;
  const std::size_t d = params.encoder_cfg.final_channels();

  std::vector<std::size_t> train_labels, eval_labels;
  for (std::size_t i : train_idx) train_labels.push_back(dataset.labels[i]);
  for (std::size_t i : split.eval) eval_labels.push_back(dataset.labels[i]);

  Tensor head_w = Tensor::zeros({d, num_classes}, true);
  Tensor head_b = Tensor::zeros({num_classes}, true);
  Tensor train_onehot = onehot_rows(train_labels, num_classes);

  Tensor eval_logits;
  if (protocol == ProbeProtocol::kFrozen) {
    // Features once, standardized with train-subset statistics.
    auto features_of = [&](const std::vector<std::size_t>& ids) {
      std::vector<double> rows(ids.size() * d);
      parallel_for(ids.size(), [&](std::size_t r) {
        Tensor f = pooled_features(params, dataset.images[ids[r]]);
        std::copy(f.data().begin(), f.data().end(), rows.begin() + r * d);
      });
      return rows;
    };
    std::vector<double> train_rows = features_of(train_idx);
    std::vector<double> eval_rows = features_of(split.eval);

    std::vector<double> mean(d, 0.0), stdev(d, 0.0);
    const double n_train = static_cast<double>(train_idx.size());
    for (std::size_t r = 0; r < train_idx.size(); ++r) {
      for (std::size_t j = 0; j < d; ++j) mean[j] += train_rows[r * d + j];
    }
    for (double& v : mean) v /= n_train;
    for (std::size_t r = 0; r < train_idx.size(); ++r) {
      for (std::size_t j = 0; j < d; ++j) {
        const double c = train_rows[r * d + j] - mean[j];
        stdev[j] += c * c;
      }
    }
    for (double& v : stdev) v = std::sqrt(v / n_train + 1e-8);
    auto standardize = [&](std::vector<double>& rows, std::size_t count) {
      for (std::size_t r = 0; r < count; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
          rows[r * d + j] = (rows[r * d + j] - mean[j]) / stdev[j];
        }
      }
    };
    standardize(train_rows, train_idx.size());
    standardize(eval_rows, split.eval.size());

    Tensor train_features =
        Tensor::from_data({train_idx.size(), d}, std::move(train_rows));
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
      Graph g;
      {
        Graph::Scope scope(g);
        Tensor logits = cols_add(matmul(train_features, head_w), head_b);
        g.backward(cross_entropy(logits, train_onehot));
      }
      auto w = head_w.mutable_data();
      auto gw = head_w.grad();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg.lr * gw[i];
      auto b = head_b.mutable_data();
      auto gb = head_b.grad();
      for (std::size_t i = 0; i < b.size(); ++i) b[i] -= cfg.lr * gb[i];
      head_w.zero_grad();
      head_b.zero_grad();
    }

    Tensor eval_features =
        Tensor::from_data({split.eval.size(), d}, std::move(eval_rows));
    eval_logits = cols_add(matmul(eval_features, head_w), head_b);
  } else {
    // Joint fine-tuning of encoder and head over the labeled subset.
    auto parameter_list = [&] {
      std::vector<model::NamedParam> named;
      for (std::size_t i = 0; i < params.encoder.kernels.size(); ++i) {
        named.push_back({"k" + std::to_string(i), params.encoder.kernels[i],
                         false});
        named.push_back({"b" + std::to_string(i), params.encoder.biases[i],
                         true});
      }
      named.push_back({"head.w", head_w, false});
      named.push_back({"head.b", head_b, true});
      return named;
    };
    auto batch_logits = [&](const std::vector<std::size_t>& ids) {
      std::vector<Tensor> rows;
      rows.reserve(ids.size());
      for (std::size_t idx : ids) {
        Tensor f = pooled_features(params, dataset.images[idx]);
        rows.push_back(reshape(f, {1, d}));
      }
      return cols_add(matmul(concat(rows, 0), head_w), head_b);
    };
    for (std::size_t it = 0; it < cfg.finetune_iterations; ++it) {
      Graph g;
      {
        Graph::Scope scope(g);
        g.backward(cross_entropy(batch_logits(train_idx), train_onehot));
      }
      for (model::NamedParam p : parameter_list()) {
        if (!p.tensor.has_grad()) continue;
        auto w = p.tensor.mutable_data();
        auto gw = p.tensor.grad();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg.lr * gw[i];
        p.tensor.zero_grad();
      }
    }
    eval_logits = batch_logits(split.eval);
  }

  EvalScores scores = score_logits(eval_logits, eval_labels, num_classes);
  ProbeResult result;
  result.protocol = protocol;
  result.label_fraction = label_fraction;
  result.accuracy = scores.accuracy;
  result.per_class_auc.resize(num_classes, 0.0);
  double auc_sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<int> binary(eval_labels.size());
    for (std::size_t i = 0; i < eval_labels.size(); ++i) {
      binary[i] = eval_labels[i] == c ? 1 : 0;
    }
    result.per_class_auc[c] = compute_auc(scores.class_scores[c], binary);
    auc_sum += result.per_class_auc[c];
  }
  result.mean_auc = auc_sum / static_cast<double>(num_classes);
  return result;
}

double compute_auc(const std::vector<double>& scores,
                   const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw ShapeError("compute_auc: scores and labels must match");
  }
  std::size_t positives = 0;
  for (int label : labels) {
    if (label != 0 && label != 1) {
      throw DomainError("compute_auc: labels must be binary");
    }
    positives += static_cast<std::size_t>(label);
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw DomainError("compute_auc: both classes must be present");
  }

  // Midrank assignment over ties, then the Mann-Whitney statistic.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  std::vector<double> ranks(scores.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) {
      ++j;
    }
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = midrank;
    i = j + 1;
  }
  double rank_sum = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (labels[k] == 1) rank_sum += ranks[k];
  }
  const double p = static_cast<double>(positives);
  const double n = static_cast<double>(negatives);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

// ---------------------------------------------------------------------------
// Collapse diagnostics
// ---------------------------------------------------------------------------

namespace {

// Cyclic Jacobi eigenvalues of a dense symmetric matrix; plenty for the
// desk-scale Gram matrices used here.
std::vector<double> symmetric_eigenvalues(std::vector<double> a,
                                          std::size_t n) {
  for (std::size_t sweep = 0; sweep < 128; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    }
    if (off < 1e-26 * static_cast<double>(n * n)) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t =
            (theta >= 0 ? 1.0 : -1.0) /
            (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p];
          const double akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k];
          const double aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (std::size_t k = 0; k < n; ++k) eig[k] = a[k * n + k];
  return eig;
}

}  // namespace

Tensor embed(model::ModelParams& params, const std::vector<Tensor>& images) {
  if (images.size() < 2) throw ShapeError("embed: need a batch of >= 2");
  const std::size_t d = params.encoder_cfg.final_channels();
  std::vector<double> rows(images.size() * d);
  parallel_for(images.size(), [&](std::size_t i) {
    Tensor g = pooled_features(params, images[i]);
    std::copy(g.data().begin(), g.data().end(), rows.begin() + i * d);
  });
  // Batch-statistics pass with the running buffers snapshotted.
  std::vector<std::vector<double>> saved;
  for (auto& [name, buf] : params.buffers()) saved.push_back(*buf);
  Tensor out =
      model::expand(Tensor::from_data({images.size(), d}, std::move(rows)),
                    params.expander, true);
  std::size_t k = 0;
  for (auto& [name, buf] : params.buffers()) *buf = std::move(saved[k++]);
  return out;
}

CollapseReport collapse_report(const Tensor& embeddings) {
  if (embeddings.rank() != 2 || embeddings.shape()[0] < 2) {
    throw ShapeError("collapse_report expects a [n >= 2, D] embedding batch");
  }
  const std::size_t n = embeddings.shape()[0];
  const std::size_t dim = embeddings.shape()[1];
  auto e = embeddings.data();

  CollapseReport report;
  for (std::size_t j = 0; j < dim; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += e[i * dim + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = e[i * dim + j] - mean;
      var += c * c;
    }
    report.mean_feature_std +=
        std::sqrt(var / static_cast<double>(n - 1));
  }
  report.mean_feature_std /= static_cast<double>(dim);

  // Singular values through the Gram matrix of the smaller side.
  const std::size_t m = std::min(n, dim);
  std::vector<double> gram(m * m, 0.0);
  if (n <= dim) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = i; k < n; ++k) {
        double acc = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
          acc += e[i * dim + j] * e[k * dim + j];
        }
        gram[i * n + k] = acc;
        gram[k * n + i] = acc;
      }
    }
  } else {
    for (std::size_t j = 0; j < dim; ++j) {
      for (std::size_t l = j; l < dim; ++l) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          acc += e[i * dim + j] * e[i * dim + l];
        }
        gram[j * dim + l] = acc;
        gram[l * dim + j] = acc;
      }
    }
  }
  std::vector<double> eig = symmetric_eigenvalues(std::move(gram), m);
  std::vector<double> sigma;
  double total = 0.0;
  for (double v : eig) {
    const double s = std::sqrt(std::max(0.0, v));
    sigma.push_back(s);
    total += s;
  }
  if (total <= 0.0) {
    report.effective_rank = 0.0;  // all-zero embedding matrix
    return report;
  }
  double entropy = 0.0;
  for (double s : sigma) {
    const double p = s / total;
    if (p > 1e-300) entropy -= p * std::log(p);
  }
  report.effective_rank = std::exp(entropy);
  return report;
}

}  // namespace otml::train
