#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "otml/data.hpp"
#include "otml/model.hpp"
#include "otml/tensor.hpp"

namespace otml::train {

struct OptimizerConfig {
  std::string kind = "lars";  // "lars" or "adam"
  double lr = 3e-4;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  double trust_coeff = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

// Layer-wise adaptive rate scaling with momentum; bias/batchnorm groups are
// excluded from weight decay and trust scaling. Adam offered alongside for
// small-batch runs.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg);

  // Applies one update using the accumulated gradients (missing gradient
  // buffers count as zero) and clears them.
  void step(std::vector<model::NamedParam>& params);

 private:
  OptimizerConfig cfg_;
  std::vector<std::vector<double>> momentum_buf_;
  std::vector<std::vector<double>> adam_m_, adam_v_;
  std::size_t step_count_ = 0;
};

// One LARS update on a single parameter group, exposed for direct testing:
// local_lr = trust * ||w|| / (||g|| + wd * ||w|| + 1e-12),
// buf = momentum * buf + local_lr * (g + wd * w), w -= lr * buf.
void lars_update(std::span<double> weights, std::span<const double> grads,
                 std::vector<double>& momentum_buf, double lr,
                 double weight_decay, double momentum, double trust_coeff,
                 bool exempt);

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 64;
  OptimizerConfig optimizer;
  model::ObjectiveConfig objective;
  data::AugmentationSpec augment;
  std::uint64_t seed = 42;
  std::string metrics_path = "metrics.csv";
  std::size_t checkpoint_every = 500;
  bool deterministic_metrics = true;  // ms column reads 0 when set

  void validate() const;
};

struct MetricsRow {
  std::size_t step = 0;
  double l_ot = 0, l_var = 0, l_cov = 0, total = 0;
  double feat_std = 0;  // mean per-dimension std of q_s
  std::size_t sinkhorn_iterations = 0;
  double marginal_error = 0;
  double wall_ms = 0;
};

constexpr const char* kMetricsHeader =
    "step,l_ot,l_var,l_cov,total,feat_std,sink_iters,marg_err,ms";

std::string format_metrics_row(const MetricsRow& row);

// SSL pretraining driver. Deterministic given (config, model seed, data):
// batch order, augmentation streams and parameter init all derive from
// config.seed.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, model::ModelParams params,
          std::vector<Tensor> images);

  MetricsRow train_step();
  // Full loop: emits one CSV row per step, checkpoints on the configured
  // cadence plus the final step.
  void run(std::ostream& metrics, const std::string& checkpoint_path,
           std::uint32_t config_digest);

  model::ModelParams& params() { return params_; }
  std::size_t completed_steps() const { return step_; }
  data::Checkpoint make_checkpoint(std::uint32_t config_digest) const;

 private:
  std::vector<std::size_t> next_batch();

  TrainConfig cfg_;
  model::ModelParams params_;
  std::vector<Tensor> images_;
  Optimizer optimizer_;
  Rng order_rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t step_ = 0;
  std::uint64_t aug_counter_ = 0;
};

// Checkpoint <-> model parameter plumbing shared by the trainer, the probes
// and the CLI.
data::Checkpoint snapshot_model(model::ModelParams& params, std::uint64_t step,
                                std::uint32_t config_digest);
void restore_model(model::ModelParams& params, const data::Checkpoint& ckpt);

enum class ProbeProtocol { kFrozen, kFinetune };

struct ProbeConfig {
  std::size_t iterations = 500;  // frozen-head full-batch GD steps
  double lr = 0.1;
  double holdout_fraction = 0.2;
  std::size_t finetune_iterations = 30;
  std::uint64_t seed = 7;
};

struct ProbeResult {
  ProbeProtocol protocol = ProbeProtocol::kFrozen;
  double label_fraction = 1.0;
  double accuracy = 0.0;
  double mean_auc = 0.0;  // one-vs-rest average
  std::vector<double> per_class_auc;
};

// Linear evaluation on the canonical train/eval split of `dataset`: a single
// linear classifier on the pooled encoder features, trained on a stratified
// label_fraction subset of the train part, scored on the held-out part.
// Frozen keeps the encoder fixed; finetune trains encoder and head jointly.
ProbeResult linear_probe(model::ModelParams& params,
                         const data::LabeledDataset& dataset,
                         ProbeProtocol protocol, double label_fraction,
                         const ProbeConfig& cfg);

// Mann-Whitney AUC with midrank tie handling. Needs both classes present.
double compute_auc(const std::vector<double>& scores,
                   const std::vector<int>& labels);

struct CollapseReport {
  double mean_feature_std = 0.0;
  double effective_rank = 0.0;  // exp of the entropy of normalized singular values
};

// Collapse diagnostics over an embedding batch [n, D].
CollapseReport collapse_report(const Tensor& embeddings);

// Expander embeddings [n, D] for a probe batch, normalized with the batch's
// own statistics (running statistics are left untouched); train/eval
// augmentation shift then cannot masquerade as spread or collapse.
Tensor embed(model::ModelParams& params, const std::vector<Tensor>& images);

}  // namespace otml::train
