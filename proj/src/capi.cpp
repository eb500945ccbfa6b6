#include "otml.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "otml/config.hpp"
#include "otml/data.hpp"
#include "otml/gradcheck.hpp"
#include "otml/model.hpp"
#include "otml/ot.hpp"
#include "otml/trainer.hpp"

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

template <typename Fn>
otml_status guard(Fn&& fn) {
  try {
    fn();
    return OTML_OK;
  } catch (const otml::ConfigError& e) {
    set_error(e.what());
    return OTML_ERR_CONFIG;
  } catch (const otml::IoError& e) {
    set_error(e.what());
    return OTML_ERR_IO;
  } catch (const otml::FormatError& e) {
    set_error(e.what());
    return OTML_ERR_FORMAT;
  } catch (const otml::ConvergenceError& e) {
    set_error(e.what());
    return OTML_ERR_CONVERGENCE;
  } catch (const otml::NumericError& e) {
    set_error(e.what());
    return OTML_ERR_NUMERIC;
  } catch (const otml::DomainError& e) {
    set_error(e.what());
    return OTML_ERR_NUMERIC;
  } catch (const otml::Error& e) {
    set_error(e.what());
    return OTML_ERR_INVALID_ARGUMENT;
  } catch (const std::exception& e) {
    set_error(e.what());
    return OTML_ERR_UNKNOWN;
  }
}

otml_status copy_out(const std::string& text, char* buf, size_t cap,
                     size_t* needed) {
  if (needed != nullptr) *needed = text.size() + 1;
  if (buf == nullptr || cap == 0) {
    set_error("output buffer is null or empty");
    return OTML_ERR_INVALID_ARGUMENT;
  }
  const size_t n = std::min(cap - 1, text.size());
  std::memcpy(buf, text.data(), n);
  buf[n] = '\0';
  return OTML_OK;
}

// Model assembly shared by pretrain and probe.
otml::model::ModelParams build_model(const otml::config::RunConfig& rc,
                                     std::uint64_t seed) {
  return otml::model::ModelParams::init(rc.encoder, rc.expander,
                                        rc.token_count, rc.heads,
                                        rc.temperature, seed);
}

otml::ot::TransportPlan solve_problem(std::size_t d,
                                      const std::vector<double>& cost,
                                      const std::vector<double>& mu,
                                      const std::vector<double>& nu,
                                      double epsilon, std::size_t max_iters,
                                      double tol, bool use_oracle) {
  otml::Tensor m = otml::Tensor::from_data({d, d}, cost);
  otml::ot::Marginal mmu =
      otml::ot::Marginal::from_tensor(otml::Tensor::from_data({d}, mu));
  otml::ot::Marginal mnu =
      otml::ot::Marginal::from_tensor(otml::Tensor::from_data({d}, nu));
  if (use_oracle) {
    return otml::ot::exact_ot_oracle(m, mmu, mnu);
  }
  otml::ot::TransportProblem problem{m, mmu, mnu, epsilon};
  otml::ot::SinkhornOptions opts;
  opts.mode = otml::ot::SinkhornMode::kDetached;
  opts.max_iters = max_iters == 0 ? 100000 : max_iters;
  opts.tol = tol > 0 ? tol : 1e-6;
  return otml::ot::sinkhorn(problem, opts);
}

}  // namespace

struct otml_config {
  otml::config::Config cfg = otml::config::Config::defaults();
};

struct otml_ot_plan {
  otml::ot::TransportPlan plan;
};

extern "C" {

const char* otml_status_name(otml_status status) {
  switch (status) {
    case OTML_OK: return "ok";
    case OTML_ERR_INVALID_ARGUMENT: return "invalid argument";
    case OTML_ERR_CONFIG: return "configuration error";
    case OTML_ERR_IO: return "io error";
    case OTML_ERR_FORMAT: return "format error";
    case OTML_ERR_NUMERIC: return "numerical failure";
    case OTML_ERR_CONVERGENCE: return "convergence failure";
    default: return "unknown error";
  }
}

const char* otml_last_error(void) { return g_last_error.c_str(); }

const char* otml_version(void) { return "0.1.0"; }

otml_status otml_config_create(otml_config** out) {
  if (out == nullptr) {
    set_error("null output pointer");
    return OTML_ERR_INVALID_ARGUMENT;
  }
  return guard([&] { *out = new otml_config(); });
}

otml_status otml_config_load(otml_config* cfg, const char* path) {
  if (cfg == nullptr || path == nullptr) {
    set_error("null config or path");
    return OTML_ERR_INVALID_ARGUMENT;
  }
  return guard([&] { cfg->cfg = otml::config::Config::parse_file(path); });
}

otml_status otml_config_set(otml_config* cfg, const char* key,
                            const char* value) {
  if (cfg == nullptr || key == nullptr || value == nullptr) {
    set_error("null config, key or value");
    return OTML_ERR_INVALID_ARGUMENT;
  }
  return guard([&] { cfg->cfg.set(key, value); });
}

otml_status otml_config_get(const otml_config* cfg, const char* key, char* buf,
                            size_t cap) {
  if (cfg == nullptr || key == nullptr) {
    set_error("null config or key");
    return OTML_ERR_INVALID_ARGUMENT;
  }
  otml_status status = OTML_OK;
  const otml_status outer = guard([&] {
    status = copy_out(cfg->cfg.get(key), buf, cap, nullptr);
  });
  return outer != OTML_OK ? outer : status;
}

otml_status otml_config_render(const otml_config* cfg, char* buf, size_t cap,
                               size_t* needed) {
  if (cfg == nullptr) {
    set_error("null config");
    return OTML_ERR_INVALID_ARGUMENT;
  }
  otml_status status = OTML_OK;
  const otml_status outer =
      guard([&] { status = copy_out(cfg->cfg.render(), buf, cap, needed); });
  return outer != OTML_OK ? outer : status;
}

void otml_config_destroy(otml_config* cfg) { delete cfg; }

size_t otml_config_key_count(void) { return otml::config::registry().size(); }

otml_status otml_config_key_info(size_t index, const char** key,
                                 const char** default_value,
                                 const char** doc) {
  const auto reg = otml::config::registry();
  if (index >= reg.size()) {
    set_error("config key index out of range");
    return OTML_ERR_INVALID_ARGUMENT;
  }
  if (key != nullptr) *key = reg[index].key;
  if (default_value != nullptr) *default_value = reg[index].default_value;
  if (doc != nullptr) *doc = reg[index].doc;
  return OTML_OK;
}

otml_status otml_gen_dataset(const char* out_dir, uint64_t n, uint32_t classes,
                             uint32_t size, uint64_t seed) {
  if (out_dir == nullptr) {
    set_error("null output directory");
    return OTML_ERR_INVALID_ARGUMENT;
  }
  return guard([&] {
    auto samples = otml::data::gen_phantom_dataset(n, classes, size, size, seed);
    otml::data::save_dataset(samples, out_dir);
  });
}

otml_status otml_pretrain(const otml_config* cfg, const char* data_dir,
                          const char* ckpt_out) {
  if (cfg == nullptr || data_dir == nullptr || ckpt_out == nullptr) {
    set_error("null config, data dir or checkpoint path");
    return OTML_ERR_INVALID_ARGUMENT;
  }
  return guard([&] {
    const otml::config::RunConfig rc =
        otml::config::build_run_config(cfg->cfg);
    otml::data::LabeledDataset ds = otml::data::load_dataset(data_dir);
    const otml::data::SplitIndices split =
        otml::data::stratified_split(ds.labels, rc.probe.holdout_fraction);

    std::vector<otml::Tensor> train_images;
    train_images.reserve(split.train.size());
    for (std::size_t idx : split.train) train_images.push_back(ds.images[idx]);

    otml::model::ModelParams params = build_model(rc, rc.train.seed);
    otml::train::Trainer trainer(rc.train, std::move(params),
                                 std::move(train_images));

    std::ofstream metrics(rc.train.metrics_path,
                          std::ios::binary | std::ios::trunc);
    if (!metrics) {
      throw otml::IoError("cannot write metrics CSV " + rc.train.metrics_path);
    }
    trainer.run(metrics, ckpt_out, cfg->cfg.digest());
  });
}

otml_status otml_probe(const otml_config* cfg, const char* ckpt,
                       const char* data_dir, int protocol, double fraction,
                       otml_probe_result* out) {
  if (cfg == nullptr || ckpt == nullptr || data_dir == nullptr ||
      out == nullptr) {
    set_error("null argument");
    return OTML_ERR_INVALID_ARGUMENT;
  }
  if (protocol != 0 && protocol != 1) {
    set_error("protocol must be 0 (frozen) or 1 (finetune)");
    return OTML_ERR_INVALID_ARGUMENT;
  }
  return guard([&] {
    const otml::config::RunConfig rc =
        otml::config::build_run_config(cfg->cfg);
    otml::data::Checkpoint loaded = otml::data::load_checkpoint(ckpt);
    if (loaded.config_digest != cfg->cfg.digest()) {
      std::fprintf(stderr,
                   "warning: checkpoint config digest %08x does not match the "
                   "active config (%08x); proceeding\n",
                   loaded.config_digest, cfg->cfg.digest());
    }
    otml::model::ModelParams params = build_model(rc, rc.train.seed);
    otml::train::restore_model(params, loaded);

    otml::data::LabeledDataset ds = otml::data::load_dataset(data_dir);
    if (ds.num_classes > OTML_MAX_CLASSES) {
      throw otml::ConfigError("too many classes for the probe result struct");
    }
    otml::train::ProbeResult res = otml::train::linear_probe(
        params, ds,
        protocol == 0 ? otml::train::ProbeProtocol::kFrozen
                      : otml::train::ProbeProtocol::kFinetune,
        fraction, rc.probe);
    out->accuracy = res.accuracy;
    out->mean_auc = res.mean_auc;
    out->num_classes = static_cast<uint32_t>(res.per_class_auc.size());
    for (std::size_t c = 0; c < res.per_class_auc.size(); ++c) {
      out->per_class_auc[c] = res.per_class_auc[c];
    }
  });
}

otml_status otml_ot_solve(uint32_t d, const double* cost, const double* mu,
                          const double* nu, double epsilon, uint64_t max_iters,
                          double tol, int use_oracle, otml_ot_plan** out) {
  if (cost == nullptr || mu == nullptr || nu == nullptr || out == nullptr) {
    set_error("null argument");
    return OTML_ERR_INVALID_ARGUMENT;
  }
  return guard([&] {
    otml::ot::TransportPlan plan = solve_problem(
        d, std::vector<double>(cost, cost + std::size_t(d) * d),
        std::vector<double>(mu, mu + d), std::vector<double>(nu, nu + d),
        epsilon, max_iters, tol, use_oracle != 0);
    *out = new otml_ot_plan{std::move(plan)};
  });
}

otml_status otml_ot_solve_file(const char* path, double epsilon_override,
                               int use_oracle, otml_ot_plan** out) {
  if (path == nullptr || out == nullptr) {
    set_error("null argument");
    return OTML_ERR_INVALID_ARGUMENT;
  }
  return guard([&] {
    std::ifstream in(path);
    if (!in) throw otml::IoError(std::string("cannot open ") + path);
    auto next = [&](const char* what) {
      double v;
      if (!(in >> v)) {
        throw otml::FormatError(std::string(path) + ": missing or bad " + what);
      }
      return v;
    };
    const double d_raw = next("dimension");
    if (d_raw < 1 || d_raw > 4096 || d_raw != std::floor(d_raw)) {
      throw otml::FormatError(std::string(path) + ": bad dimension");
    }
    const std::size_t d = static_cast<std::size_t>(d_raw);
    std::vector<double> cost(d * d), mu(d), nu(d);
    for (auto& v : cost) v = next("cost entry");
    for (auto& v : mu) v = next("mu entry");
    for (auto& v : nu) v = next("nu entry");
    double epsilon = next("epsilon");
    if (epsilon_override > 0) epsilon = epsilon_override;

    otml::ot::TransportPlan plan =
        solve_problem(d, cost, mu, nu, epsilon, 0, 0, use_oracle != 0);
    *out = new otml_ot_plan{std::move(plan)};
  });
}

uint32_t otml_ot_plan_dim(const otml_ot_plan* plan) {
  return plan == nullptr
             ? 0
             : static_cast<uint32_t>(plan->plan.coupling.shape()[0]);
}

double otml_ot_plan_cost(const otml_ot_plan* plan) {
  return plan == nullptr ? 0.0 : plan->plan.cost;
}

uint64_t otml_ot_plan_iterations(const otml_ot_plan* plan) {
  return plan == nullptr ? 0 : plan->plan.iterations;
}

double otml_ot_plan_marginal_error(const otml_ot_plan* plan) {
  return plan == nullptr ? 0.0 : plan->plan.marginal_error;
}

otml_status otml_ot_plan_matrix(const otml_ot_plan* plan, double* out) {
  if (plan == nullptr || out == nullptr) {
    set_error("null plan or output");
    return OTML_ERR_INVALID_ARGUMENT;
  }
  auto data = plan->plan.coupling.data();
  std::memcpy(out, data.data(), data.size() * sizeof(double));
  return OTML_OK;
}

void otml_ot_plan_destroy(otml_ot_plan* plan) { delete plan; }

otml_status otml_gradcheck(uint64_t seed, const char* corrupt_op, char* report,
                           size_t report_cap, int* passed) {
  return guard([&] {
    otml::gradcheck::Report rep = otml::gradcheck::run(
        seed, corrupt_op == nullptr ? std::string() : corrupt_op);
    if (passed != nullptr) *passed = rep.all_pass ? 1 : 0;
    if (report != nullptr && report_cap > 0) {
      copy_out(rep.to_string(), report, report_cap, nullptr);
    }
  });
}

}  // extern "C"
