// otml command line: dataset synthesis, SSL pretraining, linear probes, a
// standalone transport solver and the gradient verification suite. Talks to
// the core exclusively through the C API in otml.h.

#include <cstdio>
#include <cstdlib>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "otml.h"

namespace {

// Exit codes: 0 success, 1 usage, 2 runtime, 3 numerical failure.
int exit_code_for(otml_status status) {
  switch (status) {
    case OTML_OK:
      return 0;
    case OTML_ERR_INVALID_ARGUMENT:
    case OTML_ERR_CONFIG:
      return 1;
    case OTML_ERR_IO:
    case OTML_ERR_FORMAT:
    case OTML_ERR_UNKNOWN:
      return 2;
    case OTML_ERR_NUMERIC:
    case OTML_ERR_CONVERGENCE:
      return 3;
  }
  return 2;
}

int fail(otml_status status) {
  std::fprintf(stderr, "error (%s): %s\n", otml_status_name(status),
               otml_last_error());
  return exit_code_for(status);
}

struct ConfigHandle {
  otml_config* ptr = nullptr;
  ~ConfigHandle() { otml_config_destroy(ptr); }
};

// Shared --config/--set plumbing: file values first, flag overrides second.
int apply_config(ConfigHandle& handle, const std::string& config_path,
                 const std::vector<std::string>& overrides) {
  otml_status status = otml_config_create(&handle.ptr);
  if (status != OTML_OK) return fail(status);
  if (!config_path.empty()) {
    status = otml_config_load(handle.ptr, config_path.c_str());
    if (status != OTML_OK) return fail(status);
  }
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error: --set expects key=value, got '%s'\n",
                   kv.c_str());
      return 1;
    }
    status = otml_config_set(handle.ptr, kv.substr(0, eq).c_str(),
                             kv.substr(eq + 1).c_str());
    if (status != OTML_OK) return fail(status);
  }
  return -1;  // keep going
}

std::string config_key_footer() {
  std::string out = "Config keys (key = default  # description):\n";
  for (size_t i = 0; i < otml_config_key_count(); ++i) {
    const char *key, *def, *doc;
    if (otml_config_key_info(i, &key, &def, &doc) != OTML_OK) continue;
    out += "  ";
    out += key;
    out += " = ";
    out += def;
    out += "  # ";
    out += doc;
    out += "\n";
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"optimal-transport self-supervised pretraining at desk scale"};
  app.require_subcommand(1);
  app.footer(config_key_footer());

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "synthesize a phantom dataset");
  std::string gen_out;
  std::uint64_t gen_n = 100, gen_seed = 1;
  std::uint32_t gen_classes = 4, gen_size = 32;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--n", gen_n, "number of images");
  gen->add_option("--classes", gen_classes, "number of classes (2..8)");
  gen->add_option("--size", gen_size, "image side length");
  gen->add_option("--seed", gen_seed, "generator seed");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "run the SSL training loop");
  std::string pre_config, pre_data, pre_out;
  std::vector<std::string> pre_sets;
  pre->add_option("--config", pre_config, "config file (key = value lines)");
  pre->add_option("--data", pre_data, "dataset directory")->required();
  pre->add_option("--out", pre_out, "checkpoint output path")->required();
  pre->add_option("--set", pre_sets, "override a config key (key=value)");

  // probe
  auto* probe = app.add_subcommand("probe", "linear evaluation of a checkpoint");
  std::string probe_ckpt, probe_data, probe_protocol = "frozen", probe_config;
  std::vector<std::string> probe_sets;
  double probe_fraction = 1.0;
  probe->add_option("--ckpt", probe_ckpt, "checkpoint path")->required();
  probe->add_option("--data", probe_data, "dataset directory")->required();
  probe->add_option("--protocol", probe_protocol, "frozen or finetune");
  probe->add_option("--fraction", probe_fraction, "labeled fraction (0,1]");
  probe->add_option("--config", probe_config, "config file");
  probe->add_option("--set", probe_sets, "override a config key (key=value)");

  // ot-solve
  auto* solve = app.add_subcommand("ot-solve", "solve one transport problem");
  std::string solve_input;
  double solve_eps = 0.0;
  bool solve_oracle = false;
  solve->add_option("--input", solve_input, "problem file")->required();
  solve->add_option("--epsilon", solve_eps,
                    "override the file's regularization strength");
  solve->add_flag("--oracle", solve_oracle, "use the exact simplex solver");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference adjoint suite");
  std::uint64_t gc_seed = 1234;
  std::string gc_corrupt;
  gc->add_option("--seed", gc_seed, "suite seed");
  gc->add_option("--corrupt", gc_corrupt,
                 "perturb this op's adjoint (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (gen->parsed()) {
    const otml_status status =
        otml_gen_dataset(gen_out.c_str(), gen_n, gen_classes, gen_size,
                         gen_seed);
    if (status != OTML_OK) return fail(status);
    std::printf("wrote %llu images to %s\n",
                static_cast<unsigned long long>(gen_n), gen_out.c_str());
    return 0;
  }

  if (pre->parsed()) {
    ConfigHandle cfg;
    const int rc = apply_config(cfg, pre_config, pre_sets);
    if (rc >= 0) return rc;
    const otml_status status =
        otml_pretrain(cfg.ptr, pre_data.c_str(), pre_out.c_str());
    if (status != OTML_OK) return fail(status);
    char metrics[512];
    otml_config_get(cfg.ptr, "train.metrics", metrics, sizeof(metrics));
    std::printf("checkpoint written to %s, metrics to %s\n", pre_out.c_str(),
                metrics);
    return 0;
  }

  if (probe->parsed()) {
    if (probe_protocol != "frozen" && probe_protocol != "finetune") {
      std::fprintf(stderr, "error: --protocol must be frozen or finetune\n");
      return 1;
    }
    ConfigHandle cfg;
    const int rc = apply_config(cfg, probe_config, probe_sets);
    if (rc >= 0) return rc;
    otml_probe_result result;
    const otml_status status =
        otml_probe(cfg.ptr, probe_ckpt.c_str(), probe_data.c_str(),
                   probe_protocol == "finetune" ? 1 : 0, probe_fraction,
                   &result);
    if (status != OTML_OK) return fail(status);
    // Single CSV row: protocol,fraction,accuracy,mean_auc,auc_class0,...
    std::printf("%s,%g,%.6f,%.6f", probe_protocol.c_str(), probe_fraction,
                result.accuracy, result.mean_auc);
    for (std::uint32_t c = 0; c < result.num_classes; ++c) {
      std::printf(",%.6f", result.per_class_auc[c]);
    }
    std::printf("\n");
    return 0;
  }

  if (solve->parsed()) {
    otml_ot_plan* plan = nullptr;
    const otml_status status = otml_ot_solve_file(
        solve_input.c_str(), solve_eps, solve_oracle ? 1 : 0, &plan);
    if (status != OTML_OK) return fail(status);
    const std::uint32_t d = otml_ot_plan_dim(plan);
    std::vector<double> t(static_cast<std::size_t>(d) * d);
    otml_ot_plan_matrix(plan, t.data());
    std::printf("%u\n", d);
    for (std::uint32_t i = 0; i < d; ++i) {
      for (std::uint32_t j = 0; j < d; ++j) {
        std::printf(j + 1 == d ? "%.12g\n" : "%.12g ", t[i * d + j]);
      }
    }
    std::printf("cost %.12g\n", otml_ot_plan_cost(plan));
    std::printf("iterations %llu\n",
                static_cast<unsigned long long>(otml_ot_plan_iterations(plan)));
    std::printf("marginal_error %.3e\n", otml_ot_plan_marginal_error(plan));
    otml_ot_plan_destroy(plan);
    return 0;
  }

  if (gc->parsed()) {
    std::vector<char> report(1 << 16);
    int passed = 0;
    const otml_status status = otml_gradcheck(
        gc_seed, gc_corrupt.empty() ? nullptr : gc_corrupt.c_str(),
        report.data(), report.size(), &passed);
    if (status != OTML_OK) return fail(status);
    std::fputs(report.data(), stdout);
    return passed ? 0 : 3;
  }

  return 1;
}
