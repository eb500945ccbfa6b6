#include "otml/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <vector>

namespace otml::config {

namespace {

constexpr KeySpec kRegistry[] = {
    {"model.input_size", "32", "square input image size in pixels"},
    {"model.encoder_blocks", "8:3:2,16:3:2,32:3:2,32:3:1",
     "conv stack as out_channels:kernel:stride, comma separated"},
    {"model.expander_widths", "256,256,256", "MLP head layer widths"},
    {"model.n_tok", "8", "token count for cross-view attention"},
    {"model.heads", "2", "attention heads per token"},
    {"model.temperature", "1.0", "marginal softmax temperature"},
    {"model.bn_eps", "1e-5", "expander batchnorm epsilon"},

    {"ot.epsilon", "0.05", "entropic regularization strength"},
    {"ot.iterations", "50", "fixed scaling iterations in unrolled mode"},
    {"ot.max_iters", "10000", "iteration cap for the detached solver"},
    {"ot.tol", "1e-6", "L1 marginal tolerance for the detached solver"},
    {"ot.mode", "unrolled", "sinkhorn gradient mode: unrolled or detached"},

    {"augment.enabled", "true", "master switch for view augmentation"},
    {"augment.crop", "true", "random resized crop"},
    {"augment.crop_lo", "0.6", "crop scale lower bound"},
    {"augment.crop_hi", "1.0", "crop scale upper bound"},
    {"augment.flip", "true", "random horizontal flip"},
    {"augment.flip_prob", "0.5", "horizontal flip probability"},
    {"augment.jitter", "true", "intensity jitter"},
    {"augment.jitter_add", "0.1", "additive intensity jitter bound"},
    {"augment.jitter_mul", "0.2", "multiplicative intensity jitter bound"},
    {"augment.blur", "true", "gaussian blur"},
    {"augment.blur_lo", "0.1", "blur sigma lower bound"},
    {"augment.blur_hi", "1.0", "blur sigma upper bound"},

    {"train.steps", "2000", "optimization steps"},
    {"train.batch_size", "64", "images per step"},
    {"train.optimizer", "lars", "optimizer: lars or adam"},
    {"train.lr", "3e-4", "learning rate"},
    {"train.weight_decay", "1e-4", "weight decay on non-exempt groups"},
    {"train.momentum", "0.9", "momentum coefficient"},
    {"train.trust_coeff", "0.1",
     "LARS trust coefficient (desk-scale calibration; the reference-scale "
     "value is 0.001)"},
    {"train.alpha", "0.6", "weight of the transport alignment loss"},
    {"train.beta", "25", "weight of the variance regularizer"},
    {"train.eta", "1", "weight of the covariance regularizer"},
    {"train.var_gamma", "1", "variance hinge target"},
    {"train.var_eps", "1e-4", "variance hinge epsilon"},
    {"train.seed", "42", "master seed (init, batch order, augmentation)"},
    {"train.metrics", "metrics.csv", "metrics CSV output path"},
    {"train.checkpoint_every", "500", "checkpoint cadence in steps (0: final only)"},
    {"train.deterministic_metrics", "true",
     "record 0 in the ms column so same-seed runs are byte-identical"},

    {"probe.iterations", "500", "full-batch GD steps for the frozen head"},
    {"probe.lr", "0.1", "probe learning rate"},
    {"probe.holdout_fraction", "0.2", "held-out fraction of the dataset"},
    {"probe.finetune_iterations", "30", "joint GD steps in finetune protocol"},
    {"probe.seed", "7", "probe subset-selection seed"},
};

std::string section_of(const std::string& key) {
  const auto dot = key.find('.');
  return dot == std::string::npos ? std::string() : key.substr(0, dot);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::span<const KeySpec> registry() {
  return {kRegistry, sizeof(kRegistry) / sizeof(kRegistry[0])};
}

Config Config::defaults() {
  Config c;
  for (const KeySpec& spec : registry()) {
    c.values_[spec.key] = spec.default_value;
  }
  return c;
}

Config Config::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_text(buf.str(), path);
}

Config Config::parse_text(const std::string& text, const std::string& origin) {
  Config c = defaults();
  std::istringstream in(text);
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    if (stripped.front() == '[') {
      if (stripped.back() != ']') {
        throw ConfigError(origin + ":" + std::to_string(line_no) +
                          ": unterminated section header");
      }
      section = trim(stripped.substr(1, stripped.size() - 2));
      if (section.empty()) {
        throw ConfigError(origin + ":" + std::to_string(line_no) +
                          ": empty section name");
      }
      continue;
    }
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": expected 'key = value'");
    }
    const std::string name = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (name.empty()) {
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": empty key");
    }
    const std::string full =
        section.empty() || name.find('.') != std::string::npos
            ? name
            : section + "." + name;
    try {
      c.set(full, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " +
                        e.what());
    }
  }
  return c;
}

void Config::set(const std::string& key, const std::string& value) {
  if (values_.find(key) == values_.end()) {
    // Populate defaults first for bare Config instances.
    bool known = false;
    for (const KeySpec& spec : registry()) {
      if (key == spec.key) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("unknown config key '" + key + "'");
  }
  values_[key] = value;
}

const std::string& Config::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) {
    throw ConfigError("unknown config key '" + key + "'");
  }
  return it->second;
}

double Config::get_double(const std::string& key) const {
  const std::string& raw = get(key);
  char* end = nullptr;
  const double v = std::strtod(raw.c_str(), &end);
  if (end == raw.c_str() || *end != '\0') {
    throw ConfigError("key '" + key + "': expected a number, got '" + raw + "'");
  }
  return v;
}

std::size_t Config::get_size(const std::string& key) const {
  const double v = get_double(key);
  if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
    throw ConfigError("key '" + key + "': expected a nonnegative integer");
  }
  return static_cast<std::size_t>(v);
}

bool Config::get_bool(const std::string& key) const {
  const std::string& raw = get(key);
  if (raw == "true" || raw == "1" || raw == "yes") return true;
  if (raw == "false" || raw == "0" || raw == "no") return false;
  throw ConfigError("key '" + key + "': expected a boolean, got '" + raw + "'");
}

std::string Config::render() const {
  std::string out;
  std::string section;
  for (const KeySpec& spec : registry()) {
    const std::string sec = section_of(spec.key);
    if (sec != section) {
      if (!out.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    const std::string name = std::string(spec.key).substr(sec.size() + 1);
    out += name + " = " + values_.at(spec.key) + "\n";
  }
  return out;
}

std::uint32_t Config::digest() const {
  std::uint32_t h = 2166136261u;
  for (const char ch : render()) {
    h ^= static_cast<unsigned char>(ch);
    h *= 16777619u;
  }
  return h;
}

namespace {

std::vector<std::string> split_list(const std::string& raw, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : raw) {
    if (ch == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::size_t parse_size_or(const std::string& raw, const std::string& what) {
  try {
    std::size_t pos = 0;
    const unsigned long v = std::stoul(raw, &pos);
    if (pos != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(what + ": expected an integer, got '" + raw + "'");
  }
}

}  // namespace

RunConfig build_run_config(const Config& cfg) {
  RunConfig rc;

  const std::size_t size = cfg.get_size("model.input_size");
  rc.encoder.input_h = size;
  rc.encoder.input_w = size;
  rc.encoder.blocks.clear();
  for (const std::string& block :
       split_list(cfg.get("model.encoder_blocks"), ',')) {
    const auto parts = split_list(block, ':');
    if (parts.size() != 3) {
      throw ConfigError(
          "model.encoder_blocks: expected out:kernel:stride, got '" + block +
          "'");
    }
    rc.encoder.blocks.push_back(
        {parse_size_or(parts[0], "model.encoder_blocks"),
         parse_size_or(parts[1], "model.encoder_blocks"),
         parse_size_or(parts[2], "model.encoder_blocks")});
  }
  rc.encoder.validate();

  rc.expander.widths.clear();
  for (const std::string& w :
       split_list(cfg.get("model.expander_widths"), ',')) {
    rc.expander.widths.push_back(parse_size_or(w, "model.expander_widths"));
  }
  rc.expander.bn_eps = cfg.get_double("model.bn_eps");
  rc.expander.validate();

  rc.token_count = cfg.get_size("model.n_tok");
  rc.heads = cfg.get_size("model.heads");
  rc.temperature = cfg.get_double("model.temperature");

  train::TrainConfig& t = rc.train;
  t.steps = cfg.get_size("train.steps");
  t.batch_size = cfg.get_size("train.batch_size");
  t.optimizer.kind = cfg.get("train.optimizer");
  t.optimizer.lr = cfg.get_double("train.lr");
  t.optimizer.weight_decay = cfg.get_double("train.weight_decay");
  t.optimizer.momentum = cfg.get_double("train.momentum");
  t.optimizer.trust_coeff = cfg.get_double("train.trust_coeff");
  t.objective.weights.alpha = cfg.get_double("train.alpha");
  t.objective.weights.beta = cfg.get_double("train.beta");
  t.objective.weights.eta = cfg.get_double("train.eta");
  t.objective.var_gamma = cfg.get_double("train.var_gamma");
  t.objective.var_eps = cfg.get_double("train.var_eps");
  t.objective.ot_epsilon = cfg.get_double("ot.epsilon");
  t.objective.sinkhorn.unrolled_iters = cfg.get_size("ot.iterations");
  t.objective.sinkhorn.max_iters = cfg.get_size("ot.max_iters");
  t.objective.sinkhorn.tol = cfg.get_double("ot.tol");
  const std::string mode = cfg.get("ot.mode");
  if (mode == "unrolled") {
    t.objective.sinkhorn.mode = ot::SinkhornMode::kUnrolled;
  } else if (mode == "detached") {
    t.objective.sinkhorn.mode = ot::SinkhornMode::kDetached;
  } else {
    throw ConfigError("ot.mode must be 'unrolled' or 'detached', got '" +
                      mode + "'");
  }
  t.seed = cfg.get_size("train.seed");
  t.metrics_path = cfg.get("train.metrics");
  t.checkpoint_every = cfg.get_size("train.checkpoint_every");
  t.deterministic_metrics = cfg.get_bool("train.deterministic_metrics");

  data::AugmentationSpec& a = t.augment;
  a.enabled = cfg.get_bool("augment.enabled");
  a.crop = cfg.get_bool("augment.crop");
  a.crop_lo = cfg.get_double("augment.crop_lo");
  a.crop_hi = cfg.get_double("augment.crop_hi");
  a.flip = cfg.get_bool("augment.flip");
  a.flip_prob = cfg.get_double("augment.flip_prob");
  a.jitter = cfg.get_bool("augment.jitter");
  a.jitter_add = cfg.get_double("augment.jitter_add");
  a.jitter_mul = cfg.get_double("augment.jitter_mul");
  a.blur = cfg.get_bool("augment.blur");
  a.blur_lo = cfg.get_double("augment.blur_lo");
  a.blur_hi = cfg.get_double("augment.blur_hi");
  a.seed = t.seed ^ 0xa5a5a5a5a5a5a5a5ULL;
  t.validate();

  rc.probe.iterations = cfg.get_size("probe.iterations");
  rc.probe.lr = cfg.get_double("probe.lr");
  rc.probe.holdout_fraction = cfg.get_double("probe.holdout_fraction");
  rc.probe.finetune_iterations = cfg.get_size("probe.finetune_iterations");
  rc.probe.seed = cfg.get_size("probe.seed");

  return rc;
}

}  // namespace otml::config
