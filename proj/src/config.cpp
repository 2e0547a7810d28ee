#include "cirlab/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace cirlab {

namespace {

struct KeyEntry {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::size_t to_size(const std::string& key, const std::string& v) {
  try {
    const long long n = std::stoll(v);
    if (n < 0) throw std::invalid_argument("negative");
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: '" + key + "' expects an unsigned integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    return std::stod(v);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: '" + key + "' expects a real number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw std::invalid_argument("config: '" + key + "' expects true/false, got '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_hidden(const std::vector<std::size_t>& hidden) {
  std::string out;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(hidden[i]);
  }
  return out;
}

std::vector<std::size_t> parse_hidden(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    out.push_back(to_size(key, part));
  }
  if (out.empty()) throw std::invalid_argument("config: '" + key + "' expects a comma list of widths");
  return out;
}

std::string size_fmt(std::size_t v) { return std::to_string(v); }
std::string u64_fmt(std::uint64_t v) { return std::to_string(v); }
std::string bool_fmt(bool v) { return v ? "true" : "false"; }

#define NUM_KEY(name, field, conv, fmt)                                             \
  KeyEntry{name, [](RunConfig& c, const std::string& v) { c.field = conv(name, v); }, \
           [](const RunConfig& c) { return fmt(c.field); }}

const std::vector<KeyEntry>& registry() {
  static const std::vector<KeyEntry> keys = {
      NUM_KEY("seed", seed, to_u64, u64_fmt),
      NUM_KEY("stream.total_classes", stream.total_classes, to_size, size_fmt),
      NUM_KEY("stream.labeled_classes", stream.labeled_classes, to_size, size_fmt),
      NUM_KEY("stream.num_experiences", stream.num_experiences, to_size, size_fmt),
      NUM_KEY("stream.labeled_per_exp", stream.labeled_per_exp, to_size, size_fmt),
      NUM_KEY("stream.unlabeled_per_exp", stream.unlabeled_per_exp, to_size, size_fmt),
      NUM_KEY("stream.classes_per_exp", stream.classes_per_exp, to_size, size_fmt),
      NUM_KEY("stream.repetition_probability", stream.repetition_probability, to_double, fmt_double),
      KeyEntry{"stream.scenario",
               [](RunConfig& c, const std::string& v) { c.stream.scenario = scenario_from_string(v); },
               [](const RunConfig& c) { return to_string(c.stream.scenario); }},
      NUM_KEY("stream.image_side", stream.image_side, to_size, size_fmt),
      NUM_KEY("stream.seed", stream.seed, to_u64, u64_fmt),
      KeyEntry{"stream.data_path",
               [](RunConfig& c, const std::string& v) { c.data_path = v == "synthetic" ? "" : v; },
               [](const RunConfig& c) { return c.data_path.empty() ? std::string("synthetic") : c.data_path; }},
      NUM_KEY("schedule.c", schedule.c, to_double, fmt_double),
      NUM_KEY("schedule.omega", schedule.omega, to_double, fmt_double),
      NUM_KEY("schedule.gamma", schedule.gamma, to_double, fmt_double),
      NUM_KEY("schedule.eta", schedule.eta, to_double, fmt_double),
      NUM_KEY("schedule.beta_slope", schedule.beta_slope, to_double, fmt_double),
      NUM_KEY("schedule.delta", schedule.delta, to_double, fmt_double),
      KeyEntry{"model.hidden",
               [](RunConfig& c, const std::string& v) { c.model.hidden = parse_hidden("model.hidden", v); },
               [](const RunConfig& c) { return fmt_hidden(c.model.hidden); }},
      NUM_KEY("model.use_conv", model.use_conv, to_bool, bool_fmt),
      NUM_KEY("model.conv_filters", model.conv_filters, to_size, size_fmt),
      NUM_KEY("trainer.labeled_batch", labeled_batch, to_size, size_fmt),
      NUM_KEY("trainer.unlabeled_batch", unlabeled_batch, to_size, size_fmt),
      NUM_KEY("trainer.replay_batch", replay_batch, to_size, size_fmt),
      NUM_KEY("trainer.epochs", epochs, to_size, size_fmt),
      NUM_KEY("trainer.lr", adam.lr, to_double, fmt_double),
      NUM_KEY("trainer.adam_beta1", adam.beta1, to_double, fmt_double),
      NUM_KEY("trainer.adam_beta2", adam.beta2, to_double, fmt_double),
      NUM_KEY("trainer.adam_eps", adam.eps, to_double, fmt_double),
      NUM_KEY("trainer.pool_size", pool_size, to_size, size_fmt),
      NUM_KEY("trainer.ema_momentum", ema_momentum, to_double, fmt_double),
      NUM_KEY("trainer.ema_per_experience", ema_per_experience, to_bool, bool_fmt),
      NUM_KEY("trainer.buffer_capacity", buffer_capacity, to_size, size_fmt),
      NUM_KEY("trainer.buffer_float_budget", buffer_float_budget, to_size, size_fmt),
      NUM_KEY("trainer.buffer_class_balanced", buffer_class_balanced, to_bool, bool_fmt),
      KeyEntry{"trainer.logit_kd_target",
               [](RunConfig& c, const std::string& v) {
                 if (v == "per-model-sum")
                   c.logit_kd_target = LogitKdTarget::PerModelSum;
                 else if (v == "confidence-composite")
                   c.logit_kd_target = LogitKdTarget::ConfidenceComposite;
                 else
                   throw std::invalid_argument(
                       "config: 'trainer.logit_kd_target' expects per-model-sum | confidence-composite");
               },
               [](const RunConfig& c) {
                 return std::string(c.logit_kd_target == LogitKdTarget::PerModelSum ? "per-model-sum"
                                                                                    : "confidence-composite");
               }},
      NUM_KEY("trainer.logit_kd_normalize", logit_kd_normalize, to_bool, bool_fmt),
      NUM_KEY("trainer.replay_in_ace", replay_in_ace, to_bool, bool_fmt),
      NUM_KEY("trainer.lc_margin", lc_margin, to_double, fmt_double),
      NUM_KEY("trainer.ensemble_average_logits", ensemble_average_logits, to_bool, bool_fmt),
      NUM_KEY("trainer.ensemble_offset", ensemble_offset, to_size, size_fmt),
      NUM_KEY("trainer.test_per_class", test_per_class, to_size, size_fmt),
      NUM_KEY("flags.use_ssl", flags.use_ssl, to_bool, bool_fmt),
      NUM_KEY("flags.use_feature_kd", flags.use_feature_kd, to_bool, bool_fmt),
      NUM_KEY("flags.use_logit_kd", flags.use_logit_kd, to_bool, bool_fmt),
      NUM_KEY("flags.use_lc", flags.use_lc, to_bool, bool_fmt),
      NUM_KEY("flags.use_der", flags.use_der, to_bool, bool_fmt),
      NUM_KEY("flags.use_ema", flags.use_ema, to_bool, bool_fmt),
      NUM_KEY("flags.use_multi_model", flags.use_multi_model, to_bool, bool_fmt),
      NUM_KEY("flags.dynamic_weighting", flags.dynamic_weighting, to_bool, bool_fmt),
  };
  return keys;
}

#undef NUM_KEY

const KeyEntry* find_key(const std::string& key) {
  for (const KeyEntry& e : registry())
    if (e.key == key) return &e;
  return nullptr;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const KeyEntry& e : registry()) out.push_back(e.key);
  return out;
}

void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const KeyEntry* e = find_key(key);
  if (!e) {
    std::string msg = "config: unknown key '" + key + "'. Valid keys:";
    for (const auto& k : config_keys()) msg += "\n  " + k;
    throw std::invalid_argument(msg);
  }
  e->set(cfg, value);
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  const KeyEntry* e = find_key(key);
  if (!e) throw std::invalid_argument("config: unknown key '" + key + "'");
  return e->get(cfg);
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: " + origin + ":" + std::to_string(lineno) +
                                  ": expected key=value, got '" + stripped + "'");
    apply_config_value(cfg, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
  }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("config: cannot open file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  apply_config_text(cfg, ss.str(), path);
}

std::string dump_config(const RunConfig& cfg) {
  std::string out;
  for (const KeyEntry& e : registry()) out += e.key + " = " + e.get(cfg) + "\n";
  return out;
}

namespace {

void flags_off(AblationFlags& f) {
  f.use_ssl = f.use_feature_kd = f.use_logit_kd = f.use_lc = f.use_der = f.use_ema = f.use_multi_model = false;
  f.dynamic_weighting = true;
}

void flags_baseline(AblationFlags& f) {
  flags_off(f);
  f.use_lc = true;
  f.use_der = true;
}

void flags_full(AblationFlags& f) {
  f.use_ssl = f.use_feature_kd = f.use_logit_kd = f.use_lc = f.use_der = f.use_ema = f.use_multi_model = true;
  f.dynamic_weighting = true;
}

}  // namespace

std::vector<Preset> list_presets() {
  return {
      {"ft", "plain fine-tuning: masked cross-entropy only"},
      {"baseline", "ACE + logit constraint + replay"},
      {"baseline_ssl", "baseline + dynamic rotation SSL"},
      {"baseline_mlkd", "baseline + feature/logit KD, EMA, multi-model pool"},
      {"full", "everything on"},
      {"fkd", "baseline + SSL + feature KD only (single frozen teacher)"},
      {"fkd_ema", "fkd + EMA-refreshed teacher"},
      {"fkd_ema_clkd", "fkd_ema + correlation logit KD"},
      {"fkd_ema_clkd_mpm", "fkd_ema_clkd + multiple previous models (= full)"},
      {"k1", "full with a 1-snapshot pool"},
      {"k2", "full with a 2-snapshot pool"},
      {"k3", "full with a 3-snapshot pool"},
      {"k4", "full with a 4-snapshot pool"},
      {"full_fixed_alpha", "full with the SSL weight frozen at c"},
  };
}

bool is_preset(const std::string& name) {
  for (const auto& p : list_presets())
    if (p.name == name) return true;
  return false;
}

void apply_preset(RunConfig& cfg, const std::string& name) {
  AblationFlags& f = cfg.flags;
  if (name == "ft") {
    flags_off(f);
  } else if (name == "baseline") {
    flags_baseline(f);
  } else if (name == "baseline_ssl") {
    flags_baseline(f);
    f.use_ssl = true;
  } else if (name == "baseline_mlkd") {
    flags_baseline(f);
    f.use_feature_kd = f.use_logit_kd = f.use_ema = f.use_multi_model = true;
  } else if (name == "full") {
    flags_full(f);
  } else if (name == "fkd") {
    flags_baseline(f);
    f.use_ssl = true;
    f.use_feature_kd = true;
  } else if (name == "fkd_ema") {
    apply_preset(cfg, "fkd");
    f.use_ema = true;
  } else if (name == "fkd_ema_clkd") {
    apply_preset(cfg, "fkd_ema");
    f.use_logit_kd = true;
  } else if (name == "fkd_ema_clkd_mpm") {
    apply_preset(cfg, "fkd_ema_clkd");
    f.use_multi_model = true;
  } else if (name == "k1" || name == "k2" || name == "k3" || name == "k4") {
    flags_full(f);
    cfg.pool_size = static_cast<std::size_t>(name[1] - '0');
  } else if (name == "full_fixed_alpha") {
    flags_full(f);
    f.dynamic_weighting = false;
  } else {
    std::string msg = "unknown preset '" + name + "'. Available:";
    for (const auto& p : list_presets()) msg += " " + p.name;
    throw std::invalid_argument(msg);
  }
}

std::vector<std::string> table_presets(int table_id) {
  switch (table_id) {
    case 1: return {"ft", "baseline", "baseline_ssl", "baseline_mlkd", "full"};
    case 2: return {"fkd", "fkd_ema", "fkd_ema_clkd", "fkd_ema_clkd_mpm"};
    case 3: return {"k1", "k2", "k3", "k4"};
    case 4: return {"full_fixed_alpha", "full"};
    default: throw std::invalid_argument("table id must be 1, 2, 3 or 4");
  }
}

RunConfig desk_ablation_config() {
  RunConfig cfg;
  // Scarce labels against a large unlabeled pool, light repetition: the
  // regime where replay, distillation and the pretext task all have
  // measurable headroom within a couple of minutes per table.
  cfg.stream.classes_per_exp = 2;
  cfg.stream.repetition_probability = 0.2;
  cfg.stream.labeled_per_exp = 40;
  cfg.epochs = 16;
  cfg.adam.lr = 2e-3;
  cfg.replay_batch = 16;
  cfg.logit_kd_normalize = true;
  cfg.test_per_class = 32;
  // Correlation KD and the feature-KD ramp rescaled to desk loss magnitudes.
  cfg.schedule.delta = 1e-4;
  cfg.schedule.beta_slope = 0.05;
  return cfg;
}

}  // namespace cirlab
