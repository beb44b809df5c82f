#include "dpnet/config.hpp"

#include <cctype>
#include <climits>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>

#include "json.hpp"

#include "dpnet/rng.hpp"
#include "dpnet/version.hpp"

namespace dpnet {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

[[noreturn]] void bad_value(const char* key, const std::string& value,
                            const char* expected) {
  throw ConfigError(std::string("config key '") + key + "': expected " + expected +
                    ", got '" + value + "'");
}

long long to_ll(const char* key, const std::string& value) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &used);
  } catch (const std::exception&) {
    bad_value(key, value, "an integer");
  }
  if (used != value.size()) bad_value(key, value, "an integer");
  return v;
}

int to_int(const char* key, const std::string& value) {
  long long v = to_ll(key, value);
  if (v < INT_MIN || v > INT_MAX) bad_value(key, value, "an int-sized integer");
  return static_cast<int>(v);
}

std::uint64_t to_u64(const char* key, const std::string& value) {
  std::size_t used = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(value, &used);
  } catch (const std::exception&) {
    bad_value(key, value, "an unsigned integer");
  }
  if (used != value.size()) bad_value(key, value, "an unsigned integer");
  return v;
}

double to_double(const char* key, const std::string& value) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    bad_value(key, value, "a number");
  }
  if (used != value.size() || !std::isfinite(v)) bad_value(key, value, "a number");
  return v;
}

bool to_bool(const char* key, const std::string& value) {
  if (value == "0" || value == "false") return false;
  if (value == "1" || value == "true") return true;
  bad_value(key, value, "0/1");
}

std::vector<std::string> split_list(const char* key, const std::string& value) {
  std::vector<std::string> out;
  if (trim(value).empty()) return out;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = value.find(',', start);
    std::string item = trim(value.substr(start, comma - start));
    if (item.empty()) bad_value(key, value, "a comma-separated list");
    out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::vector<int> to_int_list(const char* key, const std::string& value) {
  std::vector<int> out;
  for (const std::string& s : split_list(key, value)) out.push_back(to_int(key, s));
  return out;
}

std::vector<double> to_double_list(const char* key, const std::string& value) {
  std::vector<double> out;
  for (const std::string& s : split_list(key, value)) out.push_back(to_double(key, s));
  return out;
}

template <class T, class F>
std::string join_list(const std::vector<T>& v, F fmt) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += fmt(v[i]);
  }
  return s;
}

std::string dump_ints(const std::vector<int>& v) {
  return join_list(v, [](int x) { return std::to_string(x); });
}

std::string dump_doubles(const std::vector<double>& v) {
  return join_list(v, fmt_double);
}

struct KeyDef {
  const char* name;
  std::function<std::string(const RunConfig&)> dump;
  std::function<void(RunConfig&, const std::string&)> set;
};

// Sorted by name; canonical_config relies on that.
const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = {
      {"batch_size", [](const RunConfig& c) { return std::to_string(c.batch_size); },
       [](RunConfig& c, const std::string& v) { c.batch_size = to_int("batch_size", v); }},
      {"cg_steps", [](const RunConfig& c) { return std::to_string(c.cg_steps); },
       [](RunConfig& c, const std::string& v) { c.cg_steps = to_int("cg_steps", v); }},
      {"checkpoint", [](const RunConfig& c) { return c.checkpoint; },
       [](RunConfig& c, const std::string& v) { c.checkpoint = v; }},
      {"data_dir", [](const RunConfig& c) { return c.data_dir; },
       [](RunConfig& c, const std::string& v) { c.data_dir = v; }},
      {"denom_fraction", [](const RunConfig& c) { return fmt_double(c.denom_fraction); },
       [](RunConfig& c, const std::string& v) {
         c.denom_fraction = to_double("denom_fraction", v);
       }},
      {"epochs", [](const RunConfig& c) { return std::to_string(c.epochs); },
       [](RunConfig& c, const std::string& v) { c.epochs = to_int("epochs", v); }},
      {"eval_layer", [](const RunConfig& c) { return std::to_string(c.eval_layer); },
       [](RunConfig& c, const std::string& v) { c.eval_layer = to_int("eval_layer", v); }},
      {"fan_in", [](const RunConfig& c) { return dump_ints(c.fan_in); },
       [](RunConfig& c, const std::string& v) { c.fan_in = to_int_list("fan_in", v); }},
      {"filter_size", [](const RunConfig& c) { return dump_ints(c.filter_size); },
       [](RunConfig& c, const std::string& v) {
         c.filter_size = to_int_list("filter_size", v);
       }},
      {"image_format", [](const RunConfig& c) { return c.image_format; },
       [](RunConfig& c, const std::string& v) { c.image_format = v; }},
      {"infer_alpha", [](const RunConfig& c) { return fmt_double(c.infer_alpha); },
       [](RunConfig& c, const std::string& v) { c.infer_alpha = to_double("infer_alpha", v); }},
      {"infer_batch", [](const RunConfig& c) { return std::to_string(c.infer_batch); },
       [](RunConfig& c, const std::string& v) { c.infer_batch = to_int("infer_batch", v); }},
      {"infer_lambda", [](const RunConfig& c) { return dump_doubles(c.infer_lambda); },
       [](RunConfig& c, const std::string& v) {
         c.infer_lambda = to_double_list("infer_lambda", v);
       }},
      {"infer_steps", [](const RunConfig& c) { return std::to_string(c.infer_steps); },
       [](RunConfig& c, const std::string& v) { c.infer_steps = to_int("infer_steps", v); }},
      {"init_from", [](const RunConfig& c) { return c.init_from; },
       [](RunConfig& c, const std::string& v) { c.init_from = v; }},
      {"ista_steps", [](const RunConfig& c) { return std::to_string(c.ista_steps); },
       [](RunConfig& c, const std::string& v) { c.ista_steps = to_int("ista_steps", v); }},
      {"lambda", [](const RunConfig& c) { return dump_doubles(c.lambda); },
       [](RunConfig& c, const std::string& v) { c.lambda = to_double_list("lambda", v); }},
      {"maps", [](const RunConfig& c) { return dump_ints(c.maps); },
       [](RunConfig& c, const std::string& v) { c.maps = to_int_list("maps", v); }},
      {"nonneg", [](const RunConfig& c) { return std::string(c.nonneg ? "1" : "0"); },
       [](RunConfig& c, const std::string& v) { c.nonneg = to_bool("nonneg", v); }},
      {"out_dir", [](const RunConfig& c) { return c.out_dir; },
       [](RunConfig& c, const std::string& v) { c.out_dir = v; }},
      {"patch_size", [](const RunConfig& c) { return dump_ints(c.patch_size); },
       [](RunConfig& c, const std::string& v) {
         c.patch_size = to_int_list("patch_size", v);
       }},
      {"patch_stride", [](const RunConfig& c) { return dump_ints(c.patch_stride); },
       [](RunConfig& c, const std::string& v) {
         c.patch_stride = to_int_list("patch_stride", v);
       }},
      {"phases", [](const RunConfig& c) { return std::to_string(c.phases); },
       [](RunConfig& c, const std::string& v) { c.phases = to_int("phases", v); }},
      {"pool_mode", [](const RunConfig& c) { return c.pool_mode; },
       [](RunConfig& c, const std::string& v) { c.pool_mode = v; }},
      {"pool_size", [](const RunConfig& c) { return dump_ints(c.pool_size); },
       [](RunConfig& c, const std::string& v) { c.pool_size = to_int_list("pool_size", v); }},
      {"reset_epochs", [](const RunConfig& c) { return dump_ints(c.reset_epochs); },
       [](RunConfig& c, const std::string& v) {
         c.reset_epochs = to_int_list("reset_epochs", v);
       }},
      {"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
       [](RunConfig& c, const std::string& v) { c.seed = to_u64("seed", v); }},
      {"svm_epochs", [](const RunConfig& c) { return std::to_string(c.svm_epochs); },
       [](RunConfig& c, const std::string& v) { c.svm_epochs = to_int("svm_epochs", v); }},
      {"svm_reg", [](const RunConfig& c) { return fmt_double(c.svm_reg); },
       [](RunConfig& c, const std::string& v) { c.svm_reg = to_double("svm_reg", v); }},
      {"svm_step", [](const RunConfig& c) { return fmt_double(c.svm_step); },
       [](RunConfig& c, const std::string& v) { c.svm_step = to_double("svm_step", v); }},
      {"test_limit", [](const RunConfig& c) { return std::to_string(c.test_limit); },
       [](RunConfig& c, const std::string& v) { c.test_limit = to_int("test_limit", v); }},
      {"theta_step", [](const RunConfig& c) { return dump_doubles(c.theta_step); },
       [](RunConfig& c, const std::string& v) {
         c.theta_step = to_double_list("theta_step", v);
       }},
      {"train_alpha", [](const RunConfig& c) { return fmt_double(c.train_alpha); },
       [](RunConfig& c, const std::string& v) { c.train_alpha = to_double("train_alpha", v); }},
      {"train_limit", [](const RunConfig& c) { return std::to_string(c.train_limit); },
       [](RunConfig& c, const std::string& v) { c.train_limit = to_int("train_limit", v); }},
      {"update_theta", [](const RunConfig& c) { return dump_ints(c.update_theta); },
       [](RunConfig& c, const std::string& v) {
         c.update_theta = to_int_list("update_theta", v);
       }},
      {"viz_image", [](const RunConfig& c) { return std::to_string(c.viz_image); },
       [](RunConfig& c, const std::string& v) { c.viz_image = to_int("viz_image", v); }},
      {"viz_images", [](const RunConfig& c) { return std::to_string(c.viz_images); },
       [](RunConfig& c, const std::string& v) { c.viz_images = to_int("viz_images", v); }},
      {"viz_samples", [](const RunConfig& c) { return std::to_string(c.viz_samples); },
       [](RunConfig& c, const std::string& v) { c.viz_samples = to_int("viz_samples", v); }},
  };
  return table;
}

const KeyDef* find_key(const std::string& name) {
  for (const KeyDef& k : key_table())
    if (name == k.name) return &k;
  return nullptr;
}

void check_nonempty(const RunConfig& cfg, const char* key, std::size_t n) {
  (void)cfg;
  if (n == 0)
    throw ConfigError(std::string("config key '") + key + "': list cannot be empty");
}

void check_positive(const char* key, int v) {
  if (v < 1)
    throw ConfigError(std::string("config key '") + key + "': must be >= 1, got " +
                      std::to_string(v));
}

}  // namespace

void apply_config_entry(RunConfig& cfg, const std::string& entry) {
  std::size_t eq = entry.find('=');
  if (eq == std::string::npos)
    throw ConfigError("config entry '" + entry + "' is not key=value");
  std::string key = trim(entry.substr(0, eq));
  std::string value = trim(entry.substr(eq + 1));
  const KeyDef* def = find_key(key);
  if (!def) throw ConfigError("unknown config key '" + key + "'");
  def->set(cfg, value);
}

RunConfig load_config(const std::string& path) {
  RunConfig cfg;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    try {
      apply_config_entry(cfg, t);
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  validate_config(cfg);
  return cfg;
}

void validate_config(const RunConfig& cfg) {
  if (cfg.maps.empty()) throw ConfigError("config key 'maps': need at least one layer");
  for (int m : cfg.maps) check_positive("maps", m);
  // Per-layer lists are resolved lazily (broadcast single entries, index
  // otherwise), so their lengths are only checked against the layers a
  // command actually touches. Values are validated here.
  check_nonempty(cfg, "filter_size", cfg.filter_size.size());
  check_nonempty(cfg, "pool_size", cfg.pool_size.size());
  check_nonempty(cfg, "fan_in", cfg.fan_in.size());
  check_nonempty(cfg, "lambda", cfg.lambda.size());
  check_nonempty(cfg, "theta_step", cfg.theta_step.size());
  check_nonempty(cfg, "infer_lambda", cfg.infer_lambda.size());
  check_nonempty(cfg, "update_theta", cfg.update_theta.size());
  check_nonempty(cfg, "patch_size", cfg.patch_size.size());
  check_nonempty(cfg, "patch_stride", cfg.patch_stride.size());
  for (int v : cfg.filter_size) check_positive("filter_size", v);
  for (int v : cfg.pool_size) check_positive("pool_size", v);
  for (int v : cfg.fan_in)
    if (v < 0) throw ConfigError("config key 'fan_in': must be >= 0 (0 = all)");
  for (double v : cfg.lambda)
    if (v <= 0) throw ConfigError("config key 'lambda': must be > 0");
  for (double v : cfg.infer_lambda)
    if (v <= 0) throw ConfigError("config key 'infer_lambda': must be > 0");
  for (double v : cfg.theta_step)
    if (v < 0) throw ConfigError("config key 'theta_step': must be >= 0");
  for (int v : cfg.update_theta)
    if (v != 0 && v != 1) throw ConfigError("config key 'update_theta': entries are 0/1");
  for (int v : cfg.patch_size) check_positive("patch_size", v);
  for (int v : cfg.patch_stride) check_positive("patch_stride", v);
  for (int v : cfg.reset_epochs) check_positive("reset_epochs", v);
  if (cfg.pool_mode != "gaussian" && cfg.pool_mode != "max")
    throw ConfigError("config key 'pool_mode': gaussian or max, got '" + cfg.pool_mode + "'");
  if (cfg.image_format != "png" && cfg.image_format != "pnm")
    throw ConfigError("config key 'image_format': png or pnm, got '" + cfg.image_format + "'");
  if (cfg.train_alpha != 1.0 && cfg.train_alpha != 0.5)
    throw ConfigError("config key 'train_alpha': 1 or 0.5");
  if (cfg.infer_alpha != 1.0 && cfg.infer_alpha != 0.5)
    throw ConfigError("config key 'infer_alpha': 1 or 0.5");
  if (cfg.phases != 1 && cfg.phases != 2)
    throw ConfigError("config key 'phases': 1 or 2");
  if (cfg.epochs < 0) throw ConfigError("config key 'epochs': must be >= 0");
  check_positive("ista_steps", cfg.ista_steps);
  check_positive("infer_steps", cfg.infer_steps);
  check_positive("cg_steps", cfg.cg_steps);
  check_positive("batch_size", cfg.batch_size);
  check_positive("infer_batch", cfg.infer_batch);
  check_positive("svm_epochs", cfg.svm_epochs);
  check_positive("viz_samples", cfg.viz_samples);
  check_positive("viz_images", cfg.viz_images);
  if (cfg.viz_image < 0) throw ConfigError("config key 'viz_image': must be >= 0");
  if (cfg.denom_fraction <= 0.0 || cfg.denom_fraction > 1.0)
    throw ConfigError("config key 'denom_fraction': must be in (0, 1]");
  if (cfg.svm_reg < 0) throw ConfigError("config key 'svm_reg': must be >= 0");
  if (cfg.svm_step <= 0) throw ConfigError("config key 'svm_step': must be > 0");
  if (cfg.train_limit < 0 || cfg.test_limit < 0)
    throw ConfigError("config keys 'train_limit'/'test_limit': must be >= 0");
  // eval_layer is checked against the layer count of the model actually used
  // (which may come from a checkpoint), not against `maps`.
  check_positive("eval_layer", cfg.eval_layer);
}

std::string canonical_config(const RunConfig& cfg) {
  std::string out;
  for (const KeyDef& k : key_table()) {
    out += k.name;
    out += '=';
    out += k.dump(cfg);
    out += '\n';
  }
  return out;
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string config_hash(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical_config(cfg))));
  return buf;
}

int layer_int(const std::vector<int>& v, int layer) {
  if (v.size() == 1) return v[0];
  if (static_cast<std::size_t>(layer) > v.size())
    throw ConfigError("per-layer list has " + std::to_string(v.size()) +
                      " entries but layer " + std::to_string(layer) + " was asked for");
  return v[static_cast<std::size_t>(layer) - 1];
}

double layer_double(const std::vector<double>& v, int layer) {
  if (v.size() == 1) return v[0];
  if (static_cast<std::size_t>(layer) > v.size())
    throw ConfigError("per-layer list has " + std::to_string(v.size()) +
                      " entries but layer " + std::to_string(layer) + " was asked for");
  return v[static_cast<std::size_t>(layer) - 1];
}

std::vector<LayerSpec> layer_specs(const RunConfig& cfg) {
  std::vector<LayerSpec> specs;
  for (int k = 1; k <= cfg.layers(); ++k) {
    LayerSpec s;
    s.maps = cfg.maps[static_cast<std::size_t>(k) - 1];
    s.filter_size = layer_int(cfg.filter_size, k);
    s.pool_size = layer_int(cfg.pool_size, k);
    s.fan_in = layer_int(cfg.fan_in, k);
    s.lambda = layer_double(cfg.lambda, k);
    s.alpha = cfg.train_alpha;
    specs.push_back(s);
  }
  return specs;
}

ModelState model_from_config(const RunConfig& cfg, int channels, int h, int w) {
  return make_model(channels, h, w, layer_specs(cfg), cfg.seed,
                    cfg.pool_mode == "max" ? PoolMode::max : PoolMode::gaussian,
                    cfg.nonneg);
}

TrainOptions train_from_config(const RunConfig& cfg) {
  TrainOptions t;
  for (int k = 1; k <= cfg.layers(); ++k) {
    PhasePlan plan;
    plan.top_layer = k;
    plan.epochs = cfg.epochs;
    plan.ista_steps = cfg.ista_steps;
    for (int j = 1; j <= k; ++j)
      plan.update_theta.push_back(static_cast<std::uint8_t>(layer_int(cfg.update_theta, j)));
    plan.update_filters = {k};
    plan.reset_epochs = cfg.reset_epochs;
    t.phases.push_back(plan);
  }
  t.batch_size = cfg.batch_size;
  t.cg_steps = cfg.cg_steps;
  for (int k = 1; k <= cfg.layers(); ++k) t.beta_u.push_back(layer_double(cfg.theta_step, k));
  t.denom_fraction = cfg.denom_fraction;
  return t;
}

InferenceOptions inference_from_config(const RunConfig& cfg, int num_layers) {
  InferenceOptions o;
  o.ista_steps = cfg.infer_steps;
  for (int k = 1; k <= num_layers; ++k)
    o.lambda.push_back(layer_double(cfg.infer_lambda, k));
  o.alpha = cfg.infer_alpha;
  o.phases = cfg.phases;
  for (int k = 1; k <= num_layers; ++k)
    o.update_theta.push_back(static_cast<std::uint8_t>(layer_int(cfg.update_theta, k)));
  for (int k = 1; k <= num_layers; ++k) o.beta_u.push_back(layer_double(cfg.theta_step, k));
  o.denom_fraction = cfg.denom_fraction;
  o.record_trace = true;
  return o;
}

EvalConfig eval_from_config(const RunConfig& cfg, int num_layers) {
  if (cfg.eval_layer > num_layers)
    throw ConfigError("config key 'eval_layer': model has only " +
                      std::to_string(num_layers) + " layers");
  EvalConfig e;
  e.layer = cfg.eval_layer;
  e.patch_size = layer_int(cfg.patch_size, cfg.eval_layer);
  e.stride = layer_int(cfg.patch_stride, cfg.eval_layer);
  e.infer = inference_from_config(cfg, num_layers);
  e.svm.reg = cfg.svm_reg;
  e.svm.epochs = cfg.svm_epochs;
  e.svm.step0 = cfg.svm_step;
  e.svm.seed = Rng::derive(cfg.seed, 0x5f3u);
  e.infer_batch = cfg.infer_batch;
  return e;
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const RunConfig& cfg) {
  std::filesystem::create_directories(out_dir);
  nlohmann::json j;
  j["command"] = command;
  j["config_hash"] = config_hash(cfg);
  j["seed"] = cfg.seed;
  j["versions"] = {{"program", kVersion},
                   {"checkpoint_format", 1},
                   {"features_format", 1},
                   {"config_format", 1}};
  std::ofstream out(out_dir + "/manifest.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest in " + out_dir);
  out << j.dump(2) << '\n';
  std::ofstream cfg_out(out_dir + "/effective.cfg", std::ios::binary);
  if (!cfg_out) throw std::runtime_error("cannot write effective.cfg in " + out_dir);
  cfg_out << canonical_config(cfg);
}

}  // namespace dpnet
