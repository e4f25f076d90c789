#pragma once

// Run configuration file: one `key = value` per line, `#` starts a comment,
// unknown keys are rejected. Lists (channels, per-axis lambda0) are separated
// by commas or spaces.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "splatnet/cloud.hpp"
#include "splatnet/error.hpp"
#include "splatnet/network.hpp"
#include "splatnet/train.hpp"

namespace splatnet {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::vector<double> lambda0;  // one value (isotropic) or one per lattice dimension
  std::string data_dir;
  std::string val_dir;
  double val_fraction = 0.0;
  std::string output_dir = "out";
  unsigned threads = 1;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',' || ch == ' ' || ch == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

class ConfigValues {
 public:
  ConfigValues(std::map<std::string, std::pair<std::string, std::size_t>> values)
      : values_(std::move(values)) {}

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string text(const std::string& key) const { return values_.at(key).first; }

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw ConfigError("config key '" + key + "' (line " + std::to_string(values_.at(key).second) +
                      "): " + why);
  }

  double number(const std::string& key) const {
    const std::string v = text(key);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size() || !std::isfinite(d)) fail(key, "expected a number, got '" + v + "'");
      return d;
    } catch (const std::logic_error&) {
      fail(key, "expected a number, got '" + v + "'");
    }
  }

  std::uint64_t count(const std::string& key) const {
    const double d = number(key);
    if (d < 0 || d != std::floor(d) || d > 1.8e19) fail(key, "expected a non-negative integer");
    return static_cast<std::uint64_t>(d);
  }

  bool flag(const std::string& key) const {
    const std::string v = text(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    fail(key, "expected a boolean, got '" + v + "'");
  }

 private:
  std::map<std::string, std::pair<std::string, std::size_t>> values_;
};

}  // namespace detail

inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys{
      "arch", "lambda0", "num_classes", "feature_channels", "lattice_channels", "normalize",
      "gravity_axis", "learning_rate", "adam_beta1", "adam_beta2", "adam_epsilon", "batch_size",
      "max_iterations", "rotate", "rotate_full", "translate", "translate_range", "scale",
      "scale_min", "scale_max", "color_jitter", "jitter_range", "sample_size", "seed",
      "ignore_label", "log_interval", "checkpoint_interval", "val_interval", "patience",
      "data_dir", "val_dir", "val_fraction", "output_dir", "threads"};
  return keys;
}

/// Lattice config from the lambda0 values: one value is isotropic over the
/// lattice channels, otherwise one value per lattice dimension.
inline LatticeConfig resolve_lambda0(const std::vector<double>& lambda0,
                                     const std::vector<std::string>& lattice_channels) {
  const std::size_t dim = expand_channels(lattice_channels).size();
  if (lambda0.empty()) throw ConfigError("config key 'lambda0' is required");
  for (double v : lambda0) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("config key 'lambda0': values must be > 0");
  }
  if (lambda0.size() == 1) return LatticeConfig::isotropic(dim, lambda0[0]);
  if (lambda0.size() != dim) {
    throw ConfigError("config key 'lambda0': " + std::to_string(lambda0.size()) + " values for " +
                      std::to_string(dim) + " lattice dimensions");
  }
  return LatticeConfig(lambda0);
}

inline RunConfig parse_run_config(std::istream& in) {
  std::map<std::string, std::pair<std::string, std::size_t>> raw;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (!known_config_keys().count(key)) {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (raw.count(key)) throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    raw[key] = {value, line_no};
  }
  const detail::ConfigValues v(std::move(raw));

  RunConfig cfg;
  auto& m = cfg.model;
  auto& t = cfg.train;
  if (v.has("arch")) m.arch = v.text("arch");
  if (v.has("num_classes")) m.num_classes = v.count("num_classes");
  if (v.has("feature_channels")) m.feature_channels = detail::split_list(v.text("feature_channels"));
  if (v.has("lattice_channels")) m.lattice_channels = detail::split_list(v.text("lattice_channels"));
  if (v.has("normalize")) m.normalize = v.flag("normalize");
  if (v.has("gravity_axis")) {
    m.gravity_axis = v.text("gravity_axis");
    if (m.gravity_axis != "x" && m.gravity_axis != "y" && m.gravity_axis != "z") {
      v.fail("gravity_axis", "must be x, y or z");
    }
    t.augment.gravity_axis = m.gravity_axis;
  }
  if (v.has("lambda0")) {
    for (const auto& s : detail::split_list(v.text("lambda0"))) {
      try {
        std::size_t used = 0;
        const double d = std::stod(s, &used);
        if (used != s.size()) v.fail("lambda0", "expected numbers, got '" + s + "'");
        cfg.lambda0.push_back(d);
      } catch (const std::logic_error&) {
        v.fail("lambda0", "expected numbers, got '" + s + "'");
      }
    }
    for (double d : cfg.lambda0) {
      if (!(d > 0.0) || !std::isfinite(d)) v.fail("lambda0", "values must be > 0");
    }
  }
  if (v.has("learning_rate")) t.learning_rate = v.number("learning_rate");
  if (v.has("adam_beta1")) t.adam_beta1 = v.number("adam_beta1");
  if (v.has("adam_beta2")) t.adam_beta2 = v.number("adam_beta2");
  if (v.has("adam_epsilon")) t.adam_epsilon = v.number("adam_epsilon");
  if (v.has("batch_size")) t.batch_size = v.count("batch_size");
  if (v.has("max_iterations")) t.max_iterations = v.count("max_iterations");
  if (v.has("rotate")) t.augment.rotate = v.flag("rotate");
  if (v.has("rotate_full")) t.augment.rotate_full = v.flag("rotate_full");
  if (v.has("translate")) t.augment.translate = v.flag("translate");
  if (v.has("translate_range")) t.augment.translate_range = v.number("translate_range");
  if (v.has("scale")) t.augment.scale = v.flag("scale");
  if (v.has("scale_min")) t.augment.scale_min = v.number("scale_min");
  if (v.has("scale_max")) t.augment.scale_max = v.number("scale_max");
  if (v.has("color_jitter")) t.augment.color_jitter = v.flag("color_jitter");
  if (v.has("jitter_range")) t.augment.jitter_range = v.number("jitter_range");
  if (v.has("sample_size")) t.sample_size = v.count("sample_size");
  if (v.has("seed")) t.seed = v.count("seed");
  if (v.has("ignore_label")) t.ignore_label = static_cast<int>(v.number("ignore_label"));
  if (v.has("log_interval")) t.log_interval = v.count("log_interval");
  if (v.has("checkpoint_interval")) t.checkpoint_interval = v.count("checkpoint_interval");
  if (v.has("val_interval")) t.val_interval = v.count("val_interval");
  if (v.has("patience")) t.patience = v.count("patience");
  if (v.has("data_dir")) cfg.data_dir = v.text("data_dir");
  if (v.has("val_dir")) cfg.val_dir = v.text("val_dir");
  if (v.has("val_fraction")) {
    cfg.val_fraction = v.number("val_fraction");
    if (cfg.val_fraction < 0.0 || cfg.val_fraction >= 1.0) v.fail("val_fraction", "must be in [0, 1)");
  }
  if (v.has("output_dir")) cfg.output_dir = v.text("output_dir");
  if (v.has("threads")) cfg.threads = static_cast<unsigned>(std::max<std::uint64_t>(1, v.count("threads")));

  if (v.has("learning_rate") && !(t.learning_rate >= 0.0)) v.fail("learning_rate", "must be >= 0");
  if (v.has("batch_size") && t.batch_size < 1) v.fail("batch_size", "must be >= 1");
  if (v.has("adam_beta1") && !(t.adam_beta1 >= 0.0 && t.adam_beta1 < 1.0)) v.fail("adam_beta1", "must be in [0, 1)");
  if (v.has("adam_beta2") && !(t.adam_beta2 >= 0.0 && t.adam_beta2 < 1.0)) v.fail("adam_beta2", "must be in [0, 1)");
  return cfg;
}

/// Checks what training needs and resolves lambda0 into the model config.
inline void finalize_run_config(RunConfig& cfg) {
  if (cfg.model.arch.empty()) throw ConfigError("config key 'arch' is required");
  if (cfg.data_dir.empty()) throw ConfigError("config key 'data_dir' is required");
  cfg.model.lambda0 = resolve_lambda0(cfg.lambda0, cfg.model.lattice_channels);
  cfg.train.validate();
  // Fails early on grammar errors.
  const NetworkSpec spec = parse_arch(cfg.model.arch, cfg.model.lambda0, cfg.model.num_classes, cfg.model.normalize);
  cfg.model.num_classes = spec.num_classes;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  return parse_run_config(in);
}

}  // namespace splatnet
