#pragma once

// Run configuration for the command-line harness.
//
// Configuration is a flat set of dotted keys ("projection.eta1 = 11"). A file
// supplies values first, command-line flags override them, and the fully
// resolved set (every key, defaults included) is echoed into the manifest.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "grasp/engine.hpp"
#include "grasp/error.hpp"
#include "grasp/metrics.hpp"

namespace grasp {

enum class Command { Defend, Evaluate, Robustness, Ablate, Sweep, Gradcheck };

inline const char* command_name(Command c) {
  switch (c) {
    case Command::Defend: return "defend";
    case Command::Evaluate: return "evaluate";
    case Command::Robustness: return "robustness";
    case Command::Ablate: return "ablate";
    case Command::Sweep: return "sweep";
    case Command::Gradcheck: return "gradcheck";
  }
  return "?";
}

inline Command parse_command(const std::string& s) {
  for (Command c : {Command::Defend, Command::Evaluate, Command::Robustness, Command::Ablate,
                    Command::Sweep, Command::Gradcheck}) {
    if (s == command_name(c)) return c;
  }
  throw ConfigError("unknown command '" + s + "'");
}

struct ModelSpec {
  std::string name = "conv";  // identity | affine | conv | bridge
  std::uint64_t seed = 42;
  std::size_t hidden_channels = 16;
  double weight_scale = 0.5;
  double input_gain = 2.0;
  double gain = 1.0;  // affine
  double bias = 0.0;  // affine
  std::string bridge;
  int bridge_timeout_ms = 30000;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t channels = 3;
};

inline const std::vector<std::string>& sweep_axes() {
  static const std::vector<std::string> axes{"eta1", "eta2", "eta3", "kappa", "epsilon", "iters"};
  return axes;
}

struct RunConfig {
  Command command = Command::Defend;
  std::vector<std::string> inputs;
  std::string out_dir = "grasp_out";
  std::string adv_dir;
  std::size_t jobs = 1;
  ModelSpec model;
  DefenseConfig defense;
  std::vector<Transform> battery = standard_battery();
  std::string sweep_axis;
  std::vector<double> sweep_values;
  std::size_t gradcheck_seeds = 20;
  std::size_t gradcheck_size = 8;
};

// ---------------------------------------------------------------------------
// Value parsing

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (res.ec != std::errc{} || res.ptr != end) throw ConfigError(key + ": not a number: '" + v + "'");
  return out;
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw ConfigError(key + ": not a non-negative integer: '" + v + "'");
  }
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": not a boolean: '" + v + "'");
}

inline std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string fmt_bool(bool b) { return b ? "true" : "false"; }

template <class T>
std::string join(const std::vector<T>& xs, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += f(xs[i]);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Key table

struct ConfigKey {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
  using namespace detail;
#define GRASP_DOUBLE_KEY(KEY, FIELD)                                                        \
  ConfigKey {                                                                               \
    KEY, [](RunConfig& c, const std::string& v) { c.FIELD = to_double(KEY, v); },           \
        [](const RunConfig& c) { return fmt_double(c.FIELD); }                              \
  }
#define GRASP_UINT_KEY(KEY, FIELD)                                                          \
  ConfigKey {                                                                               \
    KEY,                                                                                    \
        [](RunConfig& c, const std::string& v) {                                            \
          c.FIELD = static_cast<decltype(c.FIELD)>(to_uint(KEY, v));                        \
        },                                                                                  \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                          \
  }
#define GRASP_BOOL_KEY(KEY, FIELD)                                                          \
  ConfigKey {                                                                               \
    KEY, [](RunConfig& c, const std::string& v) { c.FIELD = to_bool(KEY, v); },             \
        [](const RunConfig& c) { return fmt_bool(c.FIELD); }                                \
  }
#define GRASP_STRING_KEY(KEY, FIELD)                                                        \
  ConfigKey {                                                                               \
    KEY, [](RunConfig& c, const std::string& v) { c.FIELD = v; },                           \
        [](const RunConfig& c) { return c.FIELD; }                                          \
  }

  static const std::vector<ConfigKey> keys{
      GRASP_STRING_KEY("model.name", model.name),
      GRASP_UINT_KEY("model.seed", model.seed),
      GRASP_UINT_KEY("model.hidden_channels", model.hidden_channels),
      GRASP_DOUBLE_KEY("model.weight_scale", model.weight_scale),
      GRASP_DOUBLE_KEY("model.input_gain", model.input_gain),
      GRASP_DOUBLE_KEY("model.gain", model.gain),
      GRASP_DOUBLE_KEY("model.bias", model.bias),
      GRASP_STRING_KEY("model.bridge", model.bridge),
      GRASP_UINT_KEY("model.bridge_timeout_ms", model.bridge_timeout_ms),
      GRASP_UINT_KEY("model.height", model.height),
      GRASP_UINT_KEY("model.width", model.width),
      GRASP_UINT_KEY("model.channels", model.channels),
      GRASP_DOUBLE_KEY("defense.epsilon", defense.epsilon),
      GRASP_UINT_KEY("defense.iterations", defense.iterations),
      GRASP_DOUBLE_KEY("defense.kappa", defense.kappa),
      GRASP_UINT_KEY("defense.smoothing_kernel", defense.smoothing_kernel),
      GRASP_UINT_KEY("defense.start_seed", defense.start_seed),
      GRASP_DOUBLE_KEY("projection.lambda1", defense.projection.lambda1),
      GRASP_DOUBLE_KEY("projection.mu1", defense.projection.mu1),
      GRASP_DOUBLE_KEY("projection.lambda2", defense.projection.lambda2),
      GRASP_DOUBLE_KEY("projection.mu2", defense.projection.mu2),
      GRASP_DOUBLE_KEY("projection.lambda3", defense.projection.lambda3),
      GRASP_DOUBLE_KEY("projection.mu3", defense.projection.mu3),
      GRASP_DOUBLE_KEY("projection.eta1", defense.projection.eta1),
      GRASP_DOUBLE_KEY("projection.eta2", defense.projection.eta2),
      GRASP_DOUBLE_KEY("projection.eta3", defense.projection.eta3),
      GRASP_DOUBLE_KEY("projection.xi", defense.projection.xi),
      GRASP_BOOL_KEY("projection.enabled", defense.projection.enabled),
      GRASP_UINT_KEY("ssim.window", defense.ssim.window_size),
      GRASP_DOUBLE_KEY("ssim.sigma", defense.ssim.sigma),
      GRASP_BOOL_KEY("ssim.literal_form", defense.ssim.literal_form),
      GRASP_BOOL_KEY("losses.mse", defense.losses.mse),
      GRASP_BOOL_KEY("losses.ssim", defense.losses.ssim),
      GRASP_BOOL_KEY("losses.lf", defense.losses.lf),
      GRASP_STRING_KEY("run.out", out_dir),
      GRASP_STRING_KEY("run.adv_dir", adv_dir),
      GRASP_UINT_KEY("run.jobs", jobs),
      ConfigKey{"run.inputs",
                [](RunConfig& c, const std::string& v) { c.inputs = split_list(v); },
                [](const RunConfig& c) {
                  return join<std::string>(c.inputs, [](const std::string& s) { return s; });
                }},
      ConfigKey{"robustness.battery",
                [](RunConfig& c, const std::string& v) {
                  c.battery.clear();
                  for (const auto& item : split_list(v)) c.battery.push_back(Transform::parse(item));
                },
                [](const RunConfig& c) {
                  return join<Transform>(c.battery, [](const Transform& t) { return t.label(); });
                }},
      GRASP_STRING_KEY("sweep.axis", sweep_axis),
      ConfigKey{"sweep.values",
                [](RunConfig& c, const std::string& v) {
                  c.sweep_values.clear();
                  for (const auto& item : split_list(v)) {
                    c.sweep_values.push_back(to_double("sweep.values", item));
                  }
                },
                [](const RunConfig& c) {
                  return join<double>(c.sweep_values, [](const double& d) { return fmt_double(d); });
                }},
      GRASP_UINT_KEY("gradcheck.seeds", gradcheck_seeds),
      GRASP_UINT_KEY("gradcheck.size", gradcheck_size),
  };
#undef GRASP_DOUBLE_KEY
#undef GRASP_UINT_KEY
#undef GRASP_BOOL_KEY
#undef GRASP_STRING_KEY
  return keys;
}

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : config_keys()) {
    if (k.name == key) {
      k.set(cfg, detail::trim(value));
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

// Every key with its current value, in table order.
inline std::vector<std::pair<std::string, std::string>> resolved_config(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : config_keys()) out.emplace_back(k.name, k.get(cfg));
  return out;
}

// Parses "key = value" lines; '#' starts a comment. Later lines win.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text,
                                                                          const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), detail::trim(line.substr(eq + 1)));
  }
  return out;
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  for (const auto& [k, v] : parse_config_text(ss.str(), path)) {
    try {
      set_config_value(cfg, k, v);
    } catch (const ConfigError& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }
}

// Checks that do not touch the filesystem or the model.
inline void validate_config(RunConfig& cfg) {
  static const std::vector<std::string> names{"identity", "affine", "conv", "bridge"};
  if (!cfg.model.bridge.empty()) {
    if (cfg.model.name != "conv" && cfg.model.name != "bridge") {
      throw ConfigError("model.name '" + cfg.model.name + "' contradicts model.bridge");
    }
    cfg.model.name = "bridge";
  }
  if (std::find(names.begin(), names.end(), cfg.model.name) == names.end()) {
    throw ConfigError("unknown model '" + cfg.model.name + "'");
  }
  if (cfg.model.name == "bridge" && cfg.model.bridge.empty()) {
    throw ConfigError("model 'bridge' needs model.bridge (--bridge)");
  }
  if (cfg.model.name != "bridge") {
    if (cfg.model.height == 0 || cfg.model.width == 0 || cfg.model.channels == 0) {
      throw ConfigError("model dimensions must be positive");
    }
    if (cfg.model.height % 2 || cfg.model.width % 2) {
      throw ConfigError("model height and width must be even");
    }
    if (cfg.model.channels != 1 && cfg.model.channels != 3) {
      throw ConfigError("model.channels must be 1 or 3");
    }
  }
  if (cfg.model.hidden_channels == 0) throw ConfigError("model.hidden_channels must be positive");
  if (cfg.jobs == 0) throw ConfigError("run.jobs must be at least 1");
  if (cfg.out_dir.empty()) throw ConfigError("run.out must not be empty");
  try {
    cfg.defense.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  if (cfg.command != Command::Gradcheck && cfg.inputs.empty()) {
    throw ConfigError(std::string(command_name(cfg.command)) + " needs at least one input");
  }
  if (cfg.command == Command::Evaluate && cfg.adv_dir.empty()) {
    throw ConfigError("evaluate needs run.adv_dir (--adv-dir)");
  }
  if (cfg.command == Command::Robustness && cfg.battery.empty()) {
    throw ConfigError("robustness needs a nonempty robustness.battery");
  }
  if (cfg.command == Command::Sweep) {
    const auto& axes = sweep_axes();
    if (std::find(axes.begin(), axes.end(), cfg.sweep_axis) == axes.end()) {
      throw ConfigError("sweep.axis must be one of eta1, eta2, eta3, kappa, epsilon, iters");
    }
    if (cfg.sweep_values.empty()) throw ConfigError("sweep needs sweep.values");
    for (double v : cfg.sweep_values) {
      if (cfg.sweep_axis == "iters" && (v < 0 || v != std::floor(v))) {
        throw ConfigError("sweep over iters needs non-negative integers");
      }
      if (cfg.sweep_axis == "epsilon" && v < 0) throw ConfigError("epsilon must be >= 0");
    }
  }
  if (cfg.command == Command::Gradcheck) {
    if (cfg.gradcheck_seeds == 0) throw ConfigError("gradcheck.seeds must be positive");
    if (cfg.gradcheck_size < 2 || cfg.gradcheck_size % 2) {
      throw ConfigError("gradcheck.size must be even and >= 2");
    }
  }
}

// Applies one sweep value to a copy of the defense settings.
inline DefenseConfig with_sweep_value(DefenseConfig d, const std::string& axis, double v) {
  if (axis == "eta1") d.projection.eta1 = v;
  else if (axis == "eta2") d.projection.eta2 = v;
  else if (axis == "eta3") d.projection.eta3 = v;
  else if (axis == "kappa") d.kappa = v;
  else if (axis == "epsilon") d.epsilon = v;
  else if (axis == "iters") d.iterations = static_cast<std::size_t>(v);
  else throw ConfigError("unknown sweep axis '" + axis + "'");
  return d;
}

}  // namespace grasp
