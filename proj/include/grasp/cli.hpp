#pragma once

// grasp defend|evaluate|robustness|ablate|sweep|gradcheck [options] INPUTS...

#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "grasp/config.hpp"
#include "grasp/harness.hpp"

namespace grasp {

struct CliResult {
  std::optional<RunConfig> config;  // empty when the process should just exit
  int exit_code = kExitOk;
};

inline CliResult parse_cli(int argc, const char* const* argv) {
  CLI::App app{"Adversarial protection of images against differentiable manipulation models"};
  app.set_version_flag("--version", "grasp 0.1.0");

  std::string command;
  std::vector<std::string> inputs;
  std::string config_path, model, bridge, out, adv_dir, axis, values, battery, losses;
  std::optional<std::uint64_t> seed, iters, jobs;
  std::optional<double> epsilon, kappa;
  std::vector<std::string> sets;
  bool no_projection = false;

  app.add_option("command", command, "defend | evaluate | robustness | ablate | sweep | gradcheck")
      ->required();
  app.add_option("inputs", inputs, "PNG files, directories of PNGs, or synthetic:N");
  app.add_option("--config", config_path, "flat key = value configuration file");
  app.add_option("--model", model, "built-in model: identity | affine | conv");
  app.add_option("--bridge", bridge, "external model: tcp:HOST:PORT or exec:COMMAND");
  app.add_option("--seed", seed, "model seed");
  app.add_option("--epsilon", epsilon, "l-infinity perturbation budget");
  app.add_option("--iters", iters, "iterations");
  app.add_option("--kappa", kappa, "step size");
  app.add_option("--jobs", jobs, "worker count");
  app.add_option("--out", out, "output directory");
  app.add_option("--adv-dir", adv_dir, "directory of adversarial PNGs (evaluate, robustness)");
  app.add_option("--axis", axis, "sweep axis: eta1 | eta2 | eta3 | kappa | epsilon | iters");
  app.add_option("--values", values, "comma-separated sweep values");
  app.add_option("--battery", battery, "comma-separated transforms, e.g. gaussian_blur:3,rotate:90");
  app.add_option("--losses", losses, "comma-separated subset of mse,ssim,lf");
  app.add_flag("--no-projection", no_projection, "sum oriented gradients without projection");
  app.add_option("--set", sets, "override any configuration key: KEY=VALUE")->take_all();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return {std::nullopt, app.exit(e)};
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return {std::nullopt, kExitConfig};
  }

  try {
    RunConfig cfg;
    cfg.command = parse_command(command);
    if (!config_path.empty()) apply_config_file(cfg, config_path);
    if (!inputs.empty()) cfg.inputs = inputs;
    if (!model.empty()) set_config_value(cfg, "model.name", model);
    if (!bridge.empty()) set_config_value(cfg, "model.bridge", bridge);
    if (seed) cfg.model.seed = *seed;
    if (epsilon) cfg.defense.epsilon = *epsilon;
    if (iters) cfg.defense.iterations = *iters;
    if (kappa) cfg.defense.kappa = *kappa;
    if (jobs) cfg.jobs = *jobs;
    if (!out.empty()) cfg.out_dir = out;
    if (!adv_dir.empty()) cfg.adv_dir = adv_dir;
    if (!axis.empty()) set_config_value(cfg, "sweep.axis", axis);
    if (!values.empty()) set_config_value(cfg, "sweep.values", values);
    if (!battery.empty()) set_config_value(cfg, "robustness.battery", battery);
    if (!losses.empty()) {
      cfg.defense.losses = {false, false, false};
      for (const auto& l : detail::split_list(losses)) {
        if (l == "mse") cfg.defense.losses.mse = true;
        else if (l == "ssim") cfg.defense.losses.ssim = true;
        else if (l == "lf") cfg.defense.losses.lf = true;
        else throw ConfigError("unknown loss '" + l + "'");
      }
    }
    if (no_projection) cfg.defense.projection.enabled = false;
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
      set_config_value(cfg, detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
    }
    if (!model.empty() && !bridge.empty()) {
      throw ConfigError("--model and --bridge are mutually exclusive");
    }
    return {cfg, kExitOk};
  } catch (const ConfigError& e) {
    log(LogLevel::Error, std::string("configuration: ") + e.what());
    return {std::nullopt, kExitConfig};
  }
}

inline int run_cli(int argc, const char* const* argv) {
  CliResult parsed = parse_cli(argc, argv);
  if (!parsed.config) return parsed.exit_code;
  return run(std::move(*parsed.config));
}

}  // namespace grasp
