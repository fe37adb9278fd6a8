#pragma once

#include "sdm/cli/study.hpp"

#include <CLI11.hpp>

#include <map>
#include <ostream>
#include <string>

namespace sdm::cli {

enum ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kData = 3,
  kNonConvergence = 4,
  kInternal = 5,
};

// Parses argv, overlays flags on the config file and runs one subcommand.
// Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Species distribution models: fitting, simulation, evaluation and maps", "sdm"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  std::string config_path;
  app.add_option("--config", config_path, "INI config file; flags override its values");
  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::Option*> opts;
  for (const auto& k : key_table()) {
    auto* o = app.add_option(std::string("--") + k.flag, flags[k.key], k.help);
    if (std::string(k.key) == "model.method") o->check(CLI::IsMember(method_ids()));
    if (std::string(k.key) == "model.cdf") o->check(CLI::IsMember({"step", "exp", "unicap"}));
    opts[k.key] = o;
  }
  const std::map<std::string, std::string> commands{
      {"fit", "fit one estimator to a grid"},
      {"simulate", "write a synthetic grid, survey and distance-sampling data"},
      {"evaluate", "AUC and information criteria of a completed fit"},
      {"map", "PGM map and CSV of per-cell predictions of a completed fit"},
      {"study", "Monte-Carlo bias, variance and coverage study"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    RunConfig cfg;
    cfg.command = app.get_subcommands().front()->get_name();
    if (!config_path.empty()) load_ini(config_path, cfg);
    for (const auto& [key, opt] : opts) {
      if (opt->count() > 0) cfg.set(key, flags[key]);
    }
    if (cfg.command == "fit") return run_fit(cfg, out);
    if (cfg.command == "simulate") return run_simulate(cfg, out);
    if (cfg.command == "evaluate") return run_evaluate(cfg, out);
    if (cfg.command == "map") return run_map(cfg, out);
    return run_study(cfg, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return kData;
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << '\n';
    return kData;
  } catch (const NonConvergence& e) {
    err << "non-convergence: " << e.what() << '\n';
    return kNonConvergence;
  } catch (const DomainError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNonConvergence;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kInternal;
  }
}

}  // namespace sdm::cli
