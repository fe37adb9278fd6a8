#pragma once

#include "sdm/core.hpp"
#include "sdm/csv.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace sdm::cli {

// One recognised configuration key. `key` is "section.name" as it appears in
// the INI file; `flag` is the long command-line option that overrides it.
struct KeySpec {
  const char* key;
  const char* flag;
  const char* help;
};

inline const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> t{
      {"run.out", "out", "output directory"},
      {"run.seed", "seed", "64-bit base seed"},
      {"run.workers", "workers", "worker threads for replicates and candidate fits"},
      {"data.grid", "grid", "grid CSV"},
      {"data.area", "area", "study-area size when the grid has no w column"},
      {"data.standardize", "standardize", "standardize features at load (true/false)"},
      {"data.habitat", "habitat", "comma list of habitat columns"},
      {"data.bias", "bias", "comma list of bias columns"},
      {"data.access", "access", "comma list of accessibility columns"},
      {"data.regions", "regions", "survey regions CSV (region_id, cell_id)"},
      {"data.survey", "survey", "survey CSV (region_id, visit, y, detection covariates)"},
      {"data.ds-area", "ds-area", "distance-sampling area CSV"},
      {"data.ds-points", "ds-points", "distance-sampling detections CSV"},
      {"input.fit", "fit", "directory of a completed fit run"},
      {"model.method", "method", "estimator id"},
      {"model.beta", "beta", "beta-power divergence parameter"},
      {"model.gamma", "gamma", "gamma-power divergence parameter"},
      {"model.tau", "tau", "fixed quasi-linear tau"},
      {"model.tau-grid", "tau-grid", "comma list of candidate tau values"},
      {"model.beta-grid", "beta-grid", "comma list of candidate beta-Maxent values"},
      {"model.kappa", "kappa", "asymmetric logistic kappa"},
      {"model.weight", "weight", "background weight W of the infinitely weighted logistic fit"},
      {"model.mu", "mu", "population prevalence for case-control weights"},
      {"model.ybar", "ybar", "sample prevalence for case-control weights"},
      {"model.cdf", "cdf", "U-divergence cdf family: step, exp or unicap"},
      {"model.ucdf-tau", "ucdf-tau", "U-divergence cdf location"},
      {"model.access-intercept", "access-intercept", "give the accessibility logit an intercept"},
      {"model.fisher-replicates", "fisher-replicates", "Monte-Carlo replicates for Fisher blocks"},
      {"model.select", "select", "best-subset selection over habitat columns"},
      {"model.max-exhaustive", "max-exhaustive", "largest p searched exhaustively"},
      {"truth.beta", "truth-beta", "habitat truth: intercept, slopes"},
      {"truth.alpha", "truth-alpha", "accessibility truth"},
      {"truth.tau", "truth-tau", "detection truth: intercept, slopes"},
      {"truth.omega", "truth-omega", "half-normal log-scale truth: intercept, slopes"},
      {"sim.cells", "cells", "number of grid cells"},
      {"sim.area", "sim-area", "study-area size of the simulated grid"},
      {"sim.regions", "survey-regions", "number of survey regions"},
      {"sim.cells-per-region", "cells-per-region", "cells per survey region"},
      {"sim.visits", "visits", "visits per region"},
      {"sim.ds-cells", "ds-cells", "cells of the distance-sampling area"},
      {"sim.contamination", "contamination", "fraction of planted low-intensity presences"},
      {"sim.replicate", "replicate", "replicate index used by simulate"},
      {"study.replicates", "replicates", "Monte-Carlo replicates"},
      {"study.estimators", "estimators", "comma list of estimators to compare"},
  };
  return t;
}

inline const KeySpec* find_key(const std::string& key) {
  for (const auto& k : key_table()) {
    if (key == k.key) return &k;
  }
  return nullptr;
}

inline const std::vector<std::string>& method_ids() {
  static const std::vector<std::string> ids{"ppp",  "maxent", "beta-maxent", "iwlr",       "asym-logit",
                                            "cc-logit", "ql-ppp", "beta",   "gamma",      "ucdf",
                                            "integrated", "integrated-robust", "ds"};
  return ids;
}

// Effective settings: INI values overlaid by command-line flags.
class RunConfig {
 public:
  std::string command;

  void set(const std::string& key, std::string value) {
    if (!find_key(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = csv::trim(value);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0 && !values_.at(key).empty(); }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string str(const std::string& key, const std::string& def = "") const {
    return has(key) ? values_.at(key) : def;
  }

  std::string require(const std::string& key) const {
    if (!has(key)) throw ConfigError(command + ": missing " + describe(key));
    return values_.at(key);
  }

  double num(const std::string& key, std::optional<double> def = std::nullopt) const {
    if (!has(key)) {
      if (def) return *def;
      throw ConfigError(command + ": missing " + describe(key));
    }
    return parse_double(key, values_.at(key));
  }

  long long integer(const std::string& key, std::optional<long long> def = std::nullopt) const {
    const double v = num(key, def ? std::optional<double>(static_cast<double>(*def)) : std::nullopt);
    if (v != std::floor(v) || std::abs(v) > 9e15) throw ConfigError(describe(key) + " must be an integer");
    return static_cast<long long>(v);
  }

  std::uint64_t seed() const {
    if (!has("run.seed")) return 1;
    const std::string& s = values_.at("run.seed");
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("run.seed must be an unsigned integer");
    return v;
  }

  int workers() const {
    const long long w = integer("run.workers", 1);
    if (w < 1) throw ConfigError("run.workers must be at least 1");
    return static_cast<int>(w);
  }

  bool flag(const std::string& key, bool def) const {
    if (!has(key)) return def;
    std::string s = values_.at(key);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError(describe(key) + ": expected true or false, got '" + values_.at(key) + "'");
  }

  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    if (!has(key)) return out;
    for (auto& f : csv::split_line(values_.at(key))) {
      if (!f.empty()) out.push_back(f);
    }
    return out;
  }

  std::optional<std::vector<double>> numbers(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    std::vector<double> out;
    for (const auto& f : list(key)) out.push_back(parse_double(key, f));
    if (out.empty()) throw ConfigError(describe(key) + " is empty");
    return out;
  }

  Vector vector(const std::string& key) const {
    const auto v = numbers(key);
    if (!v) throw ConfigError(command + ": missing " + describe(key));
    return Vector::Map(v->data(), static_cast<Index>(v->size()));
  }

  // Path that must exist.
  std::string input_path(const std::string& key) const {
    const std::string p = require(key);
    if (!std::filesystem::exists(p)) throw ConfigError(describe(key) + ": no such file '" + p + "'");
    return p;
  }

  static std::string describe(const std::string& key) {
    const auto* k = find_key(key);
    return k ? key + " (--" + k->flag + ")" : key;
  }

 private:
  static double parse_double(const std::string& key, const std::string& s) {
    std::string t = csv::trim(s);
    // fractions such as -1/3 are accepted for grids given in closed form
    const auto slash = t.find('/');
    if (slash != std::string::npos && slash > 0) {
      return parse_double(key, t.substr(0, slash)) / parse_double(key, t.substr(slash + 1));
    }
    double v = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v)) {
      throw ConfigError(describe(key) + ": not a number: '" + s + "'");
    }
    return v;
  }

  std::map<std::string, std::string> values_;
};

// Reads an INI file. Every key must sit under a known section.
inline void load_ini(const std::string& path, RunConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    std::ostringstream os;
    os << path << ":" << e.line() << ": " << e.message();
    throw ConfigError(os.str());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      if (!body.data().empty()) throw ConfigError(path + ": key '" + section + "' is outside any [section]");
      continue;
    }
    for (const auto& [name, leaf] : body) {
      const std::string key = section + "." + name;
      if (!find_key(key)) throw ConfigError(path + ": unknown key '" + name + "' in [" + section + "]");
      cfg.set(key, leaf.get_value<std::string>());
    }
  }
}

}  // namespace sdm::cli
