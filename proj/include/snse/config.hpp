/// @file config.hpp
/// @brief Experiment configuration: INI-style key=value files with sections
///        [mesh], [scheme], [noise], [experiment]. Unknown keys or sections
///        are hard errors; values are validated on parse.
#pragma once

#include <cctype>
#include <cstdint>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "snse/noise.hpp"
#include "snse/stepper.hpp"

namespace snse {

struct MeshConfig {
  int n = 4;  // subdivisions per side of the unit square
};

struct NoiseConfig {
  int modes = 16;
  double decay = 2.0;
  double scale = 1.0;
  std::string type = "multiplicative";  // or "additive"

  NoiseType noise_type() const {
    if (type == "multiplicative") return NoiseType::multiplicative;
    if (type == "additive") return NoiseType::additive;
    throw std::invalid_argument("noise.type must be 'multiplicative' or 'additive'");
  }
};

struct ExperimentConfig {
  int levels = 3;
  int samples = 64;
  std::uint64_t seed = 12345;
  double tau_scale = 4.0;      // tau_l = tau_scale * T * h_l^2 ... see make_plan
  int ref_time_factor = 4;     // reference steps = factor * finest level steps
  double alpha = 0.45;         // temporal rate in the exceedance denominator
  double beta = 0.9;           // spatial rate in the exceedance denominator
  std::vector<double> xi;      // empty -> auto grid
  double stop_quantile = 0.99;
};

struct Config {
  MeshConfig mesh;
  SchemeConfig scheme;
  NoiseConfig noise;
  ExperimentConfig experiment;

  void validate() const {
    if (mesh.n < 1) throw std::invalid_argument("mesh.n must be >= 1");
    scheme.validate();
    if (noise.modes < 1) throw std::invalid_argument("noise.modes must be >= 1");
    if (noise.scale < 0.0) throw std::invalid_argument("noise.scale must be >= 0");
    noise.noise_type();
    if (experiment.levels < 1) throw std::invalid_argument("experiment.levels must be >= 1");
    if (experiment.samples < 1) throw std::invalid_argument("experiment.samples must be >= 1");
    if (experiment.tau_scale <= 0.0)
      throw std::invalid_argument("experiment.tau_scale must be positive");
    if (experiment.ref_time_factor < 1)
      throw std::invalid_argument("experiment.ref_time_factor must be >= 1");
    if (experiment.alpha <= 0.0 || experiment.beta <= 0.0)
      throw std::invalid_argument("experiment.alpha and experiment.beta must be positive");
    if (experiment.stop_quantile <= 0.0 || experiment.stop_quantile > 1.0)
      throw std::invalid_argument("experiment.stop_quantile must lie in (0,1]");
    for (double x : experiment.xi)
      if (x <= 0.0) throw std::invalid_argument("experiment.xi entries must be positive");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad numeric value for " + key + ": '" + v + "'");
  }
  if (pos != v.size())
    throw std::invalid_argument("config: trailing characters in value for " + key);
  return d;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long i;
  try {
    i = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer value for " + key + ": '" + v + "'");
  }
  if (pos != v.size())
    throw std::invalid_argument("config: trailing characters in value for " + key);
  return i;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long i;
  try {
    i = std::stoull(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer value for " + key + ": '" + v + "'");
  }
  if (pos != v.size())
    throw std::invalid_argument("config: trailing characters in value for " + key);
  return i;
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_double(key, item));
  }
  return out;
}

}  // namespace detail

/// Parse a config stream. Lines are `key = value`, `#`/`;` start comments,
/// sections are `[name]`. Every key must belong to a known section; unknown
/// keys raise std::invalid_argument with the line number.
inline Config parse_config(std::istream& in) {
  Config cfg;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section != "mesh" && section != "scheme" && section != "noise" &&
          section != "experiment")
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": unknown section [" + section + "]");
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string val = detail::trim(line.substr(eq + 1));
    std::string qual = section + "." + key;

    if (qual == "mesh.n") cfg.mesh.n = static_cast<int>(detail::parse_int(qual, val));
    else if (qual == "scheme.mu") cfg.scheme.mu = detail::parse_double(qual, val);
    else if (qual == "scheme.T") cfg.scheme.T = detail::parse_double(qual, val);
    else if (qual == "scheme.steps")
      cfg.scheme.steps = static_cast<int>(detail::parse_int(qual, val));
    else if (qual == "scheme.theta") cfg.scheme.theta = detail::parse_double(qual, val);
    else if (qual == "scheme.solver_tolerance")
      cfg.scheme.solver_tolerance = detail::parse_double(qual, val);
    else if (qual == "noise.modes")
      cfg.noise.modes = static_cast<int>(detail::parse_int(qual, val));
    else if (qual == "noise.decay") cfg.noise.decay = detail::parse_double(qual, val);
    else if (qual == "noise.scale") cfg.noise.scale = detail::parse_double(qual, val);
    else if (qual == "noise.type") cfg.noise.type = val;
    else if (qual == "experiment.levels")
      cfg.experiment.levels = static_cast<int>(detail::parse_int(qual, val));
    else if (qual == "experiment.samples")
      cfg.experiment.samples = static_cast<int>(detail::parse_int(qual, val));
    else if (qual == "experiment.seed") cfg.experiment.seed = detail::parse_u64(qual, val);
    else if (qual == "experiment.tau_scale")
      cfg.experiment.tau_scale = detail::parse_double(qual, val);
    else if (qual == "experiment.ref_time_factor")
      cfg.experiment.ref_time_factor = static_cast<int>(detail::parse_int(qual, val));
    else if (qual == "experiment.alpha")
      cfg.experiment.alpha = detail::parse_double(qual, val);
    else if (qual == "experiment.beta") cfg.experiment.beta = detail::parse_double(qual, val);
    else if (qual == "experiment.xi") cfg.experiment.xi = detail::parse_list(qual, val);
    else if (qual == "experiment.stop_quantile")
      cfg.experiment.stop_quantile = detail::parse_double(qual, val);
    else
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": unknown key '" + qual + "'");
  }
  cfg.validate();
  return cfg;
}

inline Config parse_config_string(const std::string& text) {
  std::istringstream ss(text);
  return parse_config(ss);
}

/// Serialize with full precision; parse(serialize(c)) reproduces c exactly.
inline std::string serialize_config(const Config& cfg) {
  std::ostringstream out;
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  out << "[mesh]\n"
      << "n = " << cfg.mesh.n << "\n\n"
      << "[scheme]\n"
      << "mu = " << num(cfg.scheme.mu) << "\n"
      << "T = " << num(cfg.scheme.T) << "\n"
      << "steps = " << cfg.scheme.steps << "\n"
      << "theta = " << num(cfg.scheme.theta) << "\n"
      << "solver_tolerance = " << num(cfg.scheme.solver_tolerance) << "\n\n"
      << "[noise]\n"
      << "modes = " << cfg.noise.modes << "\n"
      << "decay = " << num(cfg.noise.decay) << "\n"
      << "scale = " << num(cfg.noise.scale) << "\n"
      << "type = " << cfg.noise.type << "\n\n"
      << "[experiment]\n"
      << "levels = " << cfg.experiment.levels << "\n"
      << "samples = " << cfg.experiment.samples << "\n"
      << "seed = " << cfg.experiment.seed << "\n"
      << "tau_scale = " << num(cfg.experiment.tau_scale) << "\n"
      << "ref_time_factor = " << cfg.experiment.ref_time_factor << "\n"
      << "alpha = " << num(cfg.experiment.alpha) << "\n"
      << "beta = " << num(cfg.experiment.beta) << "\n";
  if (!cfg.experiment.xi.empty()) {
    out << "xi = ";
    for (std::size_t i = 0; i < cfg.experiment.xi.size(); ++i)
      out << (i ? "," : "") << num(cfg.experiment.xi[i]);
    out << "\n";
  }
  out << "stop_quantile = " << num(cfg.experiment.stop_quantile) << "\n";
  return out.str();
}

}  // namespace snse
