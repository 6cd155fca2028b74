#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "grid_measure.hpp"

namespace kwt {

// Flat `section.key = value` configuration. Every key must be registered; an empty default
// means "derived at run time".
class run_config {
 public:
  static const std::map<std::string, std::string>& defaults() {
    static const std::map<std::string, std::string> d = {
        {"run.format_version", "1"},
        {"run.seed", "0"},
        {"grid.x_min", ""},
        {"grid.x_max", ""},
        {"grid.n", ""},
        {"stable.alphas", "0.5,1,1.5"},
        {"stable.samples", "4096"},
        {"stable.core_z_max", "100"},
        {"evolve.rho", "1.5"},
        {"evolve.epsilon", "0.5"},
        {"evolve.a", "0.1"},
        {"evolve.steps", "100"},
        {"evolve.dt", "0"},
        {"evolve.picard_tol", "1e-12"},
        {"evolve.picard_max_iter", "60"},
        {"evolve.picard_mesh", "4"},
        {"evolve.window_cap", "0"},
        {"evolve.R0", "1"},
        {"evolve.norm_tol", "1e-8"},
        {"evolve.margin_tol", "1e-6"},
        {"profile.rho", "1.5"},
        {"profile.method", "direct"},
        {"profile.damping", "0.3"},
        {"profile.max_iter", "300"},
        {"profile.tol", "1e-9"},
        {"profile.res_tol", "1e-8"},
        {"profile.path", ""},
        {"relax.epsilons", "0.5,0.2,0.1,0.05,0.02"},
        {"relax.stage_tol", "1e-3"},
        {"relax.max_steps", "4000"},
        {"relax.x_min", "1e-4"},
        {"relax.n", "512"},
        {"relax.compare_lo", ""},
        {"relax.compare_hi", ""},
        {"family.enabled", "false"},
        {"family.t0", "1"},
        {"family.t_ends", "0.5,1"},
        {"family.points", "33"},
        {"diagnostics.tail_lo", ""},
        {"diagnostics.tail_hi", ""},
        {"diagnostics.flux_points", "10"},
        {"diagnostics.flux_margin_decades", "2"},
        {"diagnostics.norm_R", "0"},
        {"bands.strong", "1e-3"},
        {"bands.weak", "1e-3"},
        {"bands.flux", "1e-2"},
        {"bands.norm_flux", "0.02"},
        {"bands.limits", "0.1"},
        {"bands.tail_exponent", "0.1"},
        {"bands.tail_ratio", "0.15"},
        {"bands.exp_fit_r2", "0.99"},
        {"bands.interval_r2", "0.98"},
        {"bands.rate_agreement", "0.15"},
        {"bands.family", "1e-3"},
        {"bands.relax", "0.05"},
    };
    return d;
  }

  run_config() : values_(defaults()) {}

  static run_config parse(std::istream& is, const std::string& what) {
    run_config c;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      const std::string where = what + ":" + std::to_string(lineno);
      if (eq == std::string::npos) throw parameter_error(where + ": expected 'section.key = value'");
      const std::string key = trim(t.substr(0, eq)), val = trim(t.substr(eq + 1));
      if (key.find('.') == std::string::npos) throw parameter_error(where + ": key '" + key + "' lacks a section");
      if (!defaults().count(key)) throw parameter_error(where + ": unknown key '" + key + "'");
      if (c.explicit_.count(key)) throw parameter_error(where + ": duplicate key '" + key + "'");
      c.values_[key] = val;
      c.explicit_[key] = true;
    }
    return c;
  }

  static run_config load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open config " + path);
    return parse(f, path);
  }

  bool is_set(const std::string& key) const { return !raw(key).empty(); }
  bool is_explicit(const std::string& key) const { return explicit_.count(key) > 0; }

  void set(const std::string& key, const std::string& value) {
    raw(key);
    values_[key] = value;
  }

  std::string str(const std::string& key) const { return raw(key); }

  double num(const std::string& key) const {
    const std::string& s = raw(key);
    if (s.empty()) throw parameter_error("config: " + key + " has no value");
    try {
      return parse_double(s, key);
    } catch (const io_error&) {
      throw parameter_error("config: " + key + " = '" + s + "' is not a number");
    }
  }

  long integer(const std::string& key) const {
    const double v = num(key);
    if (v != std::floor(v) || std::abs(v) > 1e15) throw parameter_error("config: " + key + " must be an integer");
    return static_cast<long>(v);
  }

  bool flag(const std::string& key) const {
    const std::string& s = raw(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw parameter_error("config: " + key + " must be true or false");
  }

  std::vector<double> list(const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(raw(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) throw parameter_error("config: " + key + " has an empty list entry");
      try {
        out.push_back(parse_double(item, key));
      } catch (const io_error&) {
        throw parameter_error("config: " + key + " entry '" + item + "' is not a number");
      }
    }
    return out;
  }

  nlohmann::json resolved() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
  }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> explicit_;

  const std::string& raw(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw parameter_error("config: unknown key '" + key + "'");
    return it->second;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
  }
};

// Grid from the config, falling back to `fallback` for unset keys.
inline grid_spec config_grid(const run_config& c, grid_spec fallback) {
  if (c.is_set("grid.x_min")) fallback.x_min = c.num("grid.x_min");
  if (c.is_set("grid.x_max")) fallback.x_max = c.num("grid.x_max");
  if (c.is_set("grid.n")) {
    const long n = c.integer("grid.n");
    if (n < 16) throw parameter_error("grid.n must be >= 16");
    fallback.n = static_cast<std::size_t>(n);
  }
  fallback.validate();
  return fallback;
}

}  // namespace kwt
