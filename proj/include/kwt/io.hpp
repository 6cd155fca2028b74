#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "diagnostics.hpp"
#include "grid_measure.hpp"
#include "profile_solver.hpp"

namespace kwt {

using json = nlohmann::json;

inline constexpr const char* kwt_version = "1.0.0";
inline constexpr const char* format_version = "1";

// Directory of outputs; every file written through it is listed in the manifest.
class output_dir {
 public:
  explicit output_dir(std::string dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec || !std::filesystem::is_directory(dir_)) throw io_error("cannot create output directory " + dir_);
  }
  const std::string& dir() const { return dir_; }
  std::string path(const std::string& name) const { return (std::filesystem::path(dir_) / name).string(); }

  template <class F>
  void write(const std::string& name, F&& body) {
    const std::string p = path(name);
    std::ofstream f(p, std::ios::binary);
    if (!f) throw io_error("cannot open " + p + " for writing");
    body(f);
    f.flush();
    if (!f) throw io_error("write failed: " + p);
    files_.push_back(name);
  }
  void write_json(const std::string& name, const json& j) {
    write(name, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
  }
  void note(const std::string& name) { files_.push_back(name); }
  const std::vector<std::string>& files() const { return files_; }

 private:
  std::string dir_;
  std::vector<std::string> files_;
};

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// JSON cannot carry NaN or infinities; they become null.
inline json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json to_json(const fit_result& f) {
  return {{"rate", num(f.rate)}, {"stderr", num(f.stderr_)}, {"r_squared", num(f.r_squared)},
          {"window", {num(f.lo), num(f.hi)}}, {"points", f.n}};
}

inline json to_json(const solver_path& p) {
  json hist = json::array();
  for (const auto& r : p.history)
    hist.push_back({{"iter", r.iter}, {"max_residual", num(r.max_residual)}, {"max_update", num(r.max_update)},
                    {"dtau", num(r.dtau)}});
  json j = {{"method", p.method}, {"converged", p.converged}, {"iterations", p.history.size()}, {"history", hist}};
  if (!p.eps_schedule.empty()) {
    j["eps_schedule"] = p.eps_schedule;
    j["a_schedule"] = p.a_schedule;
    j["stage_residual"] = p.stage_residual;
    j["stage_steps"] = p.stage_steps;
  }
  return j;
}

inline json profile_sidecar(const profile_solution& s) {
  return {{"format_version", format_version},
          {"rho", s.rho},
          {"normalization", to_string(s.norm)},
          {"residual_weak", num(s.residual_weak)},
          {"residual_strong", num(s.residual_strong)},
          {"solver", to_json(s.path)},
          {"clamp_count", s.path.clamp_count},
          {"clamp_warning", s.path.clamp_warning}};
}

inline std::string sidecar_path(const std::string& csv) {
  std::filesystem::path p(csv);
  p.replace_extension(".json");
  return p.string();
}

inline void write_profile(output_dir& out, const std::string& name, const profile_solution& s) {
  out.write(name, [&](std::ostream& os) { write_measure_csv(os, s.phi); });
  out.write_json(std::filesystem::path(name).replace_extension(".json").string(), profile_sidecar(s));
}

// Reads a profile CSV and its JSON sidecar (same stem).
inline profile_solution read_profile(const std::string& csv) {
  profile_solution s;
  s.phi = read_measure_csv(csv);
  const std::string jp = sidecar_path(csv);
  std::ifstream f(jp);
  if (!f) throw io_error("cannot open profile sidecar " + jp);
  json j;
  try {
    j = json::parse(f);
    s.rho = j.at("rho").get<double>();
    const std::string n = j.at("normalization").get<std::string>();
    if (n == "rho_norm_one") s.norm = normalization::rho_norm_one;
    else if (n == "mass_one") s.norm = normalization::mass_one;
    else throw io_error(jp + ": unknown normalization '" + n + "'");
    s.path.method = j.at("solver").at("method").get<std::string>();
    auto getnum = [&](const char* k) {
      const auto& v = j.at(k);
      return v.is_null() ? std::nan("") : v.get<double>();
    };
    s.residual_weak = getnum("residual_weak");
    s.residual_strong = getnum("residual_strong");
  } catch (const json::exception& e) {
    throw io_error(jp + ": " + e.what());
  }
  try {
    check_rho(s.rho);
  } catch (const parameter_error& e) {
    throw io_error(jp + ": " + e.what());
  }
  if (s.phi.atom != 0.0) throw io_error(csv + ": a profile must not carry an atom");
  return s;
}

inline json to_json(const diagnostics_report& r) {
  json j;
  j["rho"] = r.rho;
  j["tail_exponent_fit"] = to_json(r.tail_fit_result);
  j["tail_model"] = r.rho >= 2.0 ? "exponential" : "power";
  j["tail_constant_ratio"] = r.tail_constant_ratio ? num(*r.tail_constant_ratio) : json(nullptr);
  j["flux_identity_max_residual"] = num(r.flux_identity_max_residual);
  json ft = json::array();
  for (std::size_t k = 0; k < r.flux_table.size(); ++k)
    ft.push_back({{"r", num(r.flux_table[k].r)},
                  {"calI", num(r.flux_table[k].cal_I)},
                  {"residual", num(r.flux_table[k].residual)},
                  {"calI_grid_only", num(r.flux_table_grid[k].cal_I)},
                  {"residual_grid_only", num(r.flux_table_grid[k].residual)}});
  j["flux_identity"] = ft;
  if (r.norm_flux)
    j["norm_via_flux"] = {{"via_flux", num(r.norm_flux->via_flux)},
                          {"direct", num(r.norm_flux->direct)},
                          {"mismatch", num(r.norm_flux->mismatch)},
                          {"mismatch_grid_only", num(r.norm_flux_grid->mismatch)}};
  if (r.limits)
    j["norm_limits"] = {{"R", num(r.limits->R)},
                        {"upper_limit_est", num(r.limits->upper)},
                        {"lower_limit_est", num(r.limits->lower)},
                        {"upper_limit_est_grid_only", num(r.limits_grid->upper)},
                        {"lower_limit_est_grid_only", num(r.limits_grid->lower)},
                        {"rho_norm_value", num(r.rho_norm_value->tail_closed)},
                        {"rho_norm_value_grid_only", num(r.rho_norm_value->grid_only)}};
  if (!r.moment_table.empty()) {
    json mt = json::array();
    for (const auto& m : r.moment_table)
      mt.push_back({{"gamma", m.gamma}, {"m_gamma", num(m.m)}, {"bound", num(m.bound)}, {"ok", m.ok}});
    j["moment_table"] = mt;
  }
  if (r.relations) {
    const auto& q = *r.relations;
    json bin = json::array();
    for (const auto& b : q.binomial) bin.push_back({{"n", b.n}, {"m_n", num(b.m)}, {"bound", num(b.bound)}, {"ok", b.ok}});
    j["moment_relations"] = {{"m0", num(q.m0)},
                             {"m1", num(q.m1)},
                             {"m2", num(q.m2)},
                             {"quadratic_ok", q.quadratic_ok},
                             {"holder", {{"gamma", q.holder_gamma}, {"n", q.holder_n}, {"lhs", num(q.holder_lhs)},
                                         {"rhs", num(q.holder_rhs)}, {"ok", q.holder_ok}}},
                             {"binomial", bin}};
  }
  j["exp_upper_rate"] = r.exp_upper_rate ? num(*r.exp_upper_rate) : json(nullptr);
  j["exp_lower_rate"] = r.exp_lower_rate ? num(*r.exp_lower_rate) : json(nullptr);
  if (r.intervals) {
    j["interval_fit"] = to_json(r.intervals->fit);
    j["interval_min"] = num(r.intervals->min_I);
  }
  j["sqrtR_constant"] = {{"tail_closed", num(r.sqrtR_constant.tail_closed)},
                         {"grid_only", num(r.sqrtR_constant.grid_only)}};
  return j;
}

// Companion CSVs of a report; names get `prefix` prepended.
inline void write_report_csvs(output_dir& out, const std::string& prefix, const diagnostics_report& r) {
  out.write(prefix + "flux.csv", [&](std::ostream& os) { write_flux_csv(os, r.flux_table); });
  if (r.intervals) out.write(prefix + "intervals.csv", [&](std::ostream& os) { write_interval_csv(os, r.intervals->rows); });
  if (!r.moment_table.empty())
    out.write(prefix + "moments.csv", [&](std::ostream& os) { write_moment_csv(os, r.moment_table); });
}

inline void write_plot_csvs(output_dir& out, const std::string& prefix, double rho, const grid_measure& phi) {
  out.write(prefix + "plot_phi.csv", [&](std::ostream& os) {
    os << "r,phi\n";
    for (std::size_t i = 0; i < phi.size(); ++i) os << fmt17(phi.x(i)) << ',' << fmt17(phi.density[i]) << '\n';
  });
  out.write(prefix + "plot_compensated.csv", [&](std::ostream& os) {
    os << "r,phi*r^rho\n";
    for (std::size_t i = 0; i < phi.size(); ++i)
      os << fmt17(phi.x(i)) << ',' << fmt17(phi.density[i] * std::pow(phi.x(i), rho)) << '\n';
  });
}

inline std::string compiler_id() {
#if defined(__clang__)
  return std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  return std::string("gcc ") + __VERSION__;
#else
  return "unknown";
#endif
}

}  // namespace kwt
