#pragma once

#include <Eigen/Core>
#include <boost/version.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "diagnostics.hpp"
#include "io.hpp"
#include "profile_solver.hpp"
#include "regularized_evolution.hpp"
#include "relax.hpp"
#include "selfsimilar_solution.hpp"
#include "stable_law.hpp"

namespace kwt {

enum exit_code : int { exit_ok = 0, exit_parameter = 1, exit_failure = 2, exit_io = 3 };

struct check {
  std::string name;
  double value = 0.0;
  std::string relation;  // how value is compared with band
  double band = 0.0;
  bool pass = false;
};

class check_list {
 public:
  // value < band
  void below(const std::string& name, double value, double band) { add(name, value, "<", band, value < band); }
  // value <= band
  void at_most(const std::string& name, double value, double band) { add(name, value, "<=", band, value <= band); }
  // value >= band
  void at_least(const std::string& name, double value, double band) { add(name, value, ">=", band, value >= band); }
  void truth(const std::string& name, bool ok) { add(name, ok ? 1.0 : 0.0, "==", 1.0, ok); }

  bool all_pass() const {
    for (const auto& c : items_)
      if (!c.pass) return false;
    return true;
  }
  const std::vector<check>& items() const { return items_; }
  json to_json() const {
    json a = json::array();
    for (const auto& c : items_)
      a.push_back({{"name", c.name}, {"value", num(c.value)}, {"relation", c.relation}, {"band", num(c.band)},
                   {"pass", c.pass}});
    return a;
  }

 private:
  std::vector<check> items_;
  void add(const std::string& n, double v, const char* rel, double b, bool ok) {
    items_.push_back({n, v, rel, b, ok && std::isfinite(v)});
  }
};

struct command_outcome {
  check_list checks;
  json summary = json::object();
  bool enforce = true;  // failing checks turn into exit 2
};

namespace detail {

inline double positive(const run_config& c, const std::string& key) {
  const double v = c.num(key);
  if (!(v > 0.0) || !std::isfinite(v)) throw parameter_error(key + " must be positive");
  return v;
}

inline double nonnegative(const run_config& c, const std::string& key) {
  const double v = c.num(key);
  if (!(v >= 0.0) || !std::isfinite(v)) throw parameter_error(key + " must be nonnegative");
  return v;
}

inline long at_least(const run_config& c, const std::string& key, long lo) {
  const long v = c.integer(key);
  if (v < lo) throw parameter_error(key + " must be >= " + std::to_string(lo));
  return v;
}

inline std::string alpha_tag(double a) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", a);
  return buf;
}

inline diagnostics_options diag_options(const run_config& c) {
  diagnostics_options o;
  if (c.is_set("diagnostics.tail_lo") != c.is_set("diagnostics.tail_hi"))
    throw parameter_error("diagnostics.tail_lo and diagnostics.tail_hi must be given together");
  if (c.is_set("diagnostics.tail_lo")) o.tail_window = std::make_pair(positive(c, "diagnostics.tail_lo"), positive(c, "diagnostics.tail_hi"));
  o.flux_points = static_cast<int>(at_least(c, "diagnostics.flux_points", 1));
  o.flux_lo_decades = nonnegative(c, "diagnostics.flux_margin_decades");
  o.norm_R = nonnegative(c, "diagnostics.norm_R");
  return o;
}

struct bands {
  double strong, weak, flux, norm_flux, limits, tail_exponent, tail_ratio, exp_fit_r2, interval_r2, rate_agreement,
      family, relax;
  explicit bands(const run_config& c)
      : strong(nonnegative(c, "bands.strong")),
        weak(nonnegative(c, "bands.weak")),
        flux(nonnegative(c, "bands.flux")),
        norm_flux(nonnegative(c, "bands.norm_flux")),
        limits(nonnegative(c, "bands.limits")),
        tail_exponent(nonnegative(c, "bands.tail_exponent")),
        tail_ratio(nonnegative(c, "bands.tail_ratio")),
        exp_fit_r2(nonnegative(c, "bands.exp_fit_r2")),
        interval_r2(nonnegative(c, "bands.interval_r2")),
        rate_agreement(nonnegative(c, "bands.rate_agreement")),
        family(nonnegative(c, "bands.family")),
        relax(nonnegative(c, "bands.relax")) {}
};

inline void diagnostic_checks(check_list& ck, const diagnostics_report& r, const bands& b) {
  if (r.rho < 2.0) {
    ck.at_most("tail_exponent_rel_error", std::abs(r.tail_fit_result.rate - r.rho) / r.rho, b.tail_exponent);
    ck.at_most("tail_constant_ratio_deviation", std::abs(*r.tail_constant_ratio - 1.0), b.tail_ratio);
    ck.below("flux_identity_max_residual", r.flux_identity_max_residual, b.flux);
    ck.below("norm_via_flux_mismatch", r.norm_flux->mismatch, b.norm_flux);
    const double n = r.rho_norm_value->tail_closed;
    ck.at_most("limit_upper_rel_error", std::abs(r.limits->upper - n) / n, b.limits);
    ck.at_most("limit_lower_rel_error", std::abs(r.limits->lower - n) / n, b.limits);
  } else {
    ck.at_least("exp_tail_fit_r_squared", r.tail_fit_result.r_squared, b.exp_fit_r2);
    bool all = !r.moment_table.empty();
    for (const auto& m : r.moment_table) all = all && m.ok;
    ck.truth("moment_bounds_all_gamma", all);
    ck.truth("moment_quadratic_m2_le_2m0m1", r.relations && r.relations->quadratic_ok);
    ck.at_least("interval_min_positive", r.intervals ? r.intervals->min_I : 0.0, std::numeric_limits<double>::min());
    ck.at_least("interval_fit_r_squared", r.intervals ? r.intervals->fit.r_squared : 0.0, b.interval_r2);
    ck.at_most("interval_rate_vs_pointwise", std::abs(*r.exp_lower_rate - *r.exp_upper_rate) / *r.exp_upper_rate,
               b.rate_agreement);
  }
}

inline void residual_checks(check_list& ck, const profile_solution& s, const bands& b) {
  ck.below("strong_residual", s.residual_strong, b.strong);
  ck.below("weak_residual", s.residual_weak, b.weak);
}

inline void write_diagnostics(output_dir& out, const diagnostics_report& r, const grid_measure& phi) {
  out.write_json("diagnostics.json", to_json(r));
  write_report_csvs(out, "", r);
  write_plot_csvs(out, "", r.rho, phi);
}

inline std::string profile_argument(const run_config& c, const std::string& positional) {
  std::string p = positional.empty() ? c.str("profile.path") : positional;
  if (p.empty()) throw parameter_error("no profile given: pass a path or set profile.path");
  return p;
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline command_outcome cmd_stable(const run_config& c, output_dir& out) {
  const auto alphas = c.list("stable.alphas");
  if (alphas.empty()) throw parameter_error("stable.alphas is empty; give values in the open interval (0,2)");
  for (double a : alphas) {
    try {
      check_alpha(a);
    } catch (const parameter_error& e) {
      throw parameter_error("stable.alphas entry " + fmt17(a) + ": " + e.what());
    }
  }
  const long samples = detail::at_least(c, "stable.samples", 128);
  const double zmax = detail::positive(c, "stable.core_z_max");
  if (!(zmax > 1.0)) throw parameter_error("stable.core_z_max must exceed 1");
  command_outcome res;
  json tables = json::array();
  for (double a : alphas) {
    const auto t = build_stable_table(a, static_cast<std::size_t>(samples), zmax);
    const auto inv = check_stable_table(t);
    const std::string name = "stable_alpha_" + detail::alpha_tag(a) + ".csv";
    write_stable_csv(out.path(name), t);
    out.note(name);
    const std::string tag = "alpha=" + detail::alpha_tag(a) + ": ";
    res.checks.at_most(tag + "normalization_error", std::abs(inv.normalization - 1.0), 1e-5);
    res.checks.truth(tag + "positive", inv.positive);
    res.checks.truth(tag + "strictly_decreasing", inv.strictly_decreasing);
    res.checks.at_most(tag + "tail_product_50_deviation", std::abs(inv.tail_product_50 - 1.0), 0.05);
    if (a == 1.0) res.checks.at_most(tag + "cauchy_max_error", inv.cauchy_max_err, 1e-8);
    tables.push_back({{"alpha", a},
                      {"c_alpha", num(t.c)},
                      {"tail_switch", num(t.tail_switch)},
                      {"normalization", num(inv.normalization)},
                      {"tail_product_50", num(inv.tail_product_50)},
                      {"positive", inv.positive},
                      {"strictly_decreasing", inv.strictly_decreasing},
                      {"cauchy_max_err", inv.cauchy_max_err >= 0.0 ? num(inv.cauchy_max_err) : json(nullptr)},
                      {"file", name}});
  }
  out.write_json("stable_report.json", {{"tables", tables}, {"checks", res.checks.to_json()}});
  res.summary = {{"tables", alphas.size()}};
  return res;
}

inline command_outcome cmd_evolve(const run_config& c, output_dir& out) {
  evolution_params p;
  p.rho = c.num("evolve.rho");
  p.epsilon = c.num("evolve.epsilon");
  p.a = c.num("evolve.a");
  p.grid = config_grid(c, evolution_params{}.grid);
  p.dt = c.num("evolve.dt");
  p.picard_tol = c.num("evolve.picard_tol");
  p.picard_max_iter = static_cast<int>(c.integer("evolve.picard_max_iter"));
  p.picard_mesh = static_cast<int>(c.integer("evolve.picard_mesh"));
  p.window_cap = c.num("evolve.window_cap");
  p.R0 = c.num("evolve.R0");
  p.validate();
  const long steps = detail::at_least(c, "evolve.steps", 1);
  const double norm_tol = detail::nonnegative(c, "evolve.norm_tol");
  const double margin_tol = detail::nonnegative(c, "evolve.margin_tol");

  evolution ev(p);
  auto st = ev.start(psi_seed(p.rho, p.grid));
  double worst = -std::numeric_limits<double>::infinity();
  for (long k = 0; k < steps; ++k) {
    ev.step(st);
    const auto& h = st.rho_norm_history;
    worst = std::max(worst, (h.back().second - h[h.size() - 2].second) / h[h.size() - 2].second);
  }
  double min_margin = std::numeric_limits<double>::infinity();
  for (const auto& [t, m] : st.lower_bound_margin_history) min_margin = std::min(min_margin, m);
  out.write("trajectory.csv", [&](std::ostream& os) { write_trajectory_csv(os, st); });
  out.write("psi_final.csv", [&](std::ostream& os) { write_measure_csv(os, st.psi); });
  command_outcome res;
  res.checks.at_most("rho_norm_max_relative_increase", worst, norm_tol);
  res.checks.at_least("lower_bound_margin_min", min_margin, -margin_tol);
  json rep = {{"rho", p.rho},
              {"epsilon", p.epsilon},
              {"a", p.a},
              {"grid", {{"x_min", p.grid.x_min}, {"x_max", p.grid.x_max}, {"n", p.grid.n}}},
              {"macro_step", p.step()},
              {"steps", steps},
              {"t_end", st.t},
              {"contraction_horizon", num(contraction_horizon(p.rho, p.epsilon))},
              {"picard_iterations", st.picard_iterations},
              {"max_contraction_factor", num(st.max_contraction_factor)},
              {"rho_norm_initial", st.rho_norm_history.front().second},
              {"rho_norm_final", st.rho_norm_history.back().second},
              {"rho_norm_max_relative_increase", num(worst)},
              {"lower_bound_margin_min", num(min_margin)},
              {"mass_initial", st.mass_history.front().second},
              {"mass_final", st.mass_history.back().second},
              {"checks", res.checks.to_json()}};
  out.write_json("evolve_report.json", rep);
  res.summary = {{"steps", steps}, {"rho_norm_final", st.rho_norm_history.back().second}};
  return res;
}

inline command_outcome cmd_profile(const run_config& c, output_dir& out) {
  const double rho = c.num("profile.rho");
  check_rho(rho);
  const std::string method = c.str("profile.method");
  if (method != "direct" && method != "relax" && method != "both")
    throw parameter_error("profile.method must be direct, relax or both");
  const bool want_direct = method != "relax", want_relax = method != "direct";
  if (want_relax && !(rho < 2.0)) throw parameter_error("profile.method relax needs rho < 2");
  const grid_spec g = config_grid(c, default_profile_grid(rho));
  ptc_options popt;
  popt.damping = c.num("profile.damping");
  popt.max_iter = static_cast<int>(detail::at_least(c, "profile.max_iter", 1));
  popt.tol = detail::positive(c, "profile.tol");
  popt.res_tol = detail::positive(c, "profile.res_tol");
  if (!(popt.damping > 0.0 && popt.damping <= 1.0)) throw parameter_error("profile.damping must lie in (0,1]");
  const detail::bands b(c);
  const auto dopt = detail::diag_options(c);

  std::vector<evolution_params> schedule;
  relax_options ropt;
  if (want_relax) {
    const grid_spec rg{c.num("relax.x_min"), g.x_max, static_cast<std::size_t>(detail::at_least(c, "relax.n", 16))};
    rg.validate();
    schedule = default_relax_schedule(rho, rg, c.list("relax.epsilons"));
    if (schedule.empty()) throw parameter_error("relax.epsilons is empty");
    for (std::size_t k = 0; k < schedule.size(); ++k) {
      schedule[k].validate();
      if (k > 0 && !(schedule[k].epsilon < schedule[k - 1].epsilon))
        throw parameter_error("relax.epsilons must decrease");
    }
    ropt.stage_tol = detail::positive(c, "relax.stage_tol");
    ropt.max_steps = static_cast<int>(detail::at_least(c, "relax.max_steps", 1));
  }
  const bool family = c.flag("family.enabled");
  const double t0 = family ? detail::positive(c, "family.t0") : 1.0;
  const auto t_ends = family ? c.list("family.t_ends") : std::vector<double>{};
  const int fpoints = static_cast<int>(c.integer("family.points"));
  if (family) {
    if (t_ends.empty()) throw parameter_error("family.t_ends is empty");
    for (double t : t_ends)
      if (!(t > 0.0)) throw parameter_error("family.t_ends entries must be positive");
    if (fpoints < 33 || fpoints % 2 == 0) throw parameter_error("family.points must be odd and >= 33");
  }

  command_outcome res;
  std::optional<profile_solution> direct, relaxed;
  if (want_direct) {
    direct = solve_profile(rho, g, popt);
    write_profile(out, "profile.csv", *direct);
    detail::residual_checks(res.checks, *direct, b);
  }
  if (want_relax) {
    relaxed = relax_to_profile(rho, schedule, ropt);
    relaxed->residual_strong = strong_residual(rho, relaxed->phi);
    relaxed->residual_weak = weak_residual(rho, relaxed->phi);
    write_profile(out, want_direct ? "profile_relax.csv" : "profile.csv", *relaxed);
    if (!want_direct) detail::residual_checks(res.checks, *relaxed, b);
  }
  const profile_solution& primary = want_direct ? *direct : *relaxed;
  json summary = {{"rho", rho}, {"method", method}, {"residual_strong", num(primary.residual_strong)},
                  {"residual_weak", num(primary.residual_weak)}};
  if (direct && relaxed) {
    const auto& rg = relaxed->phi.grid;
    const double mid = std::sqrt(rg.x_min * rg.x_max);
    const double lo = c.is_set("relax.compare_lo") ? c.num("relax.compare_lo") : mid / std::sqrt(10.0);
    const double hi = c.is_set("relax.compare_hi") ? c.num("relax.compare_hi") : mid * std::sqrt(10.0);
    const double dev = weighted_sup_difference(relaxed->phi, direct->phi, lo, hi);
    res.checks.at_most("relax_vs_direct_middle_decade", dev, b.relax);
    summary["relax_vs_direct"] = {{"window", {lo, hi}}, {"max_relative_difference", num(dev)}};
  }

  const auto rep = run_diagnostics(rho, primary.phi, dopt);
  detail::write_diagnostics(out, rep, primary.phi);
  detail::diagnostic_checks(res.checks, rep, b);

  if (family) {
    const auto fam = make_family(rho, primary.phi, t0);
    const auto tests = family_battery(primary.phi.grid);
    const auto rows = weak_form_residuals(fam, tests, t_ends, fpoints);
    out.write("family_residuals.csv", [&](std::ostream& os) { write_residual_csv(os, rows); });
    double worst = 0.0;
    for (const auto& r : rows) worst = std::max(worst, r.scale > 0.0 ? r.residual / r.scale : 0.0);
    res.checks.at_most("family_weak_residual_rel", worst, b.family);
    const double m0 = total_mass(evaluate_G(fam, 0.0));
    const double e0 = moment(evaluate_G(fam, 0.0), 1.0);
    double mass_dev = 0.0, energy_dev = 0.0;
    for (double t : t_ends) {
      const auto G = evaluate_G(fam, t);
      mass_dev = std::max(mass_dev, std::abs(total_mass(G) - m0) / m0);
      energy_dev = std::max(energy_dev, std::abs(moment(G, 1.0) - e0) / e0);
    }
    res.checks.at_most("family_mass_conservation", mass_dev, 1e-8);
    if (rho >= 2.0) res.checks.at_most("family_energy_conservation", energy_dev, 1e-8);
    summary["family"] = {{"t0", t0}, {"M", fam.M}, {"max_rel_residual", num(worst)}, {"mass_dev", num(mass_dev)},
                         {"energy_dev", rho >= 2.0 ? num(energy_dev) : json(nullptr)}};
  }
  res.summary = summary;
  out.write_json("profile_report.json", {{"summary", summary}, {"checks", res.checks.to_json()}});
  return res;
}

inline command_outcome cmd_verify(const run_config& c, output_dir& out, const std::string& positional) {
  const std::string path = detail::profile_argument(c, positional);
  const detail::bands b(c);
  const auto dopt = detail::diag_options(c);
  auto s = read_profile(path);
  const double stored_strong = s.residual_strong, stored_weak = s.residual_weak;
  s.residual_strong = strong_residual(s.rho, s.phi);
  s.residual_weak = weak_residual(s.rho, s.phi);
  command_outcome res;
  detail::residual_checks(res.checks, s, b);
  const auto rep = run_diagnostics(s.rho, s.phi, dopt);
  detail::diagnostic_checks(res.checks, rep, b);
  res.summary = {{"profile", path},
                 {"rho", s.rho},
                 {"residual_strong", num(s.residual_strong)},
                 {"residual_weak", num(s.residual_weak)},
                 {"stored_residual_strong", num(stored_strong)},
                 {"stored_residual_weak", num(stored_weak)}};
  out.write_json("verify_report.json",
                 {{"summary", res.summary}, {"diagnostics", to_json(rep)}, {"checks", res.checks.to_json()}});
  return res;
}

inline command_outcome cmd_diagnose(const run_config& c, output_dir& out, const std::string& positional) {
  const std::string path = detail::profile_argument(c, positional);
  const detail::bands b(c);
  const auto dopt = detail::diag_options(c);
  const auto s = read_profile(path);
  const auto rep = run_diagnostics(s.rho, s.phi, dopt);
  command_outcome res;
  res.enforce = false;
  detail::diagnostic_checks(res.checks, rep, b);
  detail::write_diagnostics(out, rep, s.phi);
  res.summary = {{"profile", path}, {"rho", s.rho}};
  return res;
}

// ---------------------------------------------------------------------------

struct run_request {
  std::string command;
  std::string config_path;  // empty: defaults only
  std::string out_dir = ".";
  unsigned threads = 1;
  std::string profile;  // verify/diagnose positional argument
};

// Runs one subcommand, writes the manifest and maps failures onto exit codes.
inline int run_command(const run_request& rq, std::ostream& log = std::cerr) {
  const std::string started = utc_now();
  run_config cfg;
  std::optional<output_dir> out;
  int code = exit_ok;
  std::string message;
  command_outcome res;
  bool ran = false;
  try {
    if (rq.threads < 1) throw parameter_error("--threads must be >= 1");
    set_threads(rq.threads);
    if (!rq.config_path.empty()) cfg = run_config::load(rq.config_path);
    if (cfg.str("run.format_version") != format_version)
      throw parameter_error("run.format_version must be " + std::string(format_version));
    out.emplace(rq.out_dir);
    if (rq.command == "stable") res = cmd_stable(cfg, *out);
    else if (rq.command == "evolve") res = cmd_evolve(cfg, *out);
    else if (rq.command == "profile") res = cmd_profile(cfg, *out);
    else if (rq.command == "verify") res = cmd_verify(cfg, *out, rq.profile);
    else if (rq.command == "diagnose") res = cmd_diagnose(cfg, *out, rq.profile);
    else throw parameter_error("unknown command '" + rq.command + "'");
    ran = true;
    if (res.enforce && !res.checks.all_pass()) {
      code = exit_failure;
      message = "one or more checks failed";
    }
  } catch (const io_error& e) {
    code = exit_io;
    message = e.what();
  } catch (const parameter_error& e) {
    code = exit_parameter;
    message = e.what();
  } catch (const compute_error& e) {
    code = exit_failure;
    message = e.what();
  } catch (const std::exception& e) {
    code = exit_failure;
    message = e.what();
  }
  for (const auto& ck : res.checks.items())
    log << (ck.pass ? "PASS " : "FAIL ") << ck.name << " = " << fmt17(ck.value) << " (" << ck.relation << ' '
        << fmt17(ck.band) << ")\n";
  if (!message.empty()) log << "kwt " << rq.command << ": " << message << '\n';
  if (out) {
    json manifest = {
        {"command", rq.command},
        {"format_version", format_version},
        {"status", code == exit_ok ? "pass" : (ran ? "fail" : "error")},
        {"exit_code", code},
        {"message", message},
        {"config_file", rq.config_path},
        {"config", cfg.resolved()},
        {"threads", rq.threads},
        {"versions",
         {{"kwt", kwt_version},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"boost", BOOST_LIB_VERSION},
          {"compiler", compiler_id()}}},
        {"outputs", out->files()},
        {"summary", res.summary},
        {"checks", res.checks.to_json()},
        {"timestamps", {{"started", started}, {"finished", utc_now()}}}};
    try {
      out->write_json("manifest.json", manifest);
    } catch (const io_error& e) {
      log << "kwt: " << e.what() << '\n';
      if (code == exit_ok) code = exit_io;
    }
  }
  return code;
}

}  // namespace kwt
