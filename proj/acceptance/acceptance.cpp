// Acceptance checks. Usage: acceptance <id> with id in 1..11, or "all".
// Each criterion prints its measurements and ends with exactly one PASS/FAIL line.

#include <sys/wait.h>

#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "kwt/kwt.hpp"

#ifndef KWT_CLI_PATH
#define KWT_CLI_PATH "kwt"
#endif

using namespace kwt;
namespace fs = std::filesystem;

namespace {

const double pi = 3.14159265358979323846;

// Tolerances, pinned.
constexpr double cauchy_tol = 1e-8;
constexpr double stable_norm_tol = 1e-5;
constexpr double tail_product_lo = 0.95, tail_product_hi = 1.05;
constexpr double sign_tol = 1e-10;
constexpr double concavity_tol = 1e-8;
constexpr double kernel_tol = 1e-8;
constexpr double theta_tol = 1e-14;
constexpr double norm_step_tol = 1e-8;
constexpr double margin_tol = 1e-6;
constexpr double residual_band = 1e-3;
constexpr double relax_band = 0.05;
constexpr double relax_eps_final = 0.02;
constexpr double tail_exponent_band = 0.10;
constexpr double tail_ratio_lo = 0.85, tail_ratio_hi = 1.15;
constexpr double flux_band = 1e-2;
constexpr double norm_flux_band = 0.02;
constexpr double limits_band = 0.10;
constexpr double exp_fit_r2 = 0.99;
constexpr double interval_r2 = 0.98;
constexpr double rate_agreement = 0.15;
constexpr double rescale_residual_factor = 2.0;
constexpr double rescale_norm_tol = 1e-6;
constexpr double family_band = 1e-3;
constexpr double mass_tol = 1e-8;
constexpr double energy_tol = 1e-10;

class verdict {
 public:
  explicit verdict(int id) : id_(id) {}
  void require(bool ok, const std::string& what) {
    std::printf("  %s %s\n", ok ? "ok  " : "MISS", what.c_str());
    if (!ok) {
      pass_ = false;
      if (first_miss_.empty()) first_miss_ = what;
    }
  }
  int finish(const std::string& title) const {
    if (pass_) std::printf("PASS criterion %d: %s\n", id_, title.c_str());
    else std::printf("FAIL criterion %d: %s (first miss: %s)\n", id_, title.c_str(), first_miss_.c_str());
    std::fflush(stdout);
    return pass_ ? 0 : 1;
  }

 private:
  int id_;
  bool pass_ = true;
  std::string first_miss_;
};

std::string f(const char* fmt, ...) __attribute__((format(printf, 1, 2)));
std::string f(const char* fmt, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, ap);
  va_end(ap);
  return buf;
}

// Profiles are shared between criteria when several run in one process.
const profile_solution& direct_profile(double rho) {
  static std::map<double, profile_solution> cache;
  auto it = cache.find(rho);
  if (it == cache.end()) it = cache.emplace(rho, solve_profile(rho, default_profile_grid(rho))).first;
  return it->second;
}

double xphi_norm(double rho, const grid_measure& phi) { return rho_norm_of_xphi(rho, phi, true); }

// ---------------------------------------------------------------------------

int criterion_1() {
  verdict v(1);
  for (double a : {0.5, 1.0, 1.5}) {
    const auto t = build_stable_table(a, 4096, 100.0);
    const auto inv = check_stable_table(t);
    if (a == 1.0) {
      double worst = 0.0;
      for (int j = 0; j <= 10000; ++j) {
        const double z = 10.0 * j / 10000.0;
        worst = std::max(worst, std::abs(t.eval(z) - 1.0 / (pi * pi + z * z)));
      }
      v.require(worst <= cauchy_tol, f("alpha=1 max |v - 1/(pi^2+z^2)| on [0,10] = %.3e <= %.0e", worst, cauchy_tol));
    }
    v.require(std::abs(inv.normalization - 1.0) <= stable_norm_tol,
              f("alpha=%g integral = %.12f within %.0e of 1", a, inv.normalization, stable_norm_tol));
    v.require(inv.tail_product_50 >= tail_product_lo && inv.tail_product_50 <= tail_product_hi,
              f("alpha=%g 50^(alpha+1) v(50) = %.6f in [%.2f, %.2f]", a, inv.tail_product_50, tail_product_lo,
                tail_product_hi));
  }
  return v.finish("stable-law oracle, normalization and z=50 tail product");
}

int criterion_2() {
  verdict v(2);
  struct datum {
    const char* name;
    std::function<double(double)> u0;  // values on y > 0; odd extension implied
    bool concave;
  };
  const std::vector<datum> data = {
      {"step", [](double) { return 1.0; }, true},
      {"tanh", [](double y) { return std::tanh(y); }, true},
      {"y/(1+y)", [](double y) { return y / (1.0 + y); }, true},
      {"1-exp(-y)", [](double y) { return -std::expm1(-y); }, true},
      {"y exp(-y^2)", [](double y) { return y * std::exp(-y * y); }, false},
  };
  const double h = 0.05;
  std::vector<double> xs;
  for (int k = 0; k <= 200; ++k) xs.push_back(k * h);
  for (double a : {0.5, 1.0, 1.5}) {
    const auto tab = build_stable_table(a, 4096, 100.0);
    for (const auto& d : data)
      for (double t : {0.1, 1.0}) {
        const auto u = evolve_odd(d.u0, tab, t, xs);
        double min_u = 0.0, max_d2 = -1.0;
        for (double w : u) min_u = std::min(min_u, w);
        for (std::size_t i = 1; i + 1 < u.size(); ++i) max_d2 = std::max(max_d2, u[i + 1] + u[i - 1] - 2.0 * u[i]);
        v.require(min_u >= -sign_tol, f("alpha=%g %-12s t=%g min u on [0,10] = %.3e >= -%.0e", a, d.name, t, min_u, sign_tol));
        if (d.concave)
          v.require(max_d2 <= concavity_tol,
                    f("alpha=%g %-12s t=%g max second difference = %.3e <= %.0e", a, d.name, t, max_d2, concavity_tol));
      }
  }
  return v.finish("sign preservation and concavity under the odd stable semigroup");
}

int criterion_3() {
  verdict v(3);
  std::mt19937_64 gen(20240611);
  std::uniform_real_distribution<double> ux(-5.0, 5.0), uy(-3.0, 3.0);
  struct fn {
    const char* name;
    std::function<double(double)> f, f2;
  };
  const std::vector<fn> fs = {
      {"z^2", [](double z) { return z * z; }, [](double) { return 2.0; }},
      {"z^3", [](double z) { return z * z * z; }, [](double z) { return 6.0 * z; }},
      {"sin z", [](double z) { return std::sin(z); }, [](double z) { return -std::sin(z); }},
  };
  for (const auto& F : fs) {
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) worst = std::max(worst, delta2_kernel_identity_check(F.f, F.f2, ux(gen), uy(gen)));
    v.require(worst <= kernel_tol, f("%-6s max |second difference - kernel integral| = %.3e <= %.0e", F.name, worst, kernel_tol));
  }
  std::uniform_real_distribution<double> up(0.0, 5.0), uR(0.05, 5.0);
  double worst = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const double x = up(gen), y = up(gen), R = uR(gen);
    const double three_point = D2star([R](double z) { return theta_R(R, z); }, x, y);
    worst = std::max(worst, std::abs(three_point - D2star_theta_R_closed(R, x, y)));
  }
  v.require(worst <= theta_tol, f("theta_R three-point vs closed form over 1e4 samples: %.3e <= %.0e", worst, theta_tol));
  return v.finish("second-difference identities");
}

int criterion_4() {
  verdict v(4);
  evolution_params p;
  p.rho = 1.5;
  p.epsilon = 0.5;
  p.a = 0.1;
  p.grid = {1e-4, 1e4, 512};
  p.R0 = 1.0;
  evolution ev(p);
  auto st = ev.start(psi_seed(p.rho, p.grid));
  for (int k = 0; k < 100; ++k) ev.step(st);
  const auto& h = st.rho_norm_history;
  double worst = -1.0;
  for (std::size_t k = 1; k < h.size(); ++k) worst = std::max(worst, (h[k].second - h[k - 1].second) / h[k - 1].second);
  double min_margin = 1e300;
  for (const auto& [t, m] : st.lower_bound_margin_history) min_margin = std::min(min_margin, m);
  std::printf("  rho-norm %.12f -> %.12f over t = %.4f, %d Picard iterations\n", h.front().second, h.back().second, st.t,
              st.picard_iterations);
  v.require(h.size() == 101, f("100 macro-steps recorded (%zu states)", h.size()));
  v.require(worst <= norm_step_tol, f("max relative rho-norm increase per step = %.3e <= %.0e", worst, norm_step_tol));
  v.require(min_margin >= -margin_tol, f("min lower-bound margin (R0 = 1) = %.6e >= -%.0e", min_margin, margin_tol));
  return v.finish("regularized evolution keeps the norm nonincreasing and the lower bound");
}

int criterion_5() {
  verdict v(5);
  for (double rho : {1.3, 1.5, 1.7}) {
    const auto& d = direct_profile(rho);
    v.require(d.path.converged, f("rho=%g direct iteration converged in %zu iterations", rho, d.path.history.size()));
    v.require(d.residual_strong < residual_band, f("rho=%g strong residual %.3e < %.0e", rho, d.residual_strong, residual_band));
    v.require(d.residual_weak < residual_band,
              f("rho=%g weak residual over %zu tests %.3e < %.0e", rho, default_battery(d.phi.grid).size(), d.residual_weak,
                residual_band));
    const grid_spec rg = default_relax_grid(rho);
    std::vector<double> eps;
    for (double e : {0.5, 0.2, 0.1, 0.05, relax_eps_final}) eps.push_back(e);
    const auto r = relax_to_profile(rho, default_relax_schedule(rho, rg, eps), {});
    const double mid = std::sqrt(rg.x_min * rg.x_max), lo = mid / std::sqrt(10.0), hi = mid * std::sqrt(10.0);
    const double dev = weighted_sup_difference(r.phi, d.phi, lo, hi);
    v.require(dev <= relax_band, f("rho=%g relaxation (eps -> %g) vs direct on [%.3g, %.3g]: %.4f <= %.2f", rho,
                                   relax_eps_final, lo, hi, dev, relax_band));
  }
  return v.finish("profile existence and cross-method agreement");
}

int criterion_6() {
  verdict v(6);
  for (double rho : {1.3, 1.5, 1.7}) {
    const grid_spec base = default_profile_grid(rho);
    std::vector<double> dev;
    for (std::size_t n : {(base.n + 1) / 2, base.n, 2 * base.n}) {
      const grid_spec g{base.x_min, base.x_max, n};
      const auto s = n == base.n ? direct_profile(rho) : solve_profile(rho, g);
      const double norm = xphi_norm(rho, s.phi);
      const auto win = default_tail_window(g);
      const auto fit = tail_fit(s.phi, win, tail_model::power);
      const double ratio = tail_constant_ratio(rho, s.phi, win.second);
      dev.push_back(std::abs(ratio - 1.0));
      std::printf("  rho=%g N=%zu ||x Phi|| = %.9f exponent %.6f ratio %.8f (constant %.4f)\n", rho, n, norm, fit.rate,
                  ratio, tail_constant(rho));
      v.require(std::abs(norm - 1.0) <= 1e-9, f("rho=%g N=%zu normalized", rho, n));
      v.require(std::abs(fit.rate - rho) <= tail_exponent_band * rho,
                f("rho=%g N=%zu exponent %.6f within 10%% of rho", rho, n, fit.rate));
      v.require(ratio >= tail_ratio_lo && ratio <= tail_ratio_hi,
                f("rho=%g N=%zu ratio %.6f in [%.2f, %.2f]", rho, n, ratio, tail_ratio_lo, tail_ratio_hi));
    }
    v.require(dev[1] < dev[0] && dev[2] < dev[1],
              f("rho=%g |ratio-1| shrinks as spacing halves: %.2e > %.2e > %.2e", rho, dev[0], dev[1], dev[2]));
  }
  return v.finish("power-law tail exponent and constant, with refinement");
}

int criterion_7() {
  verdict v(7);
  for (double rho : {1.3, 1.5, 1.7}) {
    const auto& s = direct_profile(rho);
    const auto rep = run_diagnostics(rho, s.phi, {});
    for (const auto& p : rep.flux_table) std::printf("  rho=%g r=%-10.4g calI/2=%.6e lhs=%.6e residual=%.3e\n", rho, p.r, 0.5 * p.cal_I, p.lhs, p.residual);
    v.require(rep.flux_table.size() == 10 && rep.flux_identity_max_residual < flux_band,
              f("rho=%g flux identity at %zu points over [%.3g, %.3g]: max residual %.3e < %.0e", rho, rep.flux_table.size(),
                rep.flux_table.front().r, rep.flux_table.back().r, rep.flux_identity_max_residual, flux_band));
    v.require(rep.norm_flux->mismatch < norm_flux_band,
              f("rho=%g norm via flux at R=%.3g: %.9f vs %.9f, mismatch %.3e < %.2f", rho,
                std::sqrt(s.phi.grid.x_min * s.phi.grid.x_max), rep.norm_flux->via_flux, rep.norm_flux->direct,
                rep.norm_flux->mismatch, norm_flux_band));
    const double n = rep.rho_norm_value->tail_closed;
    v.require(std::abs(rep.limits->upper - n) <= limits_band * n && std::abs(rep.limits->lower - n) <= limits_band * n,
              f("rho=%g limit estimates at R=%.3g: %.6f, %.6f vs norm %.6f (10%%)", rho, rep.limits->R, rep.limits->upper,
                rep.limits->lower, n));
  }
  return v.finish("flux identities and norm limits");
}

int criterion_8() {
  verdict v(8);
  const auto& s = direct_profile(2.0);
  const auto rep = run_diagnostics(2.0, s.phi, {});
  const auto& tf = rep.tail_fit_result;
  v.require(tf.r_squared >= exp_fit_r2,
            f("log Phi linear on [%.3g, %.3g]: rate %.5f, r^2 %.6f >= %.2f", tf.lo, tf.hi, tf.rate, tf.r_squared, exp_fit_r2));
  for (const auto& m : rep.moment_table)
    v.require(m.ok, f("gamma=%-4g m = %.6e <= bound %.6e", m.gamma, m.m, m.bound));
  const auto& q = *rep.relations;
  v.require(q.quadratic_ok, f("m2 = %.6e <= 2 m0 m1 = %.6e", q.m2, 2.0 * q.m0 * q.m1));
  const auto& iv = *rep.intervals;
  for (const auto& r : iv.rows) std::printf("  I_%g = %.6e\n", r.R, r.I);
  v.require(iv.min_I > 0.0, f("interval integrals positive (min %.3e)", iv.min_I));
  v.require(iv.fit.r_squared >= interval_r2, f("-log I_R linear: r^2 %.6f >= %.2f", iv.fit.r_squared, interval_r2));
  const double agree = std::abs(*rep.exp_lower_rate - *rep.exp_upper_rate) / *rep.exp_upper_rate;
  v.require(agree <= rate_agreement,
            f("interval rate %.5f vs pointwise rate %.5f: %.4f <= %.2f", *rep.exp_lower_rate, *rep.exp_upper_rate, agree,
              rate_agreement));
  return v.finish("exponential regime at rho = 2");
}

int criterion_9() {
  verdict v(9);
  const double rho = 1.5;
  const auto& s = direct_profile(rho);
  const double n0 = xphi_norm(rho, s.phi), r0 = s.residual_strong;
  for (double c : {0.5, 2.0}) {
    const auto phi = rescale(s.phi, c);
    const double r = strong_residual(rho, phi), n = xphi_norm(rho, phi);
    const double rel = std::abs(n - std::pow(c, -rho) * n0) / (std::pow(c, -rho) * n0);
    v.require(r <= rescale_residual_factor * r0, f("c=%g strong residual %.3e <= 2 x %.3e", c, r, r0));
    v.require(rel <= rescale_norm_tol, f("c=%g ||x Phi_*|| = %.12f vs c^-rho ||x Phi|| = %.12f: %.2e <= %.0e", c, n,
                                         std::pow(c, -rho) * n0, rel, rescale_norm_tol));
  }
  return v.finish("scaling covariance");
}

int criterion_10() {
  verdict v(10);
  const std::vector<double> t_ends = {0.5, 1.0};
  for (double rho : {1.5, 2.0}) {
    const auto& s = direct_profile(rho);
    const auto fam = make_family(rho, s.phi, 1.0);
    const auto rows = weak_form_residuals(fam, family_battery(s.phi.grid), t_ends, 33);
    for (const auto& r : rows)
      v.require(r.residual <= family_band * r.scale, f("rho=%g test %zu t_end=%g residual %.3e <= 1e-3 x %.3e", rho, r.test_id,
                                                        r.t_end, r.residual, r.scale));
    const double m0 = total_mass(evaluate_G(fam, 0.0)), e0 = moment(evaluate_G(fam, 0.0), 1.0);
    for (double t : t_ends) {
      const auto G = evaluate_G(fam, t);
      const double dm = std::abs(total_mass(G) - m0) / m0;
      v.require(dm <= mass_tol, f("rho=%g t=%g mass %.15f, relative change %.2e <= %.0e", rho, t, total_mass(G), dm, mass_tol));
      if (rho == 2.0) {
        const double de = std::abs(moment(G, 1.0) - e0) / e0;
        v.require(de <= energy_tol, f("rho=2 t=%g energy %.15f, relative change %.2e <= %.0e", t, moment(G, 1.0), de, energy_tol));
      }
    }
  }
  return v.finish("weak self-similar solution family");
}

// Runs the CLI twice per scenario and compares every data file byte for byte.
int criterion_11() {
  verdict v(11);
  const fs::path root = fs::temp_directory_path() / "kwt_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  struct scenario {
    const char* name;
    const char* command;
    std::string config;
    std::string positional;
  };
  const std::vector<scenario> runs = {
      {"stable", "stable", "stable.alphas = 1, 1.5\n", ""},
      {"evolve", "evolve", "evolve.steps = 5\n", ""},
      {"profile", "profile", "profile.rho = 1.5\n", ""},
      {"profile2", "profile", "profile.rho = 2\nfamily.enabled = true\n", ""},
      {"diagnose", "diagnose", "", "profile2_t1/profile.csv"},
  };
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  for (const auto& sc : runs) {
    const fs::path cfg = root / (std::string(sc.name) + ".cfg");
    std::ofstream(cfg) << sc.config;
    std::vector<fs::path> outs;
    for (int t : {1, 8}) {
      const fs::path out = root / (std::string(sc.name) + "_t" + std::to_string(t));
      std::string cmd = std::string("\"") + KWT_CLI_PATH + "\" " + sc.command + " --config \"" + cfg.string() +
                        "\" --out \"" + out.string() + "\" --threads " + std::to_string(t);
      if (!sc.positional.empty()) cmd += " \"" + (root / sc.positional).string() + "\"";
      cmd += " > \"" + (root / (std::string(sc.name) + "_t" + std::to_string(t) + ".log")).string() + "\" 2>&1";
      const int rc = std::system(cmd.c_str());
      std::printf("  %s --threads %d: exit status %d\n", sc.name, t, WEXITSTATUS(rc));
      outs.push_back(out);
    }
    std::size_t files = 0, same = 0;
    for (const auto& e : fs::directory_iterator(outs[0])) {
      const auto name = e.path().filename();
      if (name == "manifest.json") continue;
      ++files;
      const fs::path other = outs[1] / name;
      if (fs::exists(other) && slurp(e.path()) == slurp(other)) ++same;
      else std::printf("  differs: %s/%s\n", sc.name, name.string().c_str());
    }
    std::size_t files8 = 0;
    for (const auto& e : fs::directory_iterator(outs[1]))
      if (e.path().filename() != "manifest.json") ++files8;
    v.require(files > 0 && same == files && files8 == files,
              f("%s: %zu of %zu data files identical between 1 and 8 threads", sc.name, same, files));
  }
  return v.finish("determinism across thread counts");
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<int()>> all = {criterion_1, criterion_2, criterion_3, criterion_4,
                                                 criterion_5, criterion_6, criterion_7, criterion_8,
                                                 criterion_9, criterion_10, criterion_11};
  if (argc != 2) {
    std::fprintf(stderr, "usage: acceptance <1..11|all>\n");
    return 2;
  }
  const std::string arg = argv[1];
  try {
    if (arg == "all") {
      int failed = 0;
      for (const auto& c : all) failed += c() != 0;
      return failed == 0 ? 0 : 1;
    }
    const int id = std::atoi(arg.c_str());
    if (id < 1 || id > 11) {
      std::fprintf(stderr, "criterion id must be 1..11\n");
      return 2;
    }
    return all[id - 1]();
  } catch (const std::exception& e) {
    std::printf("FAIL criterion %s: exception: %s\n", arg.c_str(), e.what());
    return 1;
  }
}
