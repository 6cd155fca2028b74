#pragma once

#include <cmath>
#include <map>
#include <utility>
#include <vector>

#include "core.hpp"
#include "grid_measure.hpp"

namespace kwt {

// Closure of ln Φ outside [x_min, x_max]: Φ ∝ x^{left_slope} on the left;
// on the right either Φ ∝ x^{−tail_power} or Φ ∝ e^{−â x} with â fitted by
// least squares of ln Φ against x over the last grid decade.
struct closure_spec {
  double left_slope = -0.5;
  bool exponential_tail = false;
  double tail_power = 1.5;

  static closure_spec for_rho(double rho) {
    closure_spec c;
    c.exponential_tail = rho >= 2.0;
    c.tail_power = rho;
    return c;
  }
};

struct lin_form {
  std::vector<std::pair<int, double>> e;
  double c = 0.0;
  double apply(const std::vector<double>& u) const {
    double s = c;
    for (const auto& [j, w] : e) s += w * u[j];
    return s;
  }
};

// Gradient sink for ln Φ(z) with respect to node values, slopes and the fitted tail slope.
struct grad_acc {
  std::vector<double> gu, gd;
  double gs = 0.0;
  explicit grad_acc(std::size_t n = 0) : gu(n, 0.0), gd(n, 0.0) {}
  void clear() {
    std::fill(gu.begin(), gu.end(), 0.0);
    std::fill(gd.begin(), gd.end(), 0.0);
    gs = 0.0;
  }
};

// Piecewise cubic Hermite interpolant of ln Φ in ln x with fourth-order centred
// slopes; ghost values outside the grid come from the closure.
class log_hermite {
 public:
  static constexpr int ghosts = 6;

  log_hermite() = default;
  log_hermite(const grid_spec& g, const closure_spec& cl) : g_(g), cl_(cl) {
    g_.validate();
    n_ = static_cast<int>(g_.n);
    h_ = g_.h();
    t0_ = g_.t0();
    x_ = g_.nodes();
    if (cl_.exponential_tail) {
      for (int i = 0; i < n_; ++i)
        if (x_[i] >= x_.back() / 10.0) fit_idx_.push_back(i);
      if (fit_idx_.size() < 3) fit_idx_ = {n_ - 3, n_ - 2, n_ - 1};
      double mean = 0.0;
      for (int i : fit_idx_) mean += x_[i];
      mean /= static_cast<double>(fit_idx_.size());
      double ss = 0.0;
      for (int i : fit_idx_) ss += sq(x_[i] - mean);
      for (int i : fit_idx_) fit_c_.push_back((x_[i] - mean) / ss);
    }
    build_ops();
  }

  const grid_spec& grid() const { return g_; }
  const closure_spec& closure() const { return cl_; }
  int n() const { return n_; }
  double h() const { return h_; }
  const std::vector<double>& x() const { return x_; }
  const std::vector<lin_form>& D() const { return D_; }
  const std::vector<lin_form>& D2() const { return D2_; }
  const std::vector<int>& fit_idx() const { return fit_idx_; }
  const std::vector<double>& fit_c() const { return fit_c_; }

  // ghost/extended node j (may be < 0 or >= n) as a linear form in u
  lin_form ext(int j) const {
    lin_form f;
    if (j < 0) {
      f.e = {{0, 1.0}};
      f.c = cl_.left_slope * j * h_;
    } else if (j >= n_) {
      if (!cl_.exponential_tail) {
        f.e = {{n_ - 1, 1.0}};
        f.c = -cl_.tail_power * (j - n_ + 1) * h_;
      } else {
        const double xg = std::exp(t0_ + h_ * j);
        f.e = {{n_ - 1, 1.0}};
        for (std::size_t k = 0; k < fit_idx_.size(); ++k) f.e.push_back({fit_idx_[k], fit_c_[k] * (xg - x_.back())});
      }
    } else {
      f.e = {{j, 1.0}};
    }
    return f;
  }

  // Set ln Φ at the nodes; caches slopes, second derivatives and tail slope.
  void set(const std::vector<double>& u) {
    if (static_cast<int>(u.size()) != n_) throw parameter_error("log_hermite: size mismatch");
    u_ = u;
    d_.resize(n_);
    dd_.resize(n_);
    for (int i = 0; i < n_; ++i) {
      d_[i] = D_[i].apply(u_);
      dd_[i] = D2_[i].apply(u_);
    }
    sfit_ = 0.0;
    for (std::size_t k = 0; k < fit_idx_.size(); ++k) sfit_ += fit_c_[k] * u_[fit_idx_[k]];
  }
  const std::vector<double>& u() const { return u_; }
  const std::vector<double>& d() const { return d_; }
  const std::vector<double>& dd() const { return dd_; }
  // slope of ln Φ against x on the last decade (−â)
  double tail_slope_x() const { return sfit_; }

  double ln_eval(double z) const { return ln_eval_t(std::log(z), z); }
  double eval(double z) const { return z > 0.0 ? std::exp(ln_eval(z)) : 0.0; }

  double ln_eval_t(double tz, double z) const {
    const double s = (tz - t0_) / h_;
    if (s < 0.0) return u_[0] + cl_.left_slope * (tz - t0_);
    if (s >= n_ - 1) {
      if (!cl_.exponential_tail) return u_[n_ - 1] - cl_.tail_power * (tz - t0_ - h_ * (n_ - 1));
      return u_[n_ - 1] + sfit_ * (z - x_.back());
    }
    int k = static_cast<int>(s);
    if (k > n_ - 2) k = n_ - 2;
    const double r = s - k;
    const double r2 = r * r, r3 = r2 * r;
    const double h00 = 2 * r3 - 3 * r2 + 1, h10 = r3 - 2 * r2 + r, h01 = -2 * r3 + 3 * r2, h11 = r3 - r2;
    return h00 * u_[k] + h01 * u_[k + 1] + h_ * (h10 * d_[k] + h11 * d_[k + 1]);
  }

  // Value of ln Φ(z) and accumulation of coef·∂/∂(u, d, sfit) into acc.
  double ln_eval_acc(double tz, double z, double coef, grad_acc& acc) const {
    const double s = (tz - t0_) / h_;
    if (s < 0.0) {
      acc.gu[0] += coef;
      return u_[0] + cl_.left_slope * (tz - t0_);
    }
    if (s >= n_ - 1) {
      acc.gu[n_ - 1] += coef;
      if (!cl_.exponential_tail) return u_[n_ - 1] - cl_.tail_power * (tz - t0_ - h_ * (n_ - 1));
      acc.gs += coef * (z - x_.back());
      return u_[n_ - 1] + sfit_ * (z - x_.back());
    }
    int k = static_cast<int>(s);
    if (k > n_ - 2) k = n_ - 2;
    const double r = s - k;
    const double r2 = r * r, r3 = r2 * r;
    const double h00 = 2 * r3 - 3 * r2 + 1, h10 = r3 - 2 * r2 + r, h01 = -2 * r3 + 3 * r2, h11 = r3 - r2;
    acc.gu[k] += coef * h00;
    acc.gu[k + 1] += coef * h01;
    acc.gd[k] += coef * h_ * h10;
    acc.gd[k + 1] += coef * h_ * h11;
    return h00 * u_[k] + h01 * u_[k + 1] + h_ * (h10 * d_[k] + h11 * d_[k + 1]);
  }

  // Convert accumulated gradient into a dense row over u.
  void gradient_row(const grad_acc& acc, double* row) const {
    for (int j = 0; j < n_; ++j) row[j] += acc.gu[j];
    for (int i = 0; i < n_; ++i) {
      if (acc.gd[i] == 0.0) continue;
      for (const auto& [j, w] : D_[i].e) row[j] += w * acc.gd[i];
    }
    if (acc.gs != 0.0)
      for (std::size_t k = 0; k < fit_idx_.size(); ++k) row[fit_idx_[k]] += fit_c_[k] * acc.gs;
  }

  // ∫ Φ over (a,b) ⊂ (0,∞], closures included.
  double integral(double a, double b, double power = 0.0) const;

 private:
  void build_ops() {
    static const double c1[5] = {1, -8, 0, 8, -1};
    static const double c2[5] = {-1, 16, -30, 16, -1};
    D_.assign(n_, {});
    D2_.assign(n_, {});
    for (int i = 0; i < n_; ++i) {
      std::map<int, double> a1, a2;
      double k1 = 0.0, k2 = 0.0;
      for (int m = 0; m < 5; ++m) {
        const lin_form f = ext(i + m - 2);
        for (const auto& [j, w] : f.e) {
          a1[j] += c1[m] * w / (12.0 * h_);
          a2[j] += c2[m] * w / (12.0 * h_ * h_);
        }
        k1 += c1[m] * f.c / (12.0 * h_);
        k2 += c2[m] * f.c / (12.0 * h_ * h_);
      }
      for (const auto& [j, w] : a1)
        if (w != 0.0) D_[i].e.push_back({j, w});
      for (const auto& [j, w] : a2)
        if (w != 0.0) D2_[i].e.push_back({j, w});
      D_[i].c = k1;
      D2_[i].c = k2;
    }
    D_[0] = lin_form{{}, cl_.left_slope};
    if (!cl_.exponential_tail) {
      D_[n_ - 1] = lin_form{{}, -cl_.tail_power};
    } else {
      lin_form f;
      for (std::size_t k = 0; k < fit_idx_.size(); ++k) f.e.push_back({fit_idx_[k], fit_c_[k] * x_.back()});
      D_[n_ - 1] = f;
    }
  }

  grid_spec g_;
  closure_spec cl_;
  int n_ = 0;
  double h_ = 0.0, t0_ = 0.0;
  std::vector<double> x_;
  std::vector<lin_form> D_, D2_;
  std::vector<int> fit_idx_;
  std::vector<double> fit_c_;
  std::vector<double> u_, d_, dd_;
  double sfit_ = 0.0;
};

// Interpolated profile built from a positive grid measure.
inline log_hermite make_interp(const grid_measure& mu, const closure_spec& cl) {
  log_hermite L(mu.grid, cl);
  std::vector<double> u(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (!(mu.density[i] > 0.0)) throw domain_error("interpolant needs a strictly positive density");
    u[i] = std::log(mu.density[i]);
  }
  L.set(u);
  return L;
}

inline bool all_zero(const grid_measure& mu) {
  for (double v : mu.density)
    if (v != 0.0) return false;
  return true;
}

// ∫_a^b x^power Φ(x) dx: Gauss panels in ln x on the grid part, closed forms on the closures.
inline double log_hermite::integral(double a, double b, double power) const {
  if (!(b > a)) return 0.0;
  const double xl = x_.front(), xr = x_.back();
  std::vector<double> parts;
  // left closure: Φ = Φ0 (x/x0)^{s}
  if (a < xl) {
    const double e = cl_.left_slope + power + 1.0;
    const double hi = std::min(b, xl);
    const double pre = std::exp(u_[0]) * std::pow(xl, -cl_.left_slope);
    if (e <= 0.0) throw domain_error("integral diverges at 0 under the left closure");
    parts.push_back(pre * (std::pow(hi, e) - std::pow(std::max(a, 0.0), e)) / e);
  }
  const double lo = std::max(a, xl), hi = std::min(b, xr);
  if (hi > lo) {
    const double tl = std::log(lo), th = std::log(hi);
    // panels aligned with grid cells
    const double s0 = (tl - t0_) / h_, s1 = (th - t0_) / h_;
    int k0 = static_cast<int>(std::floor(s0)), k1 = static_cast<int>(std::ceil(s1));
    const auto& g = gauss<8>();
    for (int k = k0; k < k1; ++k) {
      const double ta = std::max(tl, t0_ + h_ * k), tb = std::min(th, t0_ + h_ * (k + 1));
      if (!(tb > ta)) continue;
      const double half = 0.5 * (tb - ta), mid = ta + half;
      double s = 0.0;
      for (int q = 0; q < 8; ++q) {
        const double t = mid + half * g.x[q], z = std::exp(t);
        s += g.w[q] * std::exp(ln_eval_t(t, z) + (power + 1.0) * t);
      }
      parts.push_back(half * s);
    }
  }
  if (b > xr) {
    const double la = std::max(a, xr);
    const double phiN = std::exp(u_[n_ - 1]);
    if (!cl_.exponential_tail) {
      const double e = power + 1.0 - cl_.tail_power;
      const double pre = phiN * std::pow(xr, cl_.tail_power);
      if (std::isinf(b)) {
        if (e >= 0.0) throw domain_error("integral diverges at infinity under the power tail");
        parts.push_back(-pre * std::pow(la, e) / e);
      } else {
        parts.push_back(pre * (std::pow(b, e) - std::pow(la, e)) / e);
      }
    } else {
      const double ahat = -sfit_;
      if (!(ahat > 0.0)) throw domain_error("exponential tail with nonpositive fitted rate");
      // Gauss panels in x out to 60/â beyond the grid
      const double end = std::isinf(b) ? la + 60.0 / ahat : b;
      gauss_panels<16>(la, end, 1.0 / ahat, [&](double z, double w) {
        parts.push_back(w * std::pow(z, power) * phiN * std::exp(-ahat * (z - xr)));
      });
    }
  }
  return pairwise_sum(parts);
}

}  // namespace kwt
