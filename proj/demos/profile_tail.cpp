// Solves for the profile at one rho and prints its tail fit and flux identity residual.
#include <cstdlib>
#include <iostream>

#include "kwt/diagnostics.hpp"
#include "kwt/profile_solver.hpp"

int main(int argc, char** argv) {
  const double rho = argc > 1 ? std::atof(argv[1]) : 1.5;
  try {
    const auto sol = kwt::solve_profile(rho, kwt::default_profile_grid(rho));
    std::cout << "rho " << rho << "  strong residual " << sol.residual_strong << "  weak residual "
              << sol.residual_weak << '\n';
    const auto rep = kwt::run_diagnostics(rho, sol.phi, {});
    std::cout << (rho < 2.0 ? "tail exponent " : "exponential rate ") << rep.tail_fit_result.rate << "  (r^2 "
              << rep.tail_fit_result.r_squared << ")\n";
    std::cout << "flux identity max residual " << rep.flux_identity_max_residual << '\n';
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
  return 0;
}
