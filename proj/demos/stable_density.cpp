// Tabulates the symmetric stable density for one alpha and prints a few values.
#include <cstdlib>
#include <iostream>

#include "kwt/stable_law.hpp"

int main(int argc, char** argv) {
  const double alpha = argc > 1 ? std::atof(argv[1]) : 1.5;
  try {
    const auto t = kwt::build_stable_table(alpha, 4096, 100.0);
    const auto inv = kwt::check_stable_table(t);
    std::cout << "alpha " << alpha << "  normalization " << inv.normalization << "  50^(1+alpha) v(50) "
              << inv.tail_product_50 << '\n';
    for (double z : {0.0, 0.5, 1.0, 2.0, 5.0, 20.0}) std::cout << "v(" << z << ") = " << t.eval(z) << '\n';
    if (argc > 2) kwt::write_stable_csv(argv[2], t);
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
  return 0;
}
