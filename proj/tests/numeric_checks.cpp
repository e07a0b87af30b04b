// Standalone runner for the double-precision suites; the acceptance binary shells out to it.
#include <cstring>
#include <iostream>

#include "support/numeric_suite.hpp"

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: numeric_checks losses|gradients [probes_per_term]\n";
    return 2;
  }
  jekyll::testing::SuiteResult r;
  if (std::strcmp(argv[1], "losses") == 0) {
    r = jekyll::testing::run_loss_suite(2024);
  } else if (std::strcmp(argv[1], "gradients") == 0) {
    const int probes = argc > 2 ? std::atoi(argv[2]) : 15;
    r = jekyll::testing::run_gradient_suite(2024, probes, argc > 3 ? std::atof(argv[3]) : 1e-4);
  } else {
    std::cerr << "unknown suite " << argv[1] << '\n';
    return 2;
  }
  for (const auto& m : r.messages) std::cout << "  " << m << '\n';
  std::cout << argv[1] << " checks=" << r.checks << " failures=" << r.failures << " worst=" << r.worst
            << " redrawn=" << r.redrawn << '\n';
  return r.ok() ? 0 : 1;
}
