// Asymptotic variance of the extended estimator for each built-in scenario,
// next to the Monte Carlo variance from a short simulation.

#include <cstdio>

#include "ebcal/simulation.hpp"

using namespace ebcal;

int main() {
  GridOptions opt;
  opt.replicates = 200;
  opt.jobs = 4;
  std::printf("%-10s %10s %10s %10s %10s\n", "scenario", "V1+V2+V3", "bound", "n*Var(MC)", "V3");
  for (const char* p : {"P1", "P2", "P3"}) {
    ScenarioConfig c = builtin_scenario(p, "T1", "M1");
    c.n = 4000;
    AsymptoticReport r = asymptotic_variance(truth_from_scenario(c), c.basis_spec(), scenario_grid(c, 12));
    ScenarioResult mc = run_scenario(c, {Method::Extended}, opt);
    const double sd = mc.methods[0].sd;
    std::printf("%-10s %10.4f %10.4f %10.4f %10.4f\n", c.name.c_str(), r.total, r.bound, c.n * sd * sd, r.v3);
  }
  return 0;
}
