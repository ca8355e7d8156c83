#pragma once

#include <vector>

#include "topdown/solvers.hpp"

namespace topdown {

// Exhaustive enumeration over the binary increments (at most 16), kept
// independent of the LP/branch-and-bound path so the two can certify each
// other. Returns every optimum.
struct OracleResult {
  bool feasible = false;
  double objective = 0.0;
  std::vector<std::vector<int>> optima;
};

OracleResult milp_oracle(const RounderProblem& p);

}  // namespace topdown
