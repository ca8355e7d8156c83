#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace topdown::lp {

enum class Status { kOptimal, kInfeasible, kUnbounded };

// min objective . x  subject to the rows, x >= 0 componentwise.
struct RowSpec {
  std::vector<std::pair<int, double>> terms;
  double rhs = 0.0;
  bool equality = true;
  std::string tag;
};

struct Spec {
  int nvars = 0;
  Eigen::VectorXd objective;  // length nvars; zero vector for feasibility probes
  std::vector<RowSpec> rows;
};

struct Result {
  Status status = Status::kInfeasible;
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  std::vector<std::string> infeasible_rows;  // rows left with artificial residue
};

// Dense two-phase simplex with Bland's rule; deterministic for fixed input.
Result solve(const Spec& spec);

}  // namespace topdown::lp
