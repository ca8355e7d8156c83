#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "topdown/constraints.hpp"

namespace topdown {

// Thrown when a solve has an empty feasible region; carries the offending
// row tags when the simplex can name them.
class InfeasibleError : public std::runtime_error {
 public:
  InfeasibleError(const std::string& what, std::vector<std::string> rows)
      : std::runtime_error(what), rows_(std::move(rows)) {}
  const std::vector<std::string>& rows() const { return rows_; }

 private:
  std::vector<std::string> rows_;
};

// Weighted non-negative least squares over one node or a children-stacked
// space: min (Qx - m)' W (Qx - m) subject to x >= 0, the constraint set,
// and per-pass interval blocks |B(x - prior)| <= radius.
struct LeastSquaresProblem {
  Eigen::MatrixXd query;      // stacked Q
  Eigen::VectorXd weight;     // diagonal of W, one entry per query row (> 0)
  Eigen::VectorXd target;     // noisy measurements
  ConstraintSet constraints{0};

  struct IntervalBlock {
    Eigen::MatrixXd rows;     // B
    Eigen::VectorXd center;   // B x-tilde from the earlier pass
    double radius = 0.0;      // tau-hat
  };
  std::vector<IntervalBlock> interval_blocks;
};

struct RealSolution {
  Eigen::VectorXd x;
  double objective = 0.0;
  int iterations = 0;
  std::string status;
  double max_violation = 0.0;          // primal feasibility residual
  double stationarity_residual = 0.0;  // KKT residual, relative scale
};

RealSolution nnls_solve(const LeastSquaresProblem& p);

// Minimal uniform tolerance: the smallest tau such that some point obeying
// the hard constraints stays within tau of every listed query block.
double solve_tolerance(const ConstraintSet& cs,
                       const std::vector<std::pair<Eigen::MatrixXd, Eigen::VectorXd>>& blocks);

// Controlled rounding around the real-valued solution. The increment vector
// is binary, constraints hold exactly, and the objective is the L1 distance
// of the listed queries from their real-valued answers.
struct RounderProblem {
  Eigen::VectorXd fractional_target;  // x-tilde
  ConstraintSet constraints{0};       // over the x space
  Eigen::MatrixXd objective_rows;     // Q of the current pass
  // Earlier-pass query answers pinned exactly: rows * x == values.
  std::vector<std::pair<Eigen::MatrixXd, Eigen::VectorXd>> pinned;
};

struct IntegerSolution {
  std::vector<std::int64_t> x;
  std::vector<int> increments;  // the binary y with x = floor(x-tilde) + y
  double objective = 0.0;
};

IntegerSolution round_solve(const RounderProblem& p);

}  // namespace topdown
