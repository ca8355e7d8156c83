#include "topdown/lp.hpp"

#include <cmath>
#include <stdexcept>

namespace topdown::lp {

namespace {

constexpr double kPivotTol = 1e-9;
constexpr double kCostTol = 1e-9;
constexpr double kFeasTol = 1e-7;

}  // namespace

Result solve(const Spec& spec) {
  const int n = spec.nvars;
  const int m = static_cast<int>(spec.rows.size());
  if (spec.objective.size() != n) throw std::invalid_argument("lp: objective length != nvars");

  // Standard form: x | slacks for <= rows | artificials, all >= 0, rhs >= 0.
  int nslack = 0;
  for (const auto& r : spec.rows) nslack += r.equality ? 0 : 1;
  const int ncols = n + nslack + m;  // one artificial column per row, used as needed
  Eigen::MatrixXd tab = Eigen::MatrixXd::Zero(m, ncols + 1);
  std::vector<int> basis(m, -1);
  std::vector<bool> is_artificial(ncols, false);

  int slack_at = n;
  for (int i = 0; i < m; ++i) {
    const auto& r = spec.rows[i];
    double sign = 1.0;
    if (r.rhs < 0) sign = -1.0;
    for (const auto& [j, v] : r.terms) {
      if (j < 0 || j >= n) throw std::invalid_argument("lp: variable index out of range");
      tab(i, j) += sign * v;
    }
    tab(i, ncols) = sign * r.rhs;
    if (!r.equality) {
      tab(i, slack_at) = sign * 1.0;
      if (sign > 0) basis[i] = slack_at;
      ++slack_at;
    }
    if (basis[i] < 0) {
      const int art = n + nslack + i;
      tab(i, art) = 1.0;
      is_artificial[art] = true;
      basis[i] = art;
    }
  }

  const auto pivot = [&](int row, int col) {
    tab.row(row) /= tab(row, col);
    for (int i = 0; i < m; ++i) {
      if (i == row) continue;
      const double f = tab(i, col);
      if (f != 0.0) tab.row(i) -= f * tab.row(row);
    }
    basis[row] = col;
  };

  Result res;
  const int iter_cap = 20000 + 200 * (m + n);

  // cost(j) callable gives the phase objective per column.
  const auto run_phase = [&](auto cost, bool allow_artificial) -> Status {
    for (;;) {
      if (++res.iterations > iter_cap)
        throw std::runtime_error("lp: iteration cap exceeded (" + std::to_string(iter_cap) + ")");
      // Reduced costs under the current basis; Bland entering rule.
      Eigen::VectorXd cb(m);
      for (int i = 0; i < m; ++i) cb(i) = cost(basis[i]);
      const Eigen::RowVectorXd priced = cb.transpose() * tab.leftCols(ncols);
      int enter = -1;
      for (int j = 0; j < ncols; ++j) {
        if (!allow_artificial && is_artificial[j]) continue;
        if (cost(j) - priced(j) < -kCostTol) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return Status::kOptimal;
      int leave = -1;
      double best_ratio = 0.0;
      for (int i = 0; i < m; ++i) {
        if (tab(i, enter) > kPivotTol) {
          const double ratio = tab(i, ncols) / tab(i, enter);
          if (leave < 0 || ratio < best_ratio - kPivotTol ||
              (std::abs(ratio - best_ratio) <= kPivotTol && basis[i] < basis[leave])) {
            leave = i;
            best_ratio = ratio;
          }
        }
      }
      if (leave < 0) return Status::kUnbounded;
      pivot(leave, enter);
    }
  };

  // Phase 1: minimize the artificial mass.
  {
    const auto cost = [&](int j) { return is_artificial[j] ? 1.0 : 0.0; };
    if (run_phase(cost, true) == Status::kUnbounded)
      throw std::logic_error("lp: phase-1 cannot be unbounded");
    double art_mass = 0.0;
    for (int i = 0; i < m; ++i)
      if (is_artificial[basis[i]]) art_mass += tab(i, ncols);
    if (art_mass > kFeasTol) {
      res.status = Status::kInfeasible;
      for (int i = 0; i < m; ++i)
        if (is_artificial[basis[i]] && tab(i, ncols) > kFeasTol)
          res.infeasible_rows.push_back(spec.rows[basis[i] - n - nslack].tag);
      return res;
    }
    // Drive zero-valued artificials out where a real pivot exists.
    for (int i = 0; i < m; ++i) {
      if (!is_artificial[basis[i]]) continue;
      for (int j = 0; j < n + nslack; ++j) {
        if (std::abs(tab(i, j)) > kPivotTol) {
          pivot(i, j);
          break;
        }
      }
    }
  }

  // Phase 2 on the real objective.
  {
    const auto cost = [&](int j) { return j < n ? spec.objective(j) : 0.0; };
    const Status st = run_phase(cost, false);
    if (st == Status::kUnbounded) {
      res.status = Status::kUnbounded;
      return res;
    }
  }

  res.status = Status::kOptimal;
  res.x = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < m; ++i)
    if (basis[i] < n) res.x(basis[i]) = tab(i, ncols);
  res.value = spec.objective.dot(res.x);
  return res;
}

}  // namespace topdown::lp
