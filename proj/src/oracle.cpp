#include "topdown/oracle.hpp"

#include <cmath>
#include <stdexcept>

namespace topdown {

OracleResult milp_oracle(const RounderProblem& p) {
  const std::size_t n = p.constraints.dimension();
  if (n > 16) throw std::invalid_argument("milp_oracle: more than 16 binary increments");
  if (p.fractional_target.size() != static_cast<Eigen::Index>(n))
    throw std::invalid_argument("milp_oracle: target length mismatch");

  std::vector<double> frac(n);
  std::vector<double> floor_d(n);
  for (std::size_t j = 0; j < n; ++j) {
    double v = p.fractional_target(j);
    if (v < 0 && v > -1e-6) v = 0.0;
    const double r = std::round(v);
    if (std::abs(v - r) <= 1e-7) v = r;
    floor_d[j] = std::floor(v);
    frac[j] = v - floor_d[j];
  }

  OracleResult out;
  const std::uint32_t limit = 1u << n;
  std::vector<int> y(n);
  for (std::uint32_t mask = 0; mask < limit; ++mask) {
    for (std::size_t j = 0; j < n; ++j) y[j] = (mask >> j) & 1u;

    const auto value_of = [&](const SparseRow& row) {
      double v = -row.rhs;
      for (const auto& [col, coef] : row.entries) v += coef * (floor_d[col] + y[col]);
      return v;
    };
    bool ok = true;
    for (const auto& row : p.constraints.equalities())
      if (std::abs(value_of(row)) > 1e-6) {
        ok = false;
        break;
      }
    if (ok)
      for (const auto& row : p.constraints.upper_bounds())
        if (value_of(row) > 1e-6) {
          ok = false;
          break;
        }
    if (ok)
      for (const auto& [rows, values] : p.pinned) {
        for (Eigen::Index i = 0; ok && i < rows.rows(); ++i) {
          double v = -values(i);
          for (std::size_t j = 0; j < n; ++j) v += rows(i, j) * (floor_d[j] + y[j]);
          if (std::abs(v) > 1e-6) ok = false;
        }
        if (!ok) break;
      }
    if (!ok) continue;

    double obj = 0.0;
    for (Eigen::Index r = 0; r < p.objective_rows.rows(); ++r) {
      double v = 0.0;
      for (std::size_t j = 0; j < n; ++j) v += p.objective_rows(r, j) * (frac[j] - y[j]);
      obj += std::abs(v);
    }
    if (!out.feasible || obj < out.objective - 1e-9) {
      out.feasible = true;
      out.objective = obj;
      out.optima.clear();
      out.optima.push_back(y);
    } else if (std::abs(obj - out.objective) <= 1e-9) {
      out.optima.push_back(y);
    }
  }
  return out;
}

}  // namespace topdown
