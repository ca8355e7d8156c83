#include <doctest.h>

#include <random>
#include <stdexcept>

#include "topdown/lp.hpp"
#include "topdown/oracle.hpp"
#include "topdown/solvers.hpp"

using namespace topdown;

namespace {

LeastSquaresProblem identity_problem(const std::vector<double>& target,
                                     std::size_t n) {
  LeastSquaresProblem p;
  p.query = Eigen::MatrixXd::Identity(target.size(), n);
  p.weight = Eigen::VectorXd::Ones(target.size());
  p.target = Eigen::Map<const Eigen::VectorXd>(target.data(), target.size());
  p.constraints = ConstraintSet(n);
  return p;
}

SparseRow sum_row(std::size_t n, double rhs, const std::string& tag = "sum") {
  SparseRow row;
  for (std::size_t j = 0; j < n; ++j) row.entries.emplace_back(j, 1.0);
  row.rhs = rhs;
  row.tag = tag;
  return row;
}

}  // namespace

TEST_CASE("simplex basics") {
  // min -x1 - x2 s.t. x1 + x2 <= 4, x1 <= 3.
  lp::Spec spec;
  spec.nvars = 2;
  spec.objective = Eigen::Vector2d(-1.0, -1.0);
  spec.rows.push_back({{{0, 1.0}, {1, 1.0}}, 4.0, false, "cap"});
  spec.rows.push_back({{{0, 1.0}}, 3.0, false, "x1cap"});
  const auto res = lp::solve(spec);
  REQUIRE(res.status == lp::Status::kOptimal);
  CHECK(res.value == doctest::Approx(-4.0));

  // Infeasible: x1 + x2 = 2 and x1 + x2 >= 5.
  lp::Spec bad;
  bad.nvars = 2;
  bad.objective = Eigen::Vector2d(0.0, 0.0);
  bad.rows.push_back({{{0, 1.0}, {1, 1.0}}, 2.0, true, "sum2"});
  bad.rows.push_back({{{0, -1.0}, {1, -1.0}}, -5.0, false, "min5"});
  const auto res2 = lp::solve(bad);
  CHECK(res2.status == lp::Status::kInfeasible);
  CHECK_FALSE(res2.infeasible_rows.empty());

  // Unbounded: min -x1, no caps.
  lp::Spec unb;
  unb.nvars = 1;
  unb.objective = Eigen::VectorXd::Constant(1, -1.0);
  CHECK(lp::solve(unb).status == lp::Status::kUnbounded);
}

TEST_CASE("nnls: coordinate projection under non-negativity") {
  auto p = identity_problem({3.0, -2.0}, 2);
  const auto sol = nnls_solve(p);
  CHECK(sol.x(0) == doctest::Approx(3.0));
  CHECK(sol.x(1) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(sol.max_violation <= 1e-6);
  CHECK(sol.stationarity_residual <= 1e-6);
}

TEST_CASE("nnls: equality-constrained projection has the closed form") {
  // min |x - m|^2 s.t. sum x = T: x = m + (T - sum m)/n.
  auto p = identity_problem({3.0, 2.0}, 2);
  p.constraints.add_equality(sum_row(2, 6.0));
  const auto sol = nnls_solve(p);
  CHECK(sol.x(0) == doctest::Approx(3.5));
  CHECK(sol.x(1) == doctest::Approx(2.5));
}

TEST_CASE("nnls: active bound with equality") {
  // Verified against a dense grid: minimizer of (x1+5)^2 + (x2-1)^2 on the
  // segment x1 + x2 = 2, x >= 0 sits at (0, 2).
  auto p = identity_problem({-5.0, 1.0}, 2);
  p.constraints.add_equality(sum_row(2, 2.0));
  const auto sol = nnls_solve(p);
  CHECK(sol.x(0) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(sol.x(1) == doctest::Approx(2.0));
  double best = 1e100;
  for (double x1 = 0.0; x1 <= 2.0; x1 += 1e-3) {
    const double v = (x1 + 5.0) * (x1 + 5.0) + (2.0 - x1 - 1.0) * (2.0 - x1 - 1.0);
    best = std::min(best, v);
  }
  CHECK(sol.objective == doctest::Approx(best).epsilon(1e-5));
}

TEST_CASE("nnls: infeasible region raises with the offending rows") {
  auto p = identity_problem({1.0, 1.0}, 2);
  p.constraints.add_equality(sum_row(2, 2.0, "sum2"));
  p.constraints.add_upper_bound({{{0, -1.0}, {1, -1.0}}, -5.0, "min5"});
  CHECK_THROWS_AS(nnls_solve(p), InfeasibleError);
}

TEST_CASE("nnls: weighted combination of two measurements") {
  // Two rows measure the same scalar with weights 4 and 1: the optimum is
  // the weighted mean (4*1 + 1*6)/5 = 2.
  LeastSquaresProblem p;
  p.query = Eigen::MatrixXd::Ones(2, 1);
  p.weight = Eigen::Vector2d(4.0, 1.0);
  p.target = Eigen::Vector2d(1.0, 6.0);
  p.constraints = ConstraintSet(1);
  const auto sol = nnls_solve(p);
  CHECK(sol.x(0) == doctest::Approx(2.0));
}

TEST_CASE("nnls objective is minimal among random feasible vertices") {
  std::mt19937 gen(19);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t n = 2 + gen() % 4;
    std::vector<double> target(n);
    for (auto& t : target) t = static_cast<double>(gen() % 17) - 8.0;
    auto p = identity_problem(target, n);
    const double total = static_cast<double>(gen() % 20);
    p.constraints.add_equality(sum_row(n, total));
    if (gen() % 2) p.constraints.add_upper_bound({{{0, 1.0}}, total / 2.0, "half"});
    const auto sol = nnls_solve(p);

    // Random feasible vertices via random LP objectives.
    for (int probe = 0; probe < 100; ++probe) {
      lp::Spec spec;
      spec.nvars = static_cast<int>(n);
      spec.objective = Eigen::VectorXd::Zero(n);
      for (std::size_t j = 0; j < n; ++j)
        spec.objective(j) = static_cast<double>(gen() % 21) - 10.0;
      for (const auto& row : p.constraints.equalities()) {
        lp::RowSpec r;
        for (const auto& [col, coef] : row.entries) r.terms.emplace_back(col, coef);
        r.rhs = row.rhs;
        r.equality = true;
        spec.rows.push_back(r);
      }
      for (const auto& row : p.constraints.upper_bounds()) {
        lp::RowSpec r;
        for (const auto& [col, coef] : row.entries) r.terms.emplace_back(col, coef);
        r.rhs = row.rhs;
        r.equality = false;
        spec.rows.push_back(r);
      }
      const auto vertex = lp::solve(spec);
      REQUIRE(vertex.status == lp::Status::kOptimal);
      const Eigen::VectorXd diff = p.query * vertex.x - p.target;
      const double obj = diff.dot(p.weight.asDiagonal() * diff);
      CHECK(sol.objective <= obj + 1e-6);
    }
  }
}

TEST_CASE("solve_tolerance: achievable prior passes need no slack") {
  ConstraintSet cs(2);
  cs.add_equality(sum_row(2, 10.0));
  Eigen::MatrixXd b = Eigen::MatrixXd::Ones(1, 2);
  Eigen::VectorXd v(1);
  v << 10.0;
  CHECK(solve_tolerance(cs, {{b, v}}) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("solve_tolerance: conflicting bound forces tau = 2") {
  // The earlier pass asked total = 10, but a lower bound forces total >= 12.
  ConstraintSet cs(2);
  cs.add_upper_bound({{{0, -1.0}, {1, -1.0}}, -12.0, "gq_min"});
  Eigen::MatrixXd b = Eigen::MatrixXd::Ones(1, 2);
  Eigen::VectorXd v(1);
  v << 10.0;
  CHECK(solve_tolerance(cs, {{b, v}}) == doctest::Approx(2.0));
}

TEST_CASE("round_solve: integral input is returned unchanged") {
  RounderProblem p;
  p.fractional_target = Eigen::Vector3d(2.0, 0.0, 5.0);
  p.constraints = ConstraintSet(3);
  p.constraints.add_equality(sum_row(3, 7.0));
  p.objective_rows = Eigen::MatrixXd::Identity(3, 3);
  const auto sol = round_solve(p);
  CHECK(sol.x == std::vector<std::int64_t>{2, 0, 5});
  CHECK(sol.objective == doctest::Approx(0.0));
}

TEST_CASE("round_solve: enumerated two-cell example") {
  // x = (0.6, 0.4) with a sum-to-1 row and the detailed objective: rounding
  // up the first cell costs 0.8 versus 1.2.
  RounderProblem p;
  p.fractional_target = Eigen::Vector2d(0.6, 0.4);
  p.constraints = ConstraintSet(2);
  p.constraints.add_equality(sum_row(2, 1.0));
  p.objective_rows = Eigen::MatrixXd::Identity(2, 2);
  const auto sol = round_solve(p);
  CHECK(sol.x == std::vector<std::int64_t>{1, 0});
  CHECK(sol.objective == doctest::Approx(0.8));
}

TEST_CASE("round_solve: exact ties round the earlier cell up") {
  RounderProblem p;
  p.fractional_target = Eigen::Vector2d(0.5, 0.5);
  p.constraints = ConstraintSet(2);
  p.constraints.add_equality(sum_row(2, 1.0));
  p.objective_rows = Eigen::MatrixXd::Identity(2, 2);
  const auto sol = round_solve(p);
  CHECK(sol.x == std::vector<std::int64_t>{1, 0});
}

TEST_CASE("round_solve: infeasible rounding names the unreachable row") {
  RounderProblem p;
  p.fractional_target = Eigen::Vector2d(0.5, 0.5);
  p.constraints = ConstraintSet(2);
  p.constraints.add_equality(sum_row(2, 4.0, "sum4"));  // needs +3 over the floor
  p.objective_rows = Eigen::MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(round_solve(p), InfeasibleError);
}

TEST_CASE("round_solve matches milp_oracle on random TUM-structured fixtures") {
  std::mt19937 gen(77);
  int nontrivial = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t children = 1 + gen() % 3;
    const std::size_t cells = 2 + gen() % 2;
    const std::size_t n = children * cells;  // at most 12 binaries
    RounderProblem p;
    p.constraints = ConstraintSet(n);
    Eigen::VectorXd xt(n);
    for (std::size_t j = 0; j < n; ++j)
      xt(j) = static_cast<double>(gen() % 4) + (gen() % 100) / 100.0;
    p.fractional_target = xt;

    // Aggregation rows per cell: children sum to a reachable parent value.
    for (std::size_t cell = 0; cell < cells; ++cell) {
      SparseRow row;
      double frac_mass = 0.0;
      double floor_sum = 0.0;
      for (std::size_t k = 0; k < children; ++k) {
        row.entries.emplace_back(k * cells + cell, 1.0);
        floor_sum += std::floor(xt(k * cells + cell));
        frac_mass += xt(k * cells + cell) - std::floor(xt(k * cells + cell));
      }
      row.rhs = floor_sum + std::floor(frac_mass + 0.5);
      row.tag = "agg" + std::to_string(cell);
      p.constraints.add_equality(std::move(row));
    }
    // Objective tree: per-child total plus detailed rows.
    Eigen::MatrixXd obj = Eigen::MatrixXd::Zero(children + n, n);
    for (std::size_t k = 0; k < children; ++k)
      for (std::size_t cell = 0; cell < cells; ++cell) obj(k, k * cells + cell) = 1.0;
    obj.bottomRows(n) = Eigen::MatrixXd::Identity(n, n);
    p.objective_rows = obj;

    const auto oracle = milp_oracle(p);
    if (!oracle.feasible) {
      CHECK_THROWS_AS(round_solve(p), InfeasibleError);
      continue;
    }
    const auto sol = round_solve(p);
    CHECK(sol.objective == doctest::Approx(oracle.objective).epsilon(1e-7));
    // The chosen increments are one of the oracle's optima.
    bool member = false;
    for (const auto& y : oracle.optima) member = member || y == sol.increments;
    CHECK(member);
    // Elementwise floor/ceil containment.
    for (std::size_t j = 0; j < n; ++j) {
      const double v = p.fractional_target(j);
      CHECK(sol.x[j] >= static_cast<std::int64_t>(std::floor(v)));
      CHECK(sol.x[j] <= static_cast<std::int64_t>(std::ceil(v)));
    }
    ++nontrivial;
  }
  CHECK(nontrivial > 150);
}

TEST_CASE("round_solve respects pinned earlier passes") {
  // Pass 1 pinned the total to 2; the detailed pass must keep it.
  RounderProblem p;
  p.fractional_target = Eigen::Vector3d(0.9, 0.9, 0.2);
  p.constraints = ConstraintSet(3);
  p.objective_rows = Eigen::MatrixXd::Identity(3, 3);
  Eigen::MatrixXd total = Eigen::MatrixXd::Ones(1, 3);
  Eigen::VectorXd value(1);
  value << 2.0;
  p.pinned.emplace_back(total, value);
  const auto sol = round_solve(p);
  CHECK(sol.x[0] + sol.x[1] + sol.x[2] == 2);
  CHECK(sol.x == std::vector<std::int64_t>{1, 1, 0});
}
