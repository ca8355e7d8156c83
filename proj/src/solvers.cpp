#include "topdown/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

#include "topdown/lp.hpp"

namespace topdown {

namespace {

constexpr double kFeasTol = 1e-6;
constexpr double kActiveTol = 1e-9;

struct DenseRows {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
  std::vector<std::string> tags;
};

DenseRows densify(const std::vector<SparseRow>& rows, std::size_t dim) {
  DenseRows out;
  out.a = Eigen::MatrixXd::Zero(rows.size(), dim);
  out.b = Eigen::VectorXd::Zero(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (const auto& [col, coef] : rows[i].entries) out.a(i, col) += coef;
    out.b(i) = rows[i].rhs;
    out.tags.push_back(rows[i].tag);
  }
  return out;
}

// Inequality system A x <= b including the non-negativity rows, so the
// active-set solver can treat every inequality uniformly.
struct IneqSystem {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
  std::vector<std::string> tags;
};

IneqSystem build_inequalities(const LeastSquaresProblem& p) {
  const std::size_t n = p.constraints.dimension();
  const DenseRows ub = densify(p.constraints.upper_bounds(), n);
  std::size_t extra = 0;
  for (const auto& blk : p.interval_blocks) extra += 2 * blk.rows.rows();
  IneqSystem sys;
  sys.a = Eigen::MatrixXd::Zero(ub.a.rows() + extra + n, n);
  sys.b = Eigen::VectorXd::Zero(sys.a.rows());
  std::size_t at = 0;
  for (Eigen::Index i = 0; i < ub.a.rows(); ++i, ++at) {
    sys.a.row(at) = ub.a.row(i);
    sys.b(at) = ub.b(i);
    sys.tags.push_back(ub.tags[i]);
  }
  for (std::size_t blk_i = 0; blk_i < p.interval_blocks.size(); ++blk_i) {
    const auto& blk = p.interval_blocks[blk_i];
    for (Eigen::Index i = 0; i < blk.rows.rows(); ++i) {
      sys.a.row(at) = blk.rows.row(i);
      sys.b(at) = blk.center(i) + blk.radius;
      sys.tags.push_back("pass_block" + std::to_string(blk_i) + "+row" + std::to_string(i));
      ++at;
      sys.a.row(at) = -blk.rows.row(i);
      sys.b(at) = -(blk.center(i) - blk.radius);
      sys.tags.push_back("pass_block" + std::to_string(blk_i) + "-row" + std::to_string(i));
      ++at;
    }
  }
  for (std::size_t j = 0; j < n; ++j, ++at) {
    sys.a(at, j) = -1.0;
    sys.b(at) = 0.0;
    sys.tags.push_back("nonneg[" + std::to_string(j) + "]");
  }
  return sys;
}

// Feasibility probe via the simplex; returns a vertex of the region.
Eigen::VectorXd feasible_start(const DenseRows& eq, const IneqSystem& ineq, std::size_t n) {
  lp::Spec spec;
  spec.nvars = static_cast<int>(n);
  spec.objective = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < eq.a.rows(); ++i) {
    lp::RowSpec r;
    for (std::size_t j = 0; j < n; ++j)
      if (eq.a(i, j) != 0.0) r.terms.emplace_back(static_cast<int>(j), eq.a(i, j));
    r.rhs = eq.b(i);
    r.equality = true;
    r.tag = eq.tags[i];
    spec.rows.push_back(std::move(r));
  }
  for (Eigen::Index i = 0; i < ineq.a.rows(); ++i) {
    if (ineq.tags[i].rfind("nonneg[", 0) == 0) continue;  // native in the LP
    lp::RowSpec r;
    for (std::size_t j = 0; j < n; ++j)
      if (ineq.a(i, j) != 0.0) r.terms.emplace_back(static_cast<int>(j), ineq.a(i, j));
    r.rhs = ineq.b(i);
    r.equality = false;
    r.tag = ineq.tags[i];
    spec.rows.push_back(std::move(r));
  }
  const lp::Result res = lp::solve(spec);
  if (res.status != lp::Status::kOptimal) {
    std::string what = "least-squares problem is infeasible";
    if (!res.infeasible_rows.empty()) {
      what += "; unsatisfiable rows:";
      for (const auto& t : res.infeasible_rows) what += " " + t;
    }
    throw InfeasibleError(what, res.infeasible_rows);
  }
  return res.x;
}

}  // namespace

RealSolution nnls_solve(const LeastSquaresProblem& p) {
  const std::size_t n = p.constraints.dimension();
  if (p.query.cols() != static_cast<Eigen::Index>(n))
    throw std::invalid_argument("nnls: query matrix width != constraint dimension");
  if (p.query.rows() != p.target.size() || p.query.rows() != p.weight.size())
    throw std::invalid_argument("nnls: query/target/weight sizes disagree");
  for (Eigen::Index i = 0; i < p.weight.size(); ++i)
    if (!(p.weight(i) > 0)) throw std::invalid_argument("nnls: weights must be positive");

  const DenseRows eq = densify(p.constraints.equalities(), n);
  const IneqSystem ineq = build_inequalities(p);

  // H/g of the quadratic; a hair of Tikhonov keeps the KKT systems tame and
  // is polished away on the final active face.
  const Eigen::MatrixXd wq = p.weight.asDiagonal() * p.query;
  const Eigen::MatrixXd h0 = 2.0 * p.query.transpose() * wq;
  const Eigen::VectorXd g0 = -2.0 * wq.transpose() * p.target;
  const double scale = std::max(1.0, h0.trace() / std::max<std::size_t>(n, 1));
  const double mu = 1e-10 * scale;
  Eigen::MatrixXd h = h0;
  h.diagonal().array() += mu;

  const auto objective = [&](const Eigen::VectorXd& x) {
    const Eigen::VectorXd r = p.query * x - p.target;
    return r.dot(p.weight.asDiagonal() * r);
  };

  // The equality-face minimizer is the answer whenever it already satisfies
  // the inequalities; only clipped problems need the vertex start.
  Eigen::VectorXd x;
  bool have_start = false;
  {
    const std::size_t me = eq.a.rows();
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + me, n + me);
    kkt.topLeftCorner(n, n) = h;
    kkt.block(n, 0, me, n) = eq.a;
    kkt.block(0, n, n, me) = eq.a.transpose();
    Eigen::VectorXd rhs(n + me);
    rhs.head(n) = -g0;
    rhs.tail(me) = eq.b;
    const Eigen::VectorXd cand = kkt.completeOrthogonalDecomposition().solve(rhs).head(n);
    bool ok = me == 0 || (eq.a * cand - eq.b).lpNorm<Eigen::Infinity>() <= 1e-9;
    for (Eigen::Index i = 0; ok && i < ineq.a.rows(); ++i)
      ok = ineq.a.row(i).dot(cand) <= ineq.b(i) + kActiveTol;
    if (ok) {
      x = cand;
      have_start = true;
    }
  }
  if (!have_start) x = feasible_start(eq, ineq, n);

  std::vector<int> working;  // active inequality rows
  for (Eigen::Index i = 0; i < ineq.a.rows(); ++i)
    if (std::abs(ineq.a.row(i).dot(x) - ineq.b(i)) <= kActiveTol)
      working.push_back(static_cast<int>(i));

  const int iter_cap = 200 + 20 * static_cast<int>(n + ineq.a.rows() + eq.a.rows());
  RealSolution sol;
  Eigen::VectorXd multipliers;

  for (sol.iterations = 0;; ++sol.iterations) {
    if (sol.iterations > iter_cap) {
      const Eigen::VectorXd grad = h0 * x + g0;
      throw std::runtime_error(
          "nnls: no convergence after " + std::to_string(iter_cap) +
          " iterations; |grad|=" + std::to_string(grad.norm()) +
          " objective=" + std::to_string(objective(x)));
    }
    const std::size_t w = working.size();
    const std::size_t me = eq.a.rows();
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + me + w, n + me + w);
    kkt.topLeftCorner(n, n) = h;
    for (std::size_t i = 0; i < me; ++i) {
      kkt.block(n + i, 0, 1, n) = eq.a.row(i);
      kkt.block(0, n + i, n, 1) = eq.a.row(i).transpose();
    }
    for (std::size_t i = 0; i < w; ++i) {
      kkt.block(n + me + i, 0, 1, n) = ineq.a.row(working[i]);
      kkt.block(0, n + me + i, n, 1) = ineq.a.row(working[i]).transpose();
    }
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + me + w);
    rhs.head(n) = -(h * x + g0);
    const Eigen::VectorXd step =
        kkt.completeOrthogonalDecomposition().solve(rhs);
    const Eigen::VectorXd pdir = step.head(n);
    multipliers = step.tail(me + w);

    if (pdir.lpNorm<Eigen::Infinity>() <= 1e-10 * std::max(1.0, x.lpNorm<Eigen::Infinity>())) {
      // Stationary on the working face; drop the first inequality with a
      // negative multiplier, or stop.
      int drop = -1;
      for (std::size_t i = 0; i < w; ++i) {
        if (multipliers(me + i) < -1e-8 * scale) {
          drop = static_cast<int>(i);
          break;
        }
      }
      if (drop < 0) break;
      working.erase(working.begin() + drop);
      continue;
    }

    double alpha = 1.0;
    int blocking = -1;
    for (Eigen::Index i = 0; i < ineq.a.rows(); ++i) {
      if (std::count(working.begin(), working.end(), static_cast<int>(i))) continue;
      const double adp = ineq.a.row(i).dot(pdir);
      if (adp > kActiveTol) {
        const double room = ineq.b(i) - ineq.a.row(i).dot(x);
        const double limit = std::max(0.0, room) / adp;
        if (limit < alpha - 1e-12) {
          alpha = limit;
          blocking = static_cast<int>(i);
        }
      }
    }
    x += alpha * pdir;
    if (blocking >= 0)
      working.insert(std::lower_bound(working.begin(), working.end(), blocking), blocking);
  }

  // Polish: exact (unregularized) stationary point on the final face.
  {
    const std::size_t w = working.size();
    const std::size_t me = eq.a.rows();
    Eigen::MatrixXd face(me + w, n);
    Eigen::VectorXd face_b(me + w);
    face.topRows(me) = eq.a;
    face_b.head(me) = eq.b;
    for (std::size_t i = 0; i < w; ++i) {
      face.row(me + i) = ineq.a.row(working[i]);
      face_b(me + i) = ineq.b(working[i]);
    }
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + me + w, n + me + w);
    kkt.topLeftCorner(n, n) = h0;
    kkt.block(n, 0, me + w, n) = face;
    kkt.block(0, n, n, me + w) = face.transpose();
    Eigen::VectorXd rhs(n + me + w);
    rhs.head(n) = -g0;
    rhs.tail(me + w) = face_b;
    const Eigen::VectorXd polished =
        kkt.completeOrthogonalDecomposition().solve(rhs).head(n);
    bool ok = (face * polished - face_b).lpNorm<Eigen::Infinity>() <= 1e-8;
    for (Eigen::Index i = 0; ok && i < ineq.a.rows(); ++i)
      ok = ineq.a.row(i).dot(polished) <= ineq.b(i) + 1e-9;
    if (ok && objective(polished) <= objective(x) + 1e-9) x = polished;
  }

  sol.x = x;
  sol.objective = objective(x);
  sol.status = "optimal";
  double viol = 0.0;
  for (Eigen::Index i = 0; i < eq.a.rows(); ++i)
    viol = std::max(viol, std::abs(eq.a.row(i).dot(x) - eq.b(i)));
  for (Eigen::Index i = 0; i < ineq.a.rows(); ++i)
    viol = std::max(viol, ineq.a.row(i).dot(x) - ineq.b(i));
  sol.max_violation = std::max(0.0, viol);

  // Stationarity: gradient balanced by the active rows' multipliers.
  {
    const std::size_t w = working.size();
    const std::size_t me = eq.a.rows();
    Eigen::MatrixXd act(me + w, n);
    act.topRows(me) = eq.a;
    for (std::size_t i = 0; i < w; ++i) act.row(me + i) = ineq.a.row(working[i]);
    const Eigen::VectorXd grad = h0 * x + g0;
    Eigen::VectorXd lam;
    if (me + w > 0) {
      lam = act.transpose().completeOrthogonalDecomposition().solve(-grad);
      // Inequality multipliers must be non-negative to certify optimality.
      for (std::size_t i = 0; i < w; ++i) lam(me + i) = std::max(0.0, lam(me + i));
      sol.stationarity_residual =
          (grad + act.transpose() * lam).norm() / std::max(1.0, grad.norm());
    } else {
      sol.stationarity_residual = grad.norm() / std::max(1.0, scale);
    }
  }
  return sol;
}

double solve_tolerance(const ConstraintSet& cs,
                       const std::vector<std::pair<Eigen::MatrixXd, Eigen::VectorXd>>& blocks) {
  const std::size_t n = cs.dimension();
  lp::Spec spec;
  spec.nvars = static_cast<int>(n) + 1;  // x, tau
  const int tau = static_cast<int>(n);
  spec.objective = Eigen::VectorXd::Zero(n + 1);
  spec.objective(tau) = 1.0;
  const auto add_sparse = [&](const SparseRow& row, bool equality) {
    lp::RowSpec r;
    for (const auto& [col, coef] : row.entries) r.terms.emplace_back(static_cast<int>(col), coef);
    r.rhs = row.rhs;
    r.equality = equality;
    r.tag = row.tag;
    spec.rows.push_back(std::move(r));
  };
  for (const auto& row : cs.equalities()) add_sparse(row, true);
  for (const auto& row : cs.upper_bounds()) add_sparse(row, false);
  for (const auto& [b, v] : blocks) {
    for (Eigen::Index i = 0; i < b.rows(); ++i) {
      lp::RowSpec up, dn;
      for (std::size_t j = 0; j < n; ++j) {
        if (b(i, j) != 0.0) {
          up.terms.emplace_back(static_cast<int>(j), b(i, j));
          dn.terms.emplace_back(static_cast<int>(j), -b(i, j));
        }
      }
      up.terms.emplace_back(tau, -1.0);
      up.rhs = v(i);
      up.equality = false;
      dn.terms.emplace_back(tau, -1.0);
      dn.rhs = -v(i);
      dn.equality = false;
      spec.rows.push_back(std::move(up));
      spec.rows.push_back(std::move(dn));
    }
  }
  const lp::Result res = lp::solve(spec);
  if (res.status != lp::Status::kOptimal)
    throw std::runtime_error("tolerance subproblem unsolvable despite feasible hard constraints");
  return std::max(0.0, res.value);
}

namespace {

// The rounder in increment space: y in {0,1}^n with integer-rebased rows.
struct YProblem {
  std::size_t n = 0;
  Eigen::VectorXd frac;  // fractional parts of x-tilde
  std::vector<std::int64_t> floor;
  // eq_a y = eq_b, ub_a y <= ub_b over y.
  Eigen::MatrixXd eq_a, ub_a;
  Eigen::VectorXd eq_b, ub_b;
  std::vector<std::string> eq_tags, ub_tags;
  Eigen::MatrixXd obj;        // objective rows Q
  Eigen::VectorXd obj_target; // Q frac
};

YProblem build_y_problem(const RounderProblem& p) {
  const std::size_t n = p.constraints.dimension();
  if (p.fractional_target.size() != static_cast<Eigen::Index>(n))
    throw std::invalid_argument("rounder: target length != constraint dimension");
  YProblem y;
  y.n = n;
  y.frac = Eigen::VectorXd(n);
  y.floor.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    double v = p.fractional_target(j);
    if (v < 0 && v > -kFeasTol) v = 0.0;
    if (v < 0) throw std::invalid_argument("rounder: negative target cell " + std::to_string(j));
    // Snap near-integers so solver jitter cannot shift the floor.
    const double r = std::round(v);
    if (std::abs(v - r) <= 1e-7) v = r;
    y.floor[j] = static_cast<std::int64_t>(std::floor(v));
    y.frac(j) = v - static_cast<double>(y.floor[j]);
  }

  const DenseRows eq = densify(p.constraints.equalities(), n);
  const DenseRows ub = densify(p.constraints.upper_bounds(), n);
  std::size_t pinned_rows = 0;
  for (const auto& [b, v] : p.pinned) {
    (void)v;
    pinned_rows += b.rows();
  }
  y.eq_a = Eigen::MatrixXd::Zero(eq.a.rows() + pinned_rows, n);
  y.eq_b = Eigen::VectorXd::Zero(y.eq_a.rows());
  Eigen::VectorXd floor_d(n);
  for (std::size_t j = 0; j < n; ++j) floor_d(j) = static_cast<double>(y.floor[j]);

  std::size_t at = 0;
  const auto add_eq = [&](const Eigen::RowVectorXd& row, double rhs, const std::string& tag) {
    const double shifted = rhs - row.dot(floor_d);
    if (std::abs(shifted - std::round(shifted)) > kFeasTol)
      throw std::runtime_error("rounder: constraint '" + tag +
                               "' is unreachable by binary increments (needs " +
                               std::to_string(shifted) + ")");
    y.eq_a.row(at) = row;
    y.eq_b(at) = std::round(shifted);
    y.eq_tags.push_back(tag);
    ++at;
  };
  for (Eigen::Index i = 0; i < eq.a.rows(); ++i) add_eq(eq.a.row(i), eq.b(i), eq.tags[i]);
  for (std::size_t blk = 0; blk < p.pinned.size(); ++blk) {
    const auto& [b, v] = p.pinned[blk];
    for (Eigen::Index i = 0; i < b.rows(); ++i)
      add_eq(b.row(i), v(i), "pinned_pass" + std::to_string(blk) + "[" + std::to_string(i) + "]");
  }

  y.ub_a = Eigen::MatrixXd::Zero(ub.a.rows(), n);
  y.ub_b = Eigen::VectorXd::Zero(ub.a.rows());
  for (Eigen::Index i = 0; i < ub.a.rows(); ++i) {
    y.ub_a.row(i) = ub.a.row(i);
    y.ub_b(i) = ub.b(i) - ub.a.row(i).dot(floor_d);
    y.ub_tags.push_back(ub.tags[i]);
  }

  y.obj = p.objective_rows;
  if (y.obj.cols() != static_cast<Eigen::Index>(n))
    throw std::invalid_argument("rounder: objective width mismatch");
  y.obj_target = y.obj * y.frac;
  return y;
}

struct YRelaxation {
  lp::Spec spec;
  double constant = 0.0;  // objective offset from linearized rows
};

// LP relaxation over (y, u): min 1'u + c'y, u >= |target - Q y| for the
// multi-cell rows. A row touching a single cell is exact at binary points
// as the linear cost |t| + y (|t - q| - |t|), which keeps the relaxation
// small and its vertices integral under TUM structure.
YRelaxation build_relaxation(const YProblem& y, const std::vector<int>& fixed) {
  YRelaxation rel;
  const int n = static_cast<int>(y.n);
  std::vector<int> wide_rows;
  for (Eigen::Index r = 0; r < y.obj.rows(); ++r) {
    int nonzeros = 0;
    for (int j = 0; j < n; ++j) nonzeros += y.obj(r, j) != 0.0;
    if (nonzeros > 1) wide_rows.push_back(static_cast<int>(r));
  }
  const int nu = static_cast<int>(wide_rows.size());
  rel.spec.nvars = n + nu;
  rel.spec.objective = Eigen::VectorXd::Zero(rel.spec.nvars);
  for (int u = 0; u < nu; ++u) rel.spec.objective(n + u) = 1.0;
  for (Eigen::Index r = 0; r < y.obj.rows(); ++r) {
    int col = -1;
    for (int j = 0; j < n && col < 0; ++j)
      if (y.obj(r, j) != 0.0) col = j;
    if (col < 0) {
      rel.constant += std::abs(y.obj_target(r));
      continue;
    }
    if (std::count(wide_rows.begin(), wide_rows.end(), static_cast<int>(r))) continue;
    const double t = y.obj_target(r), q = y.obj(r, col);
    rel.constant += std::abs(t);
    rel.spec.objective(col) += std::abs(t - q) - std::abs(t);
  }

  const auto add_row = [&](const Eigen::RowVectorXd& row, double rhs, bool equality,
                           const std::string& tag) {
    lp::RowSpec spec_row;
    for (int j = 0; j < n; ++j)
      if (row(j) != 0.0) spec_row.terms.emplace_back(j, row(j));
    spec_row.rhs = rhs;
    spec_row.equality = equality;
    spec_row.tag = tag;
    rel.spec.rows.push_back(std::move(spec_row));
  };
  for (Eigen::Index i = 0; i < y.eq_a.rows(); ++i)
    add_row(y.eq_a.row(i), y.eq_b(i), true, y.eq_tags[i]);
  for (Eigen::Index i = 0; i < y.ub_a.rows(); ++i)
    add_row(y.ub_a.row(i), y.ub_b(i), false, y.ub_tags[i]);
  for (int j = 0; j < n; ++j) {
    lp::RowSpec cap;
    cap.terms.emplace_back(j, 1.0);
    cap.rhs = 1.0;
    cap.equality = false;
    cap.tag = "binary_cap[" + std::to_string(j) + "]";
    rel.spec.rows.push_back(std::move(cap));
  }
  for (int u = 0; u < nu; ++u) {
    const int r = wide_rows[u];
    lp::RowSpec up, dn;
    for (int j = 0; j < n; ++j) {
      const double q = y.obj(r, j);
      if (q != 0.0) {
        up.terms.emplace_back(j, -q);
        dn.terms.emplace_back(j, q);
      }
    }
    up.terms.emplace_back(n + u, -1.0);
    up.rhs = -y.obj_target(r);
    up.equality = false;
    up.tag = "obj_abs-" + std::to_string(r);
    dn.terms.emplace_back(n + u, -1.0);
    dn.rhs = y.obj_target(r);
    dn.equality = false;
    dn.tag = "obj_abs+" + std::to_string(r);
    rel.spec.rows.push_back(std::move(up));
    rel.spec.rows.push_back(std::move(dn));
  }
  for (std::size_t j = 0; j < y.n; ++j) {
    if (fixed[j] < 0) continue;
    lp::RowSpec fix;
    fix.terms.emplace_back(static_cast<int>(j), 1.0);
    fix.rhs = static_cast<double>(fixed[j]);
    fix.equality = true;
    fix.tag = "fix[" + std::to_string(j) + "]";
    rel.spec.rows.push_back(std::move(fix));
  }
  return rel;
}

struct BnbResult {
  bool feasible = false;
  double value = std::numeric_limits<double>::infinity();
  std::vector<int> y;
};

double exact_objective(const YProblem& y, const std::vector<int>& yy) {
  Eigen::VectorXd yv(y.n);
  for (std::size_t j = 0; j < y.n; ++j) yv(j) = yy[j];
  return (y.obj_target - y.obj * yv).lpNorm<1>();
}

// LP-based branch and bound on the binary increments; deterministic
// lowest-index branching, one-branch-first order.
BnbResult branch_and_bound(const YProblem& y, std::vector<int> fixed, double cutoff) {
  BnbResult best;
  const std::function<void(std::vector<int>&)> recurse = [&](std::vector<int>& fix) {
    const YRelaxation rel = build_relaxation(y, fix);
    const lp::Result res = lp::solve(rel.spec);
    if (res.status != lp::Status::kOptimal) return;
    if (res.value + rel.constant > std::min(cutoff, best.value) + 1e-9) return;
    int branch = -1;
    for (std::size_t j = 0; j < y.n; ++j) {
      if (fix[j] >= 0) continue;
      const double v = res.x(static_cast<Eigen::Index>(j));
      if (std::abs(v - std::round(v)) > 1e-7) {
        branch = static_cast<int>(j);
        break;
      }
    }
    if (branch < 0) {
      std::vector<int> yy(y.n, 0);
      for (std::size_t j = 0; j < y.n; ++j)
        yy[j] = fix[j] >= 0 ? fix[j] : static_cast<int>(std::llround(res.x(j)));
      const double exact = exact_objective(y, yy);
      if (!best.feasible || exact < best.value - 1e-9) {
        best.feasible = true;
        best.value = exact;
        best.y = std::move(yy);
      }
      return;
    }
    for (const int v : {1, 0}) {
      fix[branch] = v;
      recurse(fix);
      fix[branch] = -1;
    }
  };
  recurse(fixed);
  return best;
}

}  // namespace

IntegerSolution round_solve(const RounderProblem& p) {
  const YProblem y = build_y_problem(p);
  const double inf = std::numeric_limits<double>::infinity();

  std::vector<int> free_all(y.n, -1);
  const BnbResult base = branch_and_bound(y, free_all, inf);
  if (!base.feasible) {
    // Re-run the bare relaxation to name the unsatisfiable rows.
    const YRelaxation rel = build_relaxation(y, free_all);
    const lp::Result res = lp::solve(rel.spec);
    std::string what = "rounding infeasible";
    if (!res.infeasible_rows.empty()) {
      what += "; unreachable rows:";
      for (const auto& t : res.infeasible_rows) what += " " + t;
    }
    throw InfeasibleError(what, res.infeasible_rows);
  }

  // Deterministic tie handling: keep the increment pattern that rounds the
  // earliest cells up among all optima. The probe per coordinate is skipped
  // on larger instances, where the simplex pivoting order already fixes the
  // outcome.
  std::vector<int> chosen = base.y;
  if (y.n <= 24) {
    std::vector<int> fixed(y.n, -1);
    for (std::size_t j = 0; j < y.n; ++j) {
      if (chosen[j] == 1) {  // already rounds up; keep and pin
        fixed[j] = 1;
        continue;
      }
      fixed[j] = 1;
      const BnbResult with_one = branch_and_bound(y, fixed, base.value + 1e-7);
      if (with_one.feasible && with_one.value <= base.value + 1e-7) {
        chosen = with_one.y;
      } else {
        fixed[j] = 0;
      }
    }
  }

  IntegerSolution out;
  out.increments = chosen;
  out.x.resize(y.n);
  for (std::size_t j = 0; j < y.n; ++j) out.x[j] = y.floor[j] + chosen[j];
  out.objective = exact_objective(y, chosen);
  return out;
}

}  // namespace topdown
