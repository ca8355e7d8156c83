#include "topdown/constraints.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>

namespace topdown {

void ConstraintSet::add_equality(SparseRow row) {
  for (const auto& [col, coef] : row.entries) {
    (void)coef;
    if (col >= dimension_) throw std::invalid_argument("constraint column out of range");
  }
  equalities_.push_back(std::move(row));
}

void ConstraintSet::add_upper_bound(SparseRow row) {
  for (const auto& [col, coef] : row.entries) {
    (void)coef;
    if (col >= dimension_) throw std::invalid_argument("constraint column out of range");
  }
  upper_bounds_.push_back(std::move(row));
}

bool check_feasible(std::span<const double> x, const ConstraintSet& cs, double tol,
                    std::string* witness) {
  if (x.size() != cs.dimension()) throw std::invalid_argument("check_feasible: dimension mismatch");
  for (const auto& row : cs.equalities()) {
    double v = -row.rhs;
    for (const auto& [col, coef] : row.entries) v += coef * x[col];
    if (std::abs(v) > tol) {
      if (witness) *witness = row.tag;
      return false;
    }
  }
  for (const auto& row : cs.upper_bounds()) {
    double v = -row.rhs;
    for (const auto& [col, coef] : row.entries) v += coef * x[col];
    if (v > tol) {
      if (witness) *witness = row.tag;
      return false;
    }
  }
  return true;
}

bool check_feasible(std::span<const std::int64_t> x, const ConstraintSet& cs,
                    std::string* witness) {
  if (x.size() != cs.dimension()) throw std::invalid_argument("check_feasible: dimension mismatch");
  const auto exact = [&](const SparseRow& row) {
    std::int64_t v = 0;
    for (const auto& [col, coef] : row.entries)
      v += static_cast<std::int64_t>(std::llround(coef)) * x[col];
    return v - static_cast<std::int64_t>(std::llround(row.rhs));
  };
  for (const auto& row : cs.equalities()) {
    if (exact(row) != 0) {
      if (witness) *witness = row.tag;
      return false;
    }
  }
  for (const auto& row : cs.upper_bounds()) {
    if (exact(row) > 0) {
      if (witness) *witness = row.tag;
      return false;
    }
  }
  return true;
}

std::vector<std::size_t> StructuralZeroSet::forbidden_cells(const Schema& schema) const {
  std::vector<std::size_t> cells;
  for (std::size_t cell = 0; cell < schema.cell_count(); ++cell) {
    const auto idx = schema.unflatten_index(cell);
    for (const auto& pattern : patterns) {
      bool all = !pattern.all_of.empty();
      for (const auto& cond : pattern.all_of) {
        const std::size_t a = schema.attribute_index(cond.attribute);
        const std::string& label = schema.attributes()[a].levels[idx[a]];
        if (std::find(cond.levels.begin(), cond.levels.end(), label) == cond.levels.end()) {
          all = false;
          break;
        }
      }
      if (all) {
        cells.push_back(cell);
        break;
      }
    }
  }
  return cells;
}

namespace {

std::vector<std::string> effective_gq_types(const Schema& schema, const InvariantSpec& inv) {
  if (!inv.gq_types.empty()) return inv.gq_types;
  if (inv.gq_attribute.empty()) return {};
  std::vector<std::string> types;
  const auto& levels = schema.attributes()[schema.attribute_index(inv.gq_attribute)].levels;
  for (const auto& level : levels) {
    if (inv.householder_attribute == inv.gq_attribute && level == inv.householder_level) continue;
    types.push_back(level);
  }
  return types;
}

std::vector<std::size_t> cells_with_level(const Schema& schema, const std::string& attribute,
                                          const std::string& level) {
  const std::size_t a = schema.attribute_index(attribute);
  const std::size_t want = schema.level_index(a, level);
  std::vector<std::size_t> cells;
  for (std::size_t cell = 0; cell < schema.cell_count(); ++cell)
    if (schema.unflatten_index(cell)[a] == want) cells.push_back(cell);
  return cells;
}

// Emits the invariant and structural-zero rows for one node into `cs`,
// offsetting columns by `offset` (stacked child spaces).
void add_node_rows(ConstraintSet& cs, const Spine& spine, int node, const Schema& schema,
                   const InvariantSpec& inv, const StructuralZeroSet& zeros,
                   std::int64_t confidential_total, std::size_t offset, bool include_state_total) {
  const GeoNode& n = spine.node(node);
  const std::size_t c = schema.cell_count();

  for (const std::size_t cell : zeros.forbidden_cells(schema)) {
    SparseRow row;
    row.entries = {{offset + cell, 1.0}};
    row.rhs = 0.0;
    row.tag = "zero[" + n.id + ":cell" + std::to_string(cell) + "]";
    cs.add_equality(std::move(row));
  }

  if (include_state_total && inv.state_total_level >= 0 && n.level <= inv.state_total_level) {
    SparseRow row;
    for (std::size_t cell = 0; cell < c; ++cell) row.entries.emplace_back(offset + cell, 1.0);
    row.rhs = static_cast<double>(confidential_total);
    row.tag = "state_total[" + n.id + "]";
    cs.add_equality(std::move(row));
  }

  if (inv.housing_unit_total_level >= 0 && n.level <= inv.housing_unit_total_level) {
    SparseRow row;
    for (std::size_t cell = 0; cell < c; ++cell) row.entries.emplace_back(offset + cell, 1.0);
    row.rhs = static_cast<double>(n.housing_units);
    row.tag = "housing_unit_total[" + n.id + "]";
    cs.add_equality(std::move(row));
  }

  if (inv.occupied_gq_level >= 0 && n.level <= inv.occupied_gq_level) {
    for (const auto& type : effective_gq_types(schema, inv)) {
      const auto cells = cells_with_level(schema, inv.gq_attribute, type);
      const auto it = n.occupied_gq.find(type);
      const std::int64_t count = it == n.occupied_gq.end() ? 0 : it->second;
      SparseRow row;
      if (count > 0) {
        // At least one person per occupied facility: lower bound as a
        // negated upper bound.
        for (const std::size_t cell : cells) row.entries.emplace_back(offset + cell, -1.0);
        row.rhs = -static_cast<double>(count);
        row.tag = "occupied_gq_min[" + n.id + ":" + type + "]";
        cs.add_upper_bound(std::move(row));
      } else {
        // No facility of this type here, so nobody can live in one.
        for (const std::size_t cell : cells) row.entries.emplace_back(offset + cell, 1.0);
        row.rhs = 0.0;
        row.tag = "gq_absent[" + n.id + ":" + type + "]";
        cs.add_equality(std::move(row));
      }
    }
  }

  if (inv.householder_bound_level >= 0 && n.level <= inv.householder_bound_level &&
      !inv.householder_attribute.empty()) {
    SparseRow row;
    for (const std::size_t cell :
         cells_with_level(schema, inv.householder_attribute, inv.householder_level))
      row.entries.emplace_back(offset + cell, 1.0);
    row.rhs = static_cast<double>(n.housing_units);
    row.tag = "householders_le_housing_units[" + n.id + "]";
    cs.add_upper_bound(std::move(row));
  }
}

}  // namespace

ConstraintSet build_root_constraints(const Spine& spine, int node, const Schema& schema,
                                     const InvariantSpec& inv, const StructuralZeroSet& zeros,
                                     const Histogram& confidential) {
  ConstraintSet cs(schema.cell_count());
  add_node_rows(cs, spine, node, schema, inv, zeros, confidential.total(), 0, true);
  std::string witness;
  if (!check_feasible(confidential.counts(), cs, &witness))
    throw std::invalid_argument("confidential data violate constraint " + witness);
  return cs;
}

ConstraintSet build_children_constraints(const Spine& spine, int parent, const Schema& schema,
                                         const InvariantSpec& inv, const StructuralZeroSet& zeros,
                                         std::span<const std::int64_t> parent_solution,
                                         const std::vector<Histogram>& child_confidential) {
  const auto& children = spine.node(parent).children;
  const std::size_t c = schema.cell_count();
  if (parent_solution.size() != c)
    throw std::invalid_argument("parent solution has wrong length");
  if (child_confidential.size() != children.size())
    throw std::invalid_argument("need one confidential histogram per child");
  ConstraintSet cs(c * children.size());

  // State-equivalent groups (AIAN splits): only the group sum is invariant.
  std::map<std::string, std::vector<std::size_t>> state_groups;
  for (std::size_t k = 0; k < children.size(); ++k) {
    const GeoNode& child = spine.node(children[k]);
    const bool is_state_row =
        inv.state_total_level >= 0 && child.level == inv.state_total_level;
    if (is_state_row && !child.state_group.empty())
      state_groups[child.state_group].push_back(k);
    const bool solo_state_total = is_state_row && child.state_group.empty();
    add_node_rows(cs, spine, children[k], schema, inv, zeros, child_confidential[k].total(),
                  k * c,
                  solo_state_total ||
                      (inv.state_total_level >= 0 && child.level < inv.state_total_level));
  }
  for (const auto& [group, members] : state_groups) {
    SparseRow row;
    std::int64_t total = 0;
    for (const std::size_t k : members) {
      for (std::size_t cell = 0; cell < c; ++cell) row.entries.emplace_back(k * c + cell, 1.0);
      total += child_confidential[k].total();
    }
    row.rhs = static_cast<double>(total);
    row.tag = "state_total[" + group + "]";
    cs.add_equality(std::move(row));
  }

  // Children sum to the fixed parent solution, cell by cell.
  std::int64_t parent_total = 0;
  for (std::size_t cell = 0; cell < c; ++cell) {
    SparseRow row;
    for (std::size_t k = 0; k < children.size(); ++k) row.entries.emplace_back(k * c + cell, 1.0);
    row.rhs = static_cast<double>(parent_solution[cell]);
    parent_total += parent_solution[cell];
    row.tag = "aggregate[" + spine.node(parent).id + ":cell" + std::to_string(cell) + "]";
    cs.add_equality(std::move(row));
  }

  // Fail fast on exact payload-sum mismatches between pinned child totals
  // and the parent solution they must add up to.
  std::int64_t pinned = 0;
  bool all_pinned = !children.empty();
  for (std::size_t k = 0; k < children.size(); ++k) {
    const GeoNode& child = spine.node(children[k]);
    const bool has_total_row =
        (inv.state_total_level >= 0 && child.level <= inv.state_total_level) ||
        (inv.housing_unit_total_level >= 0 && child.level <= inv.housing_unit_total_level);
    if (!has_total_row) {
      all_pinned = false;
      break;
    }
    pinned += (inv.housing_unit_total_level >= 0 && child.level <= inv.housing_unit_total_level)
                  ? child.housing_units
                  : child_confidential[k].total();
  }
  if (all_pinned && pinned != parent_total)
    throw std::invalid_argument(
        "children totals pinned to " + std::to_string(pinned) + " cannot aggregate to parent '" +
        spine.node(parent).id + "' total " + std::to_string(parent_total));

  // The confidential stacked histogram must satisfy everything except the
  // aggregation rows, which reference the parent's rounded solution.
  std::vector<std::int64_t> stacked(c * children.size());
  for (std::size_t k = 0; k < children.size(); ++k)
    for (std::size_t cell = 0; cell < c; ++cell)
      stacked[k * c + cell] = child_confidential[k][cell];
  ConstraintSet without_agg(cs.dimension());
  for (const auto& row : cs.equalities())
    if (row.tag.rfind("aggregate[", 0) != 0) without_agg.add_equality(row);
  for (const auto& row : cs.upper_bounds()) without_agg.add_upper_bound(row);
  std::string witness;
  if (!check_feasible(std::span<const std::int64_t>(stacked), without_agg, &witness))
    throw std::invalid_argument("confidential data violate constraint " + witness);

  return cs;
}

namespace {

// Determinant of an integer matrix by fraction-free Gaussian elimination.
long long int_det(std::vector<std::vector<long long>> a) {
  const std::size_t n = a.size();
  long long prev = 1;
  long long sign = 1;
  for (std::size_t k = 0; k < n; ++k) {
    if (a[k][k] == 0) {
      std::size_t swap_row = k + 1;
      while (swap_row < n && a[swap_row][k] == 0) ++swap_row;
      if (swap_row == n) return 0;
      std::swap(a[k], a[swap_row]);
      sign = -sign;
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      for (std::size_t j = k + 1; j < n; ++j)
        a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) / prev;
      a[i][k] = 0;
    }
    prev = a[k][k];
  }
  return sign * a[n - 1][n - 1];
}

bool tum_by_determinants(const std::vector<std::vector<long long>>& m) {
  const std::size_t rows = m.size(), cols = m[0].size();
  const std::size_t kmax = std::min(rows, cols);
  std::vector<std::size_t> ri, ci;
  const std::function<bool(std::size_t, std::size_t)> choose_cols =
      [&](std::size_t k, std::size_t from) -> bool {
    if (ci.size() == k) {
      std::vector<std::vector<long long>> sub(k, std::vector<long long>(k));
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) sub[i][j] = m[ri[i]][ci[j]];
      const long long det = int_det(std::move(sub));
      return det >= -1 && det <= 1;
    }
    for (std::size_t c = from; c < cols; ++c) {
      ci.push_back(c);
      if (!choose_cols(k, c + 1)) return false;
      ci.pop_back();
    }
    return true;
  };
  const std::function<bool(std::size_t, std::size_t)> choose_rows =
      [&](std::size_t k, std::size_t from) -> bool {
    if (ri.size() == k) return choose_cols(k, 0);
    for (std::size_t r = from; r < rows; ++r) {
      ri.push_back(r);
      if (!choose_rows(k, r + 1)) return false;
      ri.pop_back();
    }
    return true;
  };
  for (std::size_t k = 1; k <= kmax; ++k) {
    ri.clear();
    ci.clear();
    if (!choose_rows(k, 0)) return false;
  }
  return true;
}

// Ghouila-Houri: every row subset admits a +/-1 signing whose signed column
// sums all lie in {-1, 0, 1}.
bool tum_by_signing(const std::vector<std::vector<long long>>& m) {
  const std::size_t rows = m.size(), cols = m[0].size();
  std::vector<long long> sum(cols, 0);
  std::vector<std::size_t> subset;
  const std::function<bool(std::size_t)> sign_rest = [&](std::size_t pos) -> bool {
    if (pos == subset.size()) {
      for (std::size_t j = 0; j < cols; ++j)
        if (sum[j] < -1 || sum[j] > 1) return false;
      return true;
    }
    const auto& row = m[subset[pos]];
    for (const int s : {+1, -1}) {
      for (std::size_t j = 0; j < cols; ++j) sum[j] += s * row[j];
      if (sign_rest(pos + 1)) {
        for (std::size_t j = 0; j < cols; ++j) sum[j] -= s * row[j];
        return true;
      }
      for (std::size_t j = 0; j < cols; ++j) sum[j] -= s * row[j];
    }
    return false;
  };
  const std::function<bool(std::size_t)> choose = [&](std::size_t from) -> bool {
    if (!subset.empty() && !sign_rest(0)) return false;
    for (std::size_t r = from; r < rows; ++r) {
      subset.push_back(r);
      if (!choose(r + 1)) return false;
      subset.pop_back();
    }
    return true;
  };
  return choose(0);
}

}  // namespace

bool tum_check(const std::vector<std::vector<long long>>& m) {
  if (m.empty() || m[0].empty()) return true;
  for (const auto& row : m) {
    if (row.size() != m[0].size()) throw std::invalid_argument("tum_check: ragged matrix");
    for (const long long v : row)
      if (v < -1 || v > 1) return false;  // a 1x1 submatrix already fails
  }
  const std::size_t rows = m.size(), cols = m[0].size();
  if (rows <= 8 && cols <= 8) return tum_by_determinants(m);
  if (rows <= 14 || cols <= 14) {
    if (rows <= cols) return tum_by_signing(m);
    std::vector<std::vector<long long>> t(cols, std::vector<long long>(rows));
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) t[j][i] = m[i][j];
    return tum_by_signing(t);
  }
  throw std::invalid_argument("tum_check: matrix exceeds the enumeration size limit");
}

}  // namespace topdown
