#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "topdown/schema.hpp"
#include "topdown/spine.hpp"

namespace topdown {

struct SparseRow {
  std::vector<std::pair<std::size_t, double>> entries;  // (column, coefficient)
  double rhs = 0.0;
  std::string tag;  // names the row in diagnostics
};

// Equality and upper-bound rows over a node (length c*) or children-stacked
// (length c* * fanout) variable space. Lower bounds are stored negated.
class ConstraintSet {
 public:
  explicit ConstraintSet(std::size_t dimension) : dimension_(dimension) {}

  std::size_t dimension() const { return dimension_; }
  void add_equality(SparseRow row);
  void add_upper_bound(SparseRow row);
  const std::vector<SparseRow>& equalities() const { return equalities_; }
  const std::vector<SparseRow>& upper_bounds() const { return upper_bounds_; }
  std::size_t size() const { return equalities_.size() + upper_bounds_.size(); }

 private:
  std::size_t dimension_;
  std::vector<SparseRow> equalities_;
  std::vector<SparseRow> upper_bounds_;
};

// |C_eq x - c_eq|_inf <= tol and C_u x <= c_u + tol; the violated row's tag
// lands in *witness when given.
bool check_feasible(std::span<const double> x, const ConstraintSet& cs, double tol,
                    std::string* witness = nullptr);
// Exact integer variant (tol 0).
bool check_feasible(std::span<const std::int64_t> x, const ConstraintSet& cs,
                    std::string* witness = nullptr);

struct InvariantSpec {
  // Levels at which each invariant binds; -1 disables. Rows are emitted for
  // every node at or above the binding level (aggregates are public too).
  int state_total_level = -1;
  int housing_unit_total_level = -1;  // histogram total == housing units (housing universe)
  int occupied_gq_level = -1;
  int householder_bound_level = -1;

  std::string gq_attribute;            // attribute whose level labels are facility types
  std::vector<std::string> gq_types;   // defaults to all gq_attribute levels but the householder one
  std::string householder_attribute;   // attribute/level counted against housing units
  std::string householder_level;
};

struct CellCondition {
  std::string attribute;
  std::vector<std::string> levels;  // matches when the cell's level is in this set
};

// A cell is forbidden when every condition of some pattern matches.
struct StructuralZeroSet {
  struct Pattern {
    std::vector<CellCondition> all_of;
  };
  std::vector<Pattern> patterns;

  std::vector<std::size_t> forbidden_cells(const Schema& schema) const;
};

// Invariant and structural-zero rows for a single node solved on its own
// (the root, or a block-by-block leaf). Fails fast when the confidential
// histogram violates a built row.
ConstraintSet build_root_constraints(const Spine& spine, int node, const Schema& schema,
                                     const InvariantSpec& inv, const StructuralZeroSet& zeros,
                                     const Histogram& confidential);

// Per-child invariant/zero rows plus c* aggregation rows over the stacked
// child space; state-equivalent siblings produced by an AIAN split share one
// group total row. `child_confidential` supplies invariant right-hand sides.
ConstraintSet build_children_constraints(const Spine& spine, int parent,
                                         const Schema& schema, const InvariantSpec& inv,
                                         const StructuralZeroSet& zeros,
                                         std::span<const std::int64_t> parent_solution,
                                         const std::vector<Histogram>& child_confidential);

// True iff every square submatrix determinant lies in {-1, 0, 1}. Uses
// direct enumeration up to 8x8 and the Ghouila-Houri signing criterion on
// the smaller orientation beyond that; throws when both sides exceed 14.
bool tum_check(const std::vector<std::vector<long long>>& m);

}  // namespace topdown
