#pragma once

#include <string>
#include <vector>

#include "topdown/rational.hpp"
#include "topdown/schema.hpp"

namespace topdown {

// Measured query groups for one geographic level, their rho shares
// (summing to 1 exactly), and the solver pass schedules. The rounder keeps
// its own hierarchically related objective groups; cross-cutting marginals
// in the rounder objective would break total unimodularity.
struct LevelStrategy {
  std::vector<QueryGroup> groups;
  std::vector<Rational> shares;
  std::vector<std::vector<int>> l2_passes;       // group indices per pass
  std::vector<QueryGroup> rounder_groups;
  std::vector<std::vector<int>> rounder_passes;  // indices into rounder_groups
};

struct QueryStrategy {
  std::vector<LevelStrategy> levels;

  const LevelStrategy& at(int level) const;
  int group_index(int level, const std::string& name) const;  // -1 if absent
  void validate() const;  // share sums, schedule references
};

// Default production-shaped schedules: one pass at the root and leaf levels,
// TOTAL first then the remaining groups elsewhere. The rounder mirrors the
// least-squares passes with a TOTAL -> pass-1 groups -> DETAILED tree.
void apply_default_passes(const Schema& schema, QueryStrategy& strategy);

}  // namespace topdown
