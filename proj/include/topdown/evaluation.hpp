#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "topdown/engine.hpp"
#include "topdown/schema.hpp"
#include "topdown/spine.hpp"

namespace topdown {

// Leaf-level counts keyed by geocode; the shared currency of all metrics so
// that every metric is a pure function of (protected, confidential, config).
using LeafCounts = std::map<std::string, std::vector<std::int64_t>>;

LeafCounts leaf_counts_of(const MdfOutput& out);
LeafCounts leaf_counts_of(const NodeData& data, const Schema& schema);

// Geographic units to evaluate: either every node of one level or a list of
// off-spine entities (unions of leaves).
struct UnitSet {
  std::vector<std::pair<std::string, std::vector<std::string>>> units;  // name -> leaf ids
  static UnitSet at_level(const Spine& spine, int level);
  static UnitSet of_entities(const std::vector<OffSpineEntity>& entities);
};

std::vector<std::int64_t> tabulate_unit(const LeafCounts& leaves,
                                        const std::vector<std::string>& leaf_ids,
                                        const QueryGroup& query, const Schema& schema);

// Mean over units of sum_i |protected_i - confidential_i| for one query.
double abs_error_by_level(const LeafCounts& mdf, const LeafCounts& cef, const UnitSet& units,
                          const QueryGroup& query, const Schema& schema);

struct PopulationBucket {
  std::int64_t lo = 0;
  std::int64_t hi = -1;  // -1 = open-ended
  std::string label() const;
};

struct QuantileRow {
  std::string bucket;
  std::size_t unit_count = 0;
  bool empty = false;  // flagged, no statistics
  double mean_l1 = 0.0;
  std::vector<double> quantiles;  // aligned with the probability grid
};

// Per confidential-population bucket: mean L1 and signed-error quantiles
// (lower interpolation) pooled over unit/query-row pairs.
std::vector<QuantileRow> signed_quantiles(const LeafCounts& mdf, const LeafCounts& cef,
                                          const UnitSet& units, const QueryGroup& query,
                                          const Schema& schema,
                                          const std::vector<PopulationBucket>& buckets,
                                          const std::vector<double>& probabilities);

// 1 - sum p_i^2 over group shares; raw counts are normalized. Throws on an
// all-zero vector.
double blau_index(const std::vector<double>& shares);

struct BlauQuintileRow {
  int quintile = 0;  // 1..5
  std::size_t unit_count = 0;
  bool empty = false;
  double mean_signed_total_error = 0.0;
};

// Units bucketed into quintiles of the confidential Blau index over
// `blau_query` groups; per-quintile mean signed TOTAL error. Ties at
// quintile edges go to the lower bucket.
std::vector<BlauQuintileRow> blau_quintile_bias(const LeafCounts& mdf, const LeafCounts& cef,
                                                const UnitSet& units, const QueryGroup& blau_query,
                                                const Schema& schema);

struct LargestGroupReport {
  std::size_t eligible = 0;
  std::size_t within = 0;
  double fraction = 1.0;
  bool pass = true;
  double threshold_pp = 5.0;
  double min_fraction = 0.95;
};

// Fraction of units (confidential population >= min_pop) whose largest
// confidential group share moves by at most threshold_pp percentage points.
LargestGroupReport largest_group_criterion(const LeafCounts& mdf, const LeafCounts& cef,
                                           const UnitSet& units, const QueryGroup& group_query,
                                           const Schema& schema, double threshold_pp,
                                           std::int64_t min_pop, double min_fraction = 0.95);

// Accumulated metric rows plus CSV / aligned-text emitters.
struct MetricReport {
  struct Row {
    std::string geography;
    std::string query;
    std::string metric;
    double value = 0.0;
  };
  std::vector<Row> rows;

  void add(std::string geography, std::string query, std::string metric, double value);
  void write_csv(std::ostream& os) const;
  void write_text(std::ostream& os) const;
};

}  // namespace topdown
