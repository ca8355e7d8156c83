#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "topdown/constraints.hpp"
#include "topdown/privacy.hpp"
#include "topdown/schema.hpp"
#include "topdown/solvers.hpp"
#include "topdown/spine.hpp"
#include "topdown/strategy.hpp"

namespace topdown {

// Confidential input: one histogram per leaf geocode. Missing leaves count
// as empty.
struct NodeData {
  std::map<std::string, Histogram> leaf_histograms;
};

class MeasurementSet {
 public:
  void add(NoisyMeasurement m);
  const NoisyMeasurement* find(const std::string& node_id, const std::string& group) const;
  const std::vector<NoisyMeasurement>& items() const { return items_; }
  // node geocode, group, row, value, sigma2 num/den; sorted, header row.
  void write_csv(std::ostream& out) const;

 private:
  std::vector<NoisyMeasurement> items_;
  std::map<std::pair<std::string, std::string>, std::size_t> index_;
};

struct EngineOptions {
  int workers = 1;
};

// Measurement phase: M = Q x + y per node and scheduled group, with noise
// substreams keyed by (node id, group name) off the master seed.
MeasurementSet measure_spine(const Spine& spine, const Schema& schema,
                             const QueryStrategy& strategy, const AllocationTable& alloc,
                             const NodeData& data, std::uint64_t master_seed,
                             const EngineOptions& options = {});

struct MdfOutput {
  // Rounded histogram for every node; leaves are the published microdata.
  std::map<std::string, std::vector<std::int64_t>> node_solutions;
  std::vector<std::string> leaf_order;  // geocodes in emission order
};

// Estimation phase: the root is solved first, then each parent's children
// jointly under aggregation to the frozen parent solution.
MdfOutput topdown_run(const Spine& spine, const Schema& schema, const QueryStrategy& strategy,
                      const AllocationTable& alloc, const InvariantSpec& inv,
                      const StructuralZeroSet& zeros, const NodeData& data,
                      const MeasurementSet& measurements, const EngineOptions& options = {});

// Independent per-leaf baseline; upper geographies are plain sums.
MdfOutput block_by_block_run(const Spine& spine, const Schema& schema,
                             const QueryStrategy& strategy, const AllocationTable& alloc,
                             const InvariantSpec& inv, const StructuralZeroSet& zeros,
                             const NodeData& data, const MeasurementSet& measurements,
                             const EngineOptions& options = {});

// One call per emitted person record, ordered by geocode then cell index.
void for_each_record(const MdfOutput& out, const Schema& schema,
                     const std::function<void(const std::string& geocode, std::size_t cell)>& fn);
// CSV: geocode plus one column per attribute.
void write_mdf_csv(const MdfOutput& out, const Schema& schema, std::ostream& os);

// Aggregates leaf histograms up the spine (shared by the engine, the
// validator, and evaluation).
std::map<std::string, std::vector<std::int64_t>> aggregate_confidential(const Spine& spine,
                                                                        const Schema& schema,
                                                                        const NodeData& data);

// Engine postconditions on a finished output: non-negativity, integrality
// (by construction), hierarchical consistency, and every node constraint.
// Throws std::runtime_error naming the first failure.
void validate_output(const MdfOutput& out, const Spine& spine, const Schema& schema,
                     const InvariantSpec& inv, const StructuralZeroSet& zeros,
                     const NodeData& data);

}  // namespace topdown
