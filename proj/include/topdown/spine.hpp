#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "topdown/rational.hpp"

namespace topdown {

struct GeoNode {
  std::string id;
  int level = 0;   // index into level_names; topmost level after a bypass merge
  int parent = -1; // node index, -1 for root
  std::vector<int> children;
  std::int64_t housing_units = 0;
  std::map<std::string, std::int64_t> occupied_gq;  // facility type -> count
  bool aian = false;                                // meaningful on leaves
  // State-equivalent nodes produced by an AIAN split share the original
  // state id here; the state-total invariant binds to the group sum.
  std::string state_group;
};

// Rooted geographic tree. Immutable once built; transformations return a new
// spine. Internal payloads always equal the sum over their leaves.
class Spine {
 public:
  struct EdgeRow {
    std::string id;
    std::string parent;  // empty for the root
    std::string level_name;
    std::int64_t housing_units = 0;
    std::map<std::string, std::int64_t> occupied_gq;
    bool aian = false;
  };

  static Spine from_edges(const std::vector<EdgeRow>& rows);
  // CSV columns: geocode,parent_geocode,level_name,housing_units,gq,aian
  // where gq is semicolon-joined type:count pairs.
  static Spine load_csv(std::istream& in);
  static Spine load_csv_file(const std::string& path);

  int root() const { return root_; }
  const GeoNode& node(int i) const { return nodes_.at(i); }
  std::size_t node_count() const { return nodes_.size(); }
  int index_of(const std::string& id) const;
  bool has_node(const std::string& id) const;

  const std::vector<std::string>& level_names() const { return level_names_; }
  int leaf_level() const { return static_cast<int>(level_names_.size()) - 1; }
  bool is_leaf(int i) const { return nodes_[i].children.empty(); }
  std::vector<int> nodes_at_level(int level) const;
  std::vector<int> leaves() const;
  std::vector<int> leaves_under(int i) const;
  // Parents in root-first topological order (every parent before its children).
  std::vector<int> internal_nodes_topdown() const;

  // Structural checks plus leaf->ancestor payload consistency.
  void validate() const;

 private:
  friend Spine rebuild_spine(const Spine&, const std::vector<GeoNode>&, int);
  std::vector<GeoNode> nodes_;
  std::vector<std::string> level_names_;
  int root_ = 0;
  std::map<std::string, int> by_id_;
  void index_ids();
  void recompute_payloads();
};

struct OffSpineEntity {
  std::string name;
  std::vector<std::string> leaf_ids;
};

// Per-node rho shares (the c_ij of the allocation); keyed by node id.
using NodeShares = std::map<std::string, Rational>;

// Splits every state containing a flagged leaf into an AIAN branch and a
// balance branch; lower levels are subdivided so each copy lies wholly in
// one branch. States where every leaf is flagged keep their structure.
Spine build_aian_spine(const Spine& spine);

// Collapses maximal runs of single-child nodes into one node carrying the
// summed rho share; the run's terminal child is kept.
std::pair<Spine, NodeShares> bypass_single_child(const Spine& spine, const NodeShares& shares);

// Minimum number of subtree terms in a signed combination equal to the
// entity's leaf set (tree dynamic program).
int off_spine_distance(const OffSpineEntity& entity, const Spine& spine);

// Subtrees with signs whose leaf sets combine to the entity; size matches
// off_spine_distance. Used by audits and tests.
std::vector<std::pair<std::string, int>> off_spine_witness(const OffSpineEntity& entity,
                                                           const Spine& spine);

// Replaces the block-group level (parents of leaves) with custom groups:
// GQ-bearing blocks are isolated by facility signature and target entities
// are greedily pulled closer to the spine without increasing total distance.
Spine optimize_block_groups(const Spine& spine, const std::vector<OffSpineEntity>& targets);

}  // namespace topdown
