#include <doctest.h>

#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "topdown/spine.hpp"

using namespace topdown;

namespace {

Spine::EdgeRow edge(const std::string& id, const std::string& parent, const std::string& level,
                    std::int64_t hu = 0, std::map<std::string, std::int64_t> gq = {},
                    bool aian = false) {
  Spine::EdgeRow r;
  r.id = id;
  r.parent = parent;
  r.level_name = level;
  r.housing_units = hu;
  r.occupied_gq = std::move(gq);
  r.aian = aian;
  return r;
}

Spine chain_spine() {
  return Spine::from_edges({
      edge("us", "", "us"),
      edge("s1", "us", "state"),
      edge("b1", "s1", "block", 3),
  });
}

// Exhaustive minimum signed-subtree-combination size: every node may enter
// once with coefficient +1 or -1; the combination must hit the entity's
// leaf indicator exactly.
int exhaustive_distance(const Spine& spine, const std::set<int>& entity) {
  const auto leaves = spine.leaves();
  std::vector<std::vector<int>> leaf_sets(spine.node_count());
  for (std::size_t v = 0; v < spine.node_count(); ++v) {
    for (const int l : spine.leaves_under(static_cast<int>(v))) {
      const auto it = std::find(leaves.begin(), leaves.end(), l);
      leaf_sets[v].push_back(static_cast<int>(it - leaves.begin()));
    }
  }
  std::vector<int> want(leaves.size(), 0);
  for (std::size_t i = 0; i < leaves.size(); ++i) want[i] = entity.count(leaves[i]) ? 1 : 0;

  const int n = static_cast<int>(spine.node_count());
  for (int size = 0; size <= n; ++size) {
    std::vector<int> sum(leaves.size(), 0);
    const std::function<bool(int, int)> rec = [&](int pos, int from) -> bool {
      if (pos == size) return sum == want;
      for (int v = from; v < n; ++v) {
        for (const int sign : {+1, -1}) {
          for (const int l : leaf_sets[v]) sum[l] += sign;
          if (rec(pos + 1, v + 1)) return true;
          for (const int l : leaf_sets[v]) sum[l] -= sign;
        }
      }
      return false;
    };
    if (rec(0, 0)) return size;
  }
  return n + 1;
}

// Random rooted tree with `n` nodes, padded so all leaves share a depth.
Spine random_spine(std::mt19937& gen, int n) {
  std::vector<Spine::EdgeRow> rows;
  rows.push_back(edge("n0", "", "l0"));
  std::vector<int> depth = {0};
  for (int i = 1; i < n; ++i) {
    const int parent = static_cast<int>(gen() % i);
    rows.push_back(edge("n" + std::to_string(i), "n" + std::to_string(parent),
                        "l" + std::to_string(depth[parent] + 1)));
    depth.push_back(depth[parent] + 1);
  }
  const auto is_leaf = [&](const std::string& id) {
    for (const auto& r : rows)
      if (r.parent == id) return false;
    return true;
  };
  int max_depth = 0;
  for (int i = 0; i < n; ++i)
    if (is_leaf(rows[i].id)) max_depth = std::max(max_depth, depth[i]);
  std::vector<Spine::EdgeRow> padded = rows;
  int extra = 0;
  for (int i = 0; i < n; ++i) {
    if (!is_leaf(rows[i].id)) continue;
    std::string parent = rows[i].id;
    for (int d = depth[i]; d < max_depth; ++d) {
      const std::string id = "p" + std::to_string(extra++);
      padded.push_back(edge(id, parent, "l" + std::to_string(d + 1)));
      parent = id;
    }
  }
  const auto leaf_in_padded = [&](const std::string& id) {
    for (const auto& r : padded)
      if (r.parent == id) return false;
    return true;
  };
  for (auto& r : padded)
    if (leaf_in_padded(r.id)) r.housing_units = 1;
  return Spine::from_edges(padded);
}

}  // namespace

TEST_CASE("spine construction and payload aggregation") {
  const Spine s = Spine::from_edges({
      edge("us", "", "us"),
      edge("s1", "us", "state"),
      edge("b1", "s1", "block", 2, {{"gqA", 1}}),
      edge("b2", "s1", "block", 3),
  });
  CHECK(s.level_names() == std::vector<std::string>{"us", "state", "block"});
  CHECK(s.node(s.index_of("us")).housing_units == 5);
  CHECK(s.node(s.index_of("us")).occupied_gq.at("gqA") == 1);
  CHECK(s.leaves().size() == 2);
  CHECK_THROWS(Spine::from_edges({edge("a", "", "us"), edge("a", "a", "state")}));
  CHECK_THROWS(Spine::from_edges({edge("a", "", "us"), edge("b", "missing", "state")}));
}

TEST_CASE("csv round trip") {
  std::istringstream in(
      "geocode,parent,level,housing_units,gq,aian\n"
      "us,,us,0,,0\n"
      "s1,us,state,0,,0\n"
      "b1,s1,block,2,gqA:1;gqB:2,1\n"
      "b2,s1,block,3,,0\n");
  const Spine s = Spine::load_csv(in);
  CHECK(s.node(s.index_of("b1")).occupied_gq.at("gqB") == 2);
  CHECK(s.node(s.index_of("b1")).aian);
  CHECK_FALSE(s.node(s.index_of("b2")).aian);
}

TEST_CASE("aian spine splits mixed states only") {
  const Spine s = Spine::from_edges({
      edge("us", "", "us"),
      edge("s1", "us", "state"),
      edge("c11", "s1", "county"),
      edge("b111", "c11", "block", 1, {}, true),
      edge("b112", "c11", "block", 1, {}, false),
      edge("s2", "us", "state"),
      edge("c21", "s2", "county"),
      edge("b211", "c21", "block", 1, {}, false),
      edge("s3", "us", "state"),
      edge("c31", "s3", "county"),
      edge("b311", "c31", "block", 1, {}, true),
  });
  const Spine a = build_aian_spine(s);
  // s1 splits in two; s2 and the fully flagged s3 stay single subtrees.
  CHECK(a.nodes_at_level(1).size() == 4);
  CHECK(a.has_node("s1_AIAN"));
  CHECK(a.has_node("s1_BAL"));
  CHECK(a.has_node("s2"));
  CHECK(a.has_node("s3"));
  CHECK(a.node(a.index_of("s1_AIAN")).state_group == "s1");
  CHECK(a.node(a.index_of("s1_BAL")).state_group == "s1");
  // Counties with leaves on both sides are subdivided.
  CHECK(a.has_node("c11_AIAN"));
  CHECK(a.has_node("c11_BAL"));
  CHECK(a.leaves().size() == s.leaves().size());
  CHECK(a.node(a.index_of("us")).housing_units == 4);
  CHECK(a.node(a.index_of("s1_AIAN")).housing_units +
            a.node(a.index_of("s1_BAL")).housing_units ==
        s.node(s.index_of("s1")).housing_units);
}

TEST_CASE("aian spine reproduces the 87 state-equivalent count") {
  // 51 states; 36 contain a flagged leaf alongside an unflagged one, so the
  // split yields 15 + 2*36 = 87 state-level entities.
  std::vector<Spine::EdgeRow> rows = {edge("us", "", "us")};
  for (int i = 0; i < 51; ++i) {
    const std::string sid = "s" + std::to_string(i);
    rows.push_back(edge(sid, "us", "state"));
    rows.push_back(edge(sid + "b0", sid, "block", 1, {}, i < 36));
    rows.push_back(edge(sid + "b1", sid, "block", 1, {}, false));
  }
  const Spine s = Spine::from_edges(rows);
  const Spine a = build_aian_spine(s);
  CHECK(a.nodes_at_level(1).size() == 87);
}

TEST_CASE("bypass merges single-child runs and adds their shares") {
  const Spine s = chain_spine();
  NodeShares shares{{"us", Rational(1, 5)}, {"s1", Rational(3, 10)}, {"b1", Rational(1, 2)}};
  const auto [merged, out] = bypass_single_child(s, shares);
  CHECK(merged.node_count() == 2);
  CHECK(merged.has_node("us"));
  CHECK(merged.has_node("b1"));
  CHECK(out.at("us") == Rational(1, 2));
  CHECK(out.at("b1") == Rational(1, 2));
  CHECK(out.at("us") + out.at("b1") == Rational(1));
}

TEST_CASE("bypass is the identity without unary runs") {
  const Spine s = Spine::from_edges({
      edge("us", "", "us"),
      edge("b1", "us", "block", 1),
      edge("b2", "us", "block", 1),
  });
  NodeShares shares{{"us", Rational(1, 2)}, {"b1", Rational(1, 2)}, {"b2", Rational(1, 2)}};
  const auto [merged, out] = bypass_single_child(s, shares);
  CHECK(merged.node_count() == 3);
  CHECK(out.at("us") == Rational(1, 2));
}

TEST_CASE("bypass never increases per-path measurement variance") {
  // Total-query variance along a root-leaf path is sum psi^2/c per node
  // (single query, d = 1); compare before and after on random trees.
  std::mt19937 gen(21);
  for (int trial = 0; trial < 15; ++trial) {
    const Spine s = random_spine(gen, 4 + static_cast<int>(gen() % 17));
    NodeShares shares;
    const int levels = s.leaf_level() + 1;
    for (std::size_t v = 0; v < s.node_count(); ++v)
      shares[s.node(v).id] = Rational(1, levels);
    const auto [merged, out] = bypass_single_child(s, shares);

    for (const int leaf : merged.leaves()) {
      double after = 0.0;
      for (int v = leaf; v >= 0; v = merged.node(v).parent)
        after += 1.0 / to_double(out.at(merged.node(v).id));
      double before = 0.0;
      for (int v = s.index_of(merged.node(leaf).id); v >= 0; v = s.node(v).parent)
        before += 1.0 / to_double(shares.at(s.node(v).id));
      CHECK(after <= before + 1e-9);
    }
  }
}

TEST_CASE("off-spine distance on hand fixtures") {
  const Spine s = Spine::from_edges({
      edge("us", "", "us"),
      edge("c1", "us", "county"),
      edge("b1", "c1", "block", 1),
      edge("b2", "c1", "block", 1),
      edge("b3", "c1", "block", 1),
  });
  // An on-spine node is one term; so is the set of all leaves (the root).
  CHECK(off_spine_distance({"e", {"b1", "b2", "b3"}}, s) == 1);
  // Two of three children: two adds, or the parent minus the third.
  CHECK(off_spine_distance({"e", {"b1", "b2"}}, s) == 2);
  CHECK_THROWS(off_spine_distance({"e", {"nope"}}, s));
}

TEST_CASE("off-spine distance equals exhaustive search on random trees") {
  std::mt19937 gen(5);
  int checked = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const Spine s = random_spine(gen, 3 + static_cast<int>(gen() % 8));
    if (s.node_count() > 12) continue;
    const auto leaves = s.leaves();
    const std::size_t m = leaves.size();
    for (std::uint32_t mask = 1; mask < (1u << m); ++mask) {
      std::set<int> entity;
      OffSpineEntity e{"e", {}};
      for (std::size_t i = 0; i < m; ++i)
        if (mask & (1u << i)) {
          entity.insert(leaves[i]);
          e.leaf_ids.push_back(s.node(leaves[i]).id);
        }
      const int dp = off_spine_distance(e, s);
      CHECK(dp == exhaustive_distance(s, entity));
      const auto witness = off_spine_witness(e, s);
      CHECK(static_cast<int>(witness.size()) == dp);
      std::map<int, int> sum;
      for (const auto& [id, sign] : witness)
        for (const int l : s.leaves_under(s.index_of(id))) sum[l] += sign;
      for (const int l : leaves) CHECK(sum[l] == (entity.count(l) ? 1 : 0));
      ++checked;
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("block-group optimization isolates gq blocks") {
  const Spine s = Spine::from_edges({
      edge("us", "", "us"),
      edge("t1", "us", "tract"),
      edge("g1", "t1", "bg"),
      edge("b1", "g1", "block", 1, {{"gqA", 1}}),
      edge("b2", "g1", "block", 1),
      edge("b3", "g1", "block", 1),
      edge("b4", "g1", "block", 1),
  });
  const Spine opt = optimize_block_groups(s, {});
  const int parent1 = opt.node(opt.index_of("b1")).parent;
  const int parent2 = opt.node(opt.index_of("b2")).parent;
  CHECK(parent1 != parent2);
  CHECK(opt.node(parent1).children.size() == 1);
  CHECK(opt.node(parent2).children.size() == 3);
  CHECK(opt.node(opt.index_of("us")).housing_units == 4);
}

TEST_CASE("block-group optimization without gq or targets is the identity") {
  const Spine s = Spine::from_edges({
      edge("us", "", "us"),
      edge("t1", "us", "tract"),
      edge("g1", "t1", "bg"),
      edge("b1", "g1", "block", 1),
      edge("b2", "g1", "block", 1),
  });
  const Spine opt = optimize_block_groups(s, {});
  CHECK(opt.node_count() == s.node_count());
  CHECK(opt.has_node("g1"));
}

TEST_CASE("block-group optimization pulls a split target onto the spine") {
  // One 7-block group holding half of the target; distance drops 4 -> 1.
  std::vector<Spine::EdgeRow> rows = {
      edge("us", "", "us"),     edge("t1", "us", "tract"), edge("g1", "t1", "bg"),
      edge("t2", "us", "tract"), edge("g2", "t2", "bg"),   edge("b8", "g2", "block", 1),
  };
  for (int i = 1; i <= 7; ++i) rows.push_back(edge("b" + std::to_string(i), "g1", "block", 1));
  const Spine s = Spine::from_edges(rows);
  const OffSpineEntity target{"place", {"b1", "b2", "b3", "b4"}};
  CHECK(off_spine_distance(target, s) == 4);
  const Spine opt = optimize_block_groups(s, {target});
  CHECK(off_spine_distance(target, opt) == 1);
  CHECK(opt.node(opt.index_of("t1")).children.size() == 2);
}

TEST_CASE("leaf payloads survive every transformation") {
  std::mt19937 gen(31);
  for (int trial = 0; trial < 8; ++trial) {
    Spine s = random_spine(gen, 6 + static_cast<int>(gen() % 10));
    const auto leaf_payload = [&](const Spine& sp) {
      std::map<std::string, std::int64_t> m;
      for (const int l : sp.leaves()) m[sp.node(l).id] = sp.node(l).housing_units;
      return m;
    };
    const auto before = leaf_payload(s);
    const Spine a = build_aian_spine(s);
    CHECK(leaf_payload(a) == before);
    const Spine o = optimize_block_groups(s, {});
    CHECK(leaf_payload(o) == before);
    NodeShares shares;
    for (std::size_t v = 0; v < s.node_count(); ++v)
      shares[s.node(v).id] = Rational(1, s.leaf_level() + 1);
    const auto [b, bs] = bypass_single_child(s, shares);
    CHECK(leaf_payload(b) == before);
    for (const int leaf : b.leaves()) {
      Rational sum(0);
      for (int v = leaf; v >= 0; v = b.node(v).parent) sum += bs.at(b.node(v).id);
      CHECK(sum == Rational(1));
    }
  }
}
