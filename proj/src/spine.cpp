#include "topdown/spine.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>

namespace topdown {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  const auto b = s.find_last_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

}  // namespace

void Spine::index_ids() {
  by_id_.clear();
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!by_id_.emplace(nodes_[i].id, static_cast<int>(i)).second)
      throw std::invalid_argument("duplicate geocode '" + nodes_[i].id + "'");
  }
}

void Spine::recompute_payloads() {
  // Post-order accumulation; a non-zero declared internal payload must match.
  std::vector<int> order;
  order.reserve(nodes_.size());
  std::vector<int> stack = {root_};
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    order.push_back(v);
    for (const int c : nodes_[v].children) stack.push_back(c);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    GeoNode& n = nodes_[*it];
    if (n.children.empty()) continue;
    std::int64_t hu = 0;
    std::map<std::string, std::int64_t> gq;
    for (const int c : n.children) {
      hu += nodes_[c].housing_units;
      for (const auto& [type, count] : nodes_[c].occupied_gq) gq[type] += count;
    }
    const bool declared = n.housing_units != 0 || !n.occupied_gq.empty();
    if (declared && (n.housing_units != hu || n.occupied_gq != gq))
      throw std::invalid_argument("node '" + n.id +
                                  "' payload does not equal the sum over its leaves");
    n.housing_units = hu;
    n.occupied_gq = std::move(gq);
  }
}

Spine Spine::from_edges(const std::vector<EdgeRow>& rows) {
  Spine s;
  std::map<std::string, int> idx;
  for (const auto& r : rows) {
    if (!idx.emplace(r.id, static_cast<int>(s.nodes_.size())).second)
      throw std::invalid_argument("duplicate geocode '" + r.id + "'");
    GeoNode n;
    n.id = r.id;
    n.housing_units = r.housing_units;
    n.occupied_gq = r.occupied_gq;
    n.aian = r.aian;
    s.nodes_.push_back(std::move(n));
  }
  int root = -1;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].parent.empty()) {
      if (root >= 0) throw std::invalid_argument("more than one root geocode");
      root = static_cast<int>(i);
      continue;
    }
    const auto it = idx.find(rows[i].parent);
    if (it == idx.end())
      throw std::invalid_argument("unknown parent geocode '" + rows[i].parent + "'");
    s.nodes_[i].parent = it->second;
    s.nodes_[it->second].children.push_back(static_cast<int>(i));
  }
  if (root < 0) throw std::invalid_argument("no root geocode (empty parent) found");
  s.root_ = root;

  // Depth-derived levels; the level name must be uniform per depth.
  std::vector<int> stack = {root};
  s.nodes_[root].level = 0;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    const int level = s.nodes_[v].level;
    if (level >= static_cast<int>(s.level_names_.size()))
      s.level_names_.resize(level + 1);
    const std::string& name = rows[v].level_name;
    if (s.level_names_[level].empty())
      s.level_names_[level] = name;
    else if (s.level_names_[level] != name)
      throw std::invalid_argument("level name '" + name + "' of '" + s.nodes_[v].id +
                                  "' disagrees with '" + s.level_names_[level] + "' at depth " +
                                  std::to_string(level));
    for (const int c : s.nodes_[v].children) {
      s.nodes_[c].level = level + 1;
      stack.push_back(c);
    }
  }
  for (std::size_t i = 0; i < s.nodes_.size(); ++i)
    if (static_cast<int>(i) != root && s.nodes_[i].parent < 0)
      throw std::invalid_argument("geocode '" + s.nodes_[i].id + "' is not reachable from root");

  // Default state grouping: every state-equivalent node is its own group.
  for (auto& n : s.nodes_)
    if (n.level == 1) n.state_group = n.id;

  s.index_ids();
  s.recompute_payloads();
  s.validate();
  return s;
}

Spine Spine::load_csv(std::istream& in) {
  std::vector<EdgeRow> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    if (header) {  // fixed column order; header row is required
      header = false;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() < 6)
      throw std::invalid_argument("spine csv row needs 6 columns: " + line);
    EdgeRow r;
    r.id = trim(f[0]);
    r.parent = trim(f[1]);
    r.level_name = trim(f[2]);
    r.housing_units = f[3].empty() ? 0 : std::stoll(f[3]);
    const std::string gq = trim(f[4]);
    if (!gq.empty()) {
      for (const auto& pair : split(gq, ';')) {
        const auto colon = pair.find(':');
        if (colon == std::string::npos)
          throw std::invalid_argument("bad gq payload '" + gq + "' for '" + r.id + "'");
        r.occupied_gq[trim(pair.substr(0, colon))] = std::stoll(pair.substr(colon + 1));
      }
    }
    r.aian = trim(f[5]) == "1" || trim(f[5]) == "true";
    rows.push_back(std::move(r));
  }
  return from_edges(rows);
}

Spine Spine::load_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open spine file '" + path + "'");
  return load_csv(in);
}

int Spine::index_of(const std::string& id) const {
  const auto it = by_id_.find(id);
  if (it == by_id_.end()) throw std::invalid_argument("unknown geocode '" + id + "'");
  return it->second;
}

bool Spine::has_node(const std::string& id) const { return by_id_.count(id) > 0; }

std::vector<int> Spine::nodes_at_level(int level) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].level == level) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> Spine::leaves() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].children.empty()) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> Spine::leaves_under(int i) const {
  std::vector<int> out;
  std::vector<int> stack = {i};
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    if (nodes_[v].children.empty())
      out.push_back(v);
    else
      for (const int c : nodes_[v].children) stack.push_back(c);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> Spine::internal_nodes_topdown() const {
  std::vector<int> out;
  std::vector<int> queue = {root_};
  for (std::size_t h = 0; h < queue.size(); ++h) {
    const int v = queue[h];
    if (nodes_[v].children.empty()) continue;
    out.push_back(v);
    for (const int c : nodes_[v].children) queue.push_back(c);
  }
  return out;
}

void Spine::validate() const {
  std::size_t reached = 0;
  std::vector<int> stack = {root_};
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    ++reached;
    const GeoNode& n = nodes_[v];
    for (const int c : n.children) {
      if (nodes_[c].parent != v)
        throw std::logic_error("broken parent link at '" + nodes_[c].id + "'");
      if (nodes_[c].level <= n.level)
        throw std::logic_error("child level not below parent at '" + nodes_[c].id + "'");
      stack.push_back(c);
    }
    if (n.housing_units < 0) throw std::invalid_argument("negative housing units at '" + n.id + "'");
    for (const auto& [type, count] : n.occupied_gq)
      if (count < 0)
        throw std::invalid_argument("negative gq count '" + type + "' at '" + n.id + "'");
  }
  if (reached != nodes_.size()) throw std::logic_error("spine is not a connected tree");
  const int leaf_lv = leaf_level();
  for (const int l : leaves())
    if (nodes_[l].level != leaf_lv)
      throw std::invalid_argument("leaf '" + nodes_[l].id + "' is not at the leaf level");
}

Spine rebuild_spine(const Spine& base, const std::vector<GeoNode>& nodes, int root) {
  Spine s;
  s.nodes_ = nodes;
  s.root_ = root;
  s.level_names_ = base.level_names();
  s.index_ids();
  s.recompute_payloads();
  s.validate();
  return s;
}

namespace {

// Clones the subtree rooted at `v` keeping only leaves in `keep`; nodes whose
// leaves straddle the cut get `suffix` appended to stay unique.
int clone_filtered(const Spine& spine, int v, const std::set<int>& keep,
                   const std::string& suffix, std::vector<GeoNode>& out, int new_parent) {
  const GeoNode& n = spine.node(v);
  const auto leaves = spine.leaves_under(v);
  std::size_t kept = 0;
  for (const int l : leaves) kept += keep.count(l);
  if (kept == 0) return -1;

  GeoNode copy;
  copy.id = kept == leaves.size() ? n.id : n.id + suffix;
  copy.level = n.level;
  copy.parent = new_parent;
  copy.aian = n.aian;
  if (n.children.empty()) {
    copy.housing_units = n.housing_units;
    copy.occupied_gq = n.occupied_gq;
  }
  const int self = static_cast<int>(out.size());
  out.push_back(std::move(copy));
  for (const int c : n.children) {
    const int nc = clone_filtered(spine, c, keep, suffix, out, self);
    if (nc >= 0) out[self].children.push_back(nc);
  }
  return self;
}

}  // namespace

Spine build_aian_spine(const Spine& spine) {
  const GeoNode& root = spine.node(spine.root());
  std::vector<GeoNode> out;
  GeoNode new_root = root;
  new_root.children.clear();
  new_root.parent = -1;
  out.push_back(std::move(new_root));

  for (const int state : root.children) {
    const auto leaves = spine.leaves_under(state);
    std::set<int> flagged, unflagged;
    for (const int l : leaves)
      (spine.node(l).aian ? flagged : unflagged).insert(l);

    const std::string group = spine.node(state).id;
    if (flagged.empty() || unflagged.empty()) {
      // Nothing to split; the whole subtree is one branch.
      const int c = clone_filtered(spine, state, flagged.empty() ? unflagged : flagged, "", out, 0);
      out[c].state_group = group;
      out[0].children.push_back(c);
      continue;
    }
    const int a = clone_filtered(spine, state, flagged, "_AIAN", out, 0);
    out[a].state_group = group;
    out[0].children.push_back(a);
    const int b = clone_filtered(spine, state, unflagged, "_BAL", out, 0);
    out[b].state_group = group;
    out[0].children.push_back(b);
  }
  return rebuild_spine(spine, out, 0);
}

std::pair<Spine, NodeShares> bypass_single_child(const Spine& spine, const NodeShares& shares) {
  std::vector<GeoNode> out;
  NodeShares merged_shares;
  const auto share_of = [&](const std::string& id) {
    const auto it = shares.find(id);
    return it == shares.end() ? Rational(0) : it->second;
  };

  const std::function<int(int, int)> build = [&](int v, int new_parent) -> int {
    // Absorb the maximal run of single-child nodes starting at v.
    std::vector<int> run = {v};
    int tail = v;
    while (spine.node(tail).children.size() == 1) {
      const int next = spine.node(tail).children[0];
      if (spine.node(next).children.size() != 1) break;
      run.push_back(next);
      tail = next;
    }
    GeoNode copy = spine.node(run.front());
    copy.parent = new_parent;
    copy.children.clear();
    const int self = static_cast<int>(out.size());
    Rational share(0);
    for (const int r : run) share += share_of(spine.node(r).id);
    merged_shares[copy.id] = share;
    if (spine.node(run.front()).children.empty()) {
      out.push_back(std::move(copy));
      return self;
    }
    copy.housing_units = 0;
    copy.occupied_gq.clear();
    out.push_back(std::move(copy));
    for (const int c : spine.node(tail).children) {
      const int nc = build(c, self);
      out[self].children.push_back(nc);
    }
    return self;
  };
  build(spine.root(), -1);
  return {rebuild_spine(spine, out, 0), merged_shares};
}

namespace {

struct DistanceDp {
  // cover = min terms for E within the subtree; complement = min terms for
  // leaves(subtree) \ E.
  std::vector<int> cover, complement;
  std::vector<bool> cover_takes_node, complement_takes_node;
};

DistanceDp distance_dp(const Spine& spine, const std::set<int>& entity) {
  DistanceDp dp;
  const std::size_t n = spine.node_count();
  dp.cover.assign(n, 0);
  dp.complement.assign(n, 0);
  dp.cover_takes_node.assign(n, false);
  dp.complement_takes_node.assign(n, false);

  // Children before parents: walk a reversed preorder.
  std::vector<int> order;
  std::vector<int> stack = {spine.root()};
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    order.push_back(v);
    for (const int c : spine.node(v).children) stack.push_back(c);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int v = *it;
    if (spine.is_leaf(v)) {
      const bool in = entity.count(v) > 0;
      dp.cover[v] = in ? 1 : 0;
      dp.complement[v] = in ? 0 : 1;
      continue;
    }
    int sum_cover = 0, sum_complement = 0;
    for (const int c : spine.node(v).children) {
      sum_cover += dp.cover[c];
      sum_complement += dp.complement[c];
    }
    dp.cover[v] = std::min(sum_cover, 1 + sum_complement);
    dp.cover_takes_node[v] = 1 + sum_complement < sum_cover;
    dp.complement[v] = std::min(sum_complement, 1 + sum_cover);
    dp.complement_takes_node[v] = 1 + sum_cover < sum_complement;
  }
  return dp;
}

std::set<int> entity_leaves(const OffSpineEntity& entity, const Spine& spine) {
  std::set<int> leaves;
  for (const auto& id : entity.leaf_ids) {
    const int v = spine.index_of(id);
    if (!spine.is_leaf(v))
      throw std::invalid_argument("entity '" + entity.name + "': '" + id + "' is not a leaf");
    leaves.insert(v);
  }
  if (leaves.empty()) throw std::invalid_argument("entity '" + entity.name + "' has no leaves");
  return leaves;
}

}  // namespace

int off_spine_distance(const OffSpineEntity& entity, const Spine& spine) {
  const auto dp = distance_dp(spine, entity_leaves(entity, spine));
  return dp.cover[spine.root()];
}

std::vector<std::pair<std::string, int>> off_spine_witness(const OffSpineEntity& entity,
                                                           const Spine& spine) {
  const auto dp = distance_dp(spine, entity_leaves(entity, spine));
  const auto leaves = entity_leaves(entity, spine);
  std::vector<std::pair<std::string, int>> terms;
  const std::function<void(int, bool, int)> emit = [&](int v, bool cover, int sign) {
    if (spine.is_leaf(v)) {
      const bool in = leaves.count(v) > 0;
      if (cover == in) terms.emplace_back(spine.node(v).id, sign);
      return;
    }
    const bool take = cover ? dp.cover_takes_node[v] : dp.complement_takes_node[v];
    if (take) {
      terms.emplace_back(spine.node(v).id, sign);
      for (const int c : spine.node(v).children) emit(c, !cover, -sign);
    } else {
      for (const int c : spine.node(v).children) emit(c, cover, sign);
    }
  };
  emit(spine.root(), true, +1);
  return terms;
}

namespace {

// One proposed grouping of a tract's blocks. Applies to a node array copy.
struct Grouping {
  int tract;                                  // node index in the source spine
  std::vector<std::vector<int>> groups;       // leaf indices per custom group
  std::vector<std::string> names;
};

Spine apply_groupings(const Spine& spine, const std::vector<Grouping>& groupings) {
  const int bg_level = spine.leaf_level() - 1;
  std::set<int> regrouped_tracts;
  for (const auto& g : groupings) regrouped_tracts.insert(g.tract);

  std::vector<GeoNode> out;
  const std::function<int(int, int)> build = [&](int v, int new_parent) -> int {
    const GeoNode& n = spine.node(v);
    GeoNode copy = n;
    copy.parent = new_parent;
    copy.children.clear();
    if (!n.children.empty()) {
      copy.housing_units = 0;
      copy.occupied_gq.clear();
    }
    const int self = static_cast<int>(out.size());
    out.push_back(std::move(copy));
    if (regrouped_tracts.count(v)) {
      const auto it = std::find_if(groupings.begin(), groupings.end(),
                                   [&](const Grouping& g) { return g.tract == v; });
      for (std::size_t gi = 0; gi < it->groups.size(); ++gi) {
        GeoNode bg;
        bg.id = it->names[gi];
        bg.level = bg_level;
        bg.parent = self;
        const int bg_idx = static_cast<int>(out.size());
        out.push_back(std::move(bg));
        out[self].children.push_back(bg_idx);
        for (const int leaf : it->groups[gi]) {
          const int nl = build(leaf, bg_idx);
          out[bg_idx].children.push_back(nl);
        }
      }
      return self;
    }
    for (const int c : n.children) {
      const int nc = build(c, self);
      out[self].children.push_back(nc);
    }
    return self;
  };
  build(spine.root(), -1);
  return rebuild_spine(spine, out, 0);
}

std::string gq_signature(const GeoNode& n) {
  std::string sig;
  for (const auto& [type, count] : n.occupied_gq)
    if (count > 0) sig += (sig.empty() ? "" : "_") + type;
  return sig;
}

}  // namespace

Spine optimize_block_groups(const Spine& spine, const std::vector<OffSpineEntity>& targets) {
  if (spine.leaf_level() < 2) return spine;
  const int tract_level = spine.leaf_level() - 2;

  // Pass 1: isolate GQ-bearing blocks into per-signature groups per tract.
  // Non-GQ blocks keep their original grouping.
  const auto make_isolation = [&](const Spine& s) {
    std::vector<Grouping> groupings;
    for (const int tract : s.nodes_at_level(tract_level)) {
      bool any_gq = false;
      for (const int leaf : s.leaves_under(tract))
        any_gq = any_gq || !gq_signature(s.node(leaf)).empty();
      if (!any_gq) continue;
      Grouping g;
      g.tract = tract;
      std::map<std::string, std::vector<int>> by_sig;
      for (const int bg : s.node(tract).children) {
        std::vector<int> plain;
        for (const int leaf : s.node(bg).children) {
          const std::string sig = gq_signature(s.node(leaf));
          if (sig.empty())
            plain.push_back(leaf);
          else
            by_sig[sig].push_back(leaf);
        }
        if (!plain.empty()) {
          g.groups.push_back(plain);
          g.names.push_back(s.node(bg).id);
        }
      }
      for (auto& [sig, leaves] : by_sig) {
        g.groups.push_back(leaves);
        g.names.push_back(s.node(tract).id + "_GQ_" + sig);
      }
      groupings.push_back(std::move(g));
    }
    return groupings;
  };

  Spine current = apply_groupings(spine, make_isolation(spine));
  if (targets.empty()) return current;

  const auto total_distance = [&](const Spine& s) {
    int sum = 0;
    for (const auto& t : targets) sum += off_spine_distance(t, s);
    return sum;
  };

  int best = total_distance(current);
  const int max_rounds = 10 * static_cast<int>(targets.size()) + 10;
  for (int round = 0; round < max_rounds; ++round) {
    // Largest-distance target first.
    std::vector<std::pair<int, std::size_t>> ranked;
    for (std::size_t t = 0; t < targets.size(); ++t)
      ranked.emplace_back(-off_spine_distance(targets[t], current), t);
    std::sort(ranked.begin(), ranked.end());

    bool improved = false;
    for (const auto& [neg_dist, ti] : ranked) {
      (void)neg_dist;
      const auto& target = targets[ti];
      std::set<std::string> member(target.leaf_ids.begin(), target.leaf_ids.end());

      std::vector<Grouping> proposal;
      for (const int tract : current.nodes_at_level(current.leaf_level() - 2)) {
        Grouping g;
        g.tract = tract;
        std::vector<int> inside, outside;
        bool any_regroup = false;
        for (const int bg : current.node(tract).children) {
          std::vector<int> bg_inside, bg_outside;
          for (const int leaf : current.node(bg).children) {
            if (!gq_signature(current.node(leaf)).empty()) continue;  // stays isolated
            (member.count(current.node(leaf).id) ? bg_inside : bg_outside).push_back(leaf);
          }
          if (!bg_inside.empty() && !bg_outside.empty()) any_regroup = true;
          inside.insert(inside.end(), bg_inside.begin(), bg_inside.end());
          outside.insert(outside.end(), bg_outside.begin(), bg_outside.end());
          // GQ groups are carried over unchanged.
          std::vector<int> gq_members;
          for (const int leaf : current.node(bg).children)
            if (!gq_signature(current.node(leaf)).empty()) gq_members.push_back(leaf);
          if (!gq_members.empty()) {
            g.groups.push_back(gq_members);
            g.names.push_back(current.node(bg).id);
          }
        }
        if (!any_regroup || inside.empty()) continue;
        g.groups.push_back(inside);
        g.names.push_back(current.node(tract).id + "_cbg_" + target.name);
        if (!outside.empty()) {
          g.groups.push_back(outside);
          g.names.push_back(current.node(tract).id + "_cbg_" + target.name + "_bal");
        }
        proposal.push_back(std::move(g));
      }
      if (proposal.empty()) continue;

      Spine candidate = apply_groupings(current, proposal);
      const int dist = total_distance(candidate);
      if (dist < best) {
        best = dist;
        current = std::move(candidate);
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  return current;
}

}  // namespace topdown
