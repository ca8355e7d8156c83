#include "topdown/engine.hpp"

#include <algorithm>
#include <atomic>
#include <ostream>
#include <stdexcept>
#include <thread>

namespace topdown {

namespace {

// Deterministic parallel loop: results land by index, the lowest-index
// exception wins.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max(1, workers);
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min<int>(workers, static_cast<int>(n)); ++w)
    pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

void MeasurementSet::add(NoisyMeasurement m) {
  const auto key = std::make_pair(m.node_id, m.group);
  if (index_.count(key))
    throw std::invalid_argument("duplicate measurement for " + m.node_id + "/" + m.group);
  index_[key] = items_.size();
  items_.push_back(std::move(m));
}

const NoisyMeasurement* MeasurementSet::find(const std::string& node_id,
                                             const std::string& group) const {
  const auto it = index_.find(std::make_pair(node_id, group));
  return it == index_.end() ? nullptr : &items_[it->second];
}

void MeasurementSet::write_csv(std::ostream& out) const {
  out << "geocode,query,row,value,sigma2_num,sigma2_den\n";
  std::vector<std::size_t> order(items_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ka = std::tie(items_[a].node_id, items_[a].group);
    const auto kb = std::tie(items_[b].node_id, items_[b].group);
    return ka < kb;
  });
  for (const std::size_t i : order) {
    const auto& m = items_[i];
    for (std::size_t r = 0; r < m.values.size(); ++r)
      out << m.node_id << ',' << m.group << ',' << r << ',' << m.values[r] << ','
          << m.sigma2.numerator().str() << ',' << m.sigma2.denominator().str() << '\n';
  }
}

std::map<std::string, std::vector<std::int64_t>> aggregate_confidential(const Spine& spine,
                                                                        const Schema& schema,
                                                                        const NodeData& data) {
  const std::size_t c = schema.cell_count();
  std::map<std::string, std::vector<std::int64_t>> conf;
  // Leaves first, then sums in reverse BFS order.
  std::vector<int> order = {spine.root()};
  for (std::size_t h = 0; h < order.size(); ++h)
    for (const int ch : spine.node(order[h]).children) order.push_back(ch);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const GeoNode& n = spine.node(*it);
    std::vector<std::int64_t> x(c, 0);
    if (spine.is_leaf(*it)) {
      const auto found = data.leaf_histograms.find(n.id);
      if (found != data.leaf_histograms.end()) {
        if (found->second.size() != c)
          throw std::invalid_argument("histogram at '" + n.id + "' has the wrong cell count");
        for (std::size_t cell = 0; cell < c; ++cell) x[cell] = found->second[cell];
      }
    } else {
      for (const int ch : n.children) {
        const auto& child = conf.at(spine.node(ch).id);
        for (std::size_t cell = 0; cell < c; ++cell) x[cell] += child[cell];
      }
    }
    conf.emplace(n.id, std::move(x));
  }
  return conf;
}

MeasurementSet measure_spine(const Spine& spine, const Schema& schema,
                             const QueryStrategy& strategy, const AllocationTable& alloc,
                             const NodeData& data, std::uint64_t master_seed,
                             const EngineOptions& options) {
  total_rho(alloc, spine, strategy);  // fail fast on invalid allocations
  const auto conf = aggregate_confidential(spine, schema, data);
  const BitSource master(master_seed);

  struct Task {
    int node;
    int group;
  };
  std::vector<Task> tasks;
  for (std::size_t v = 0; v < spine.node_count(); ++v) {
    const GeoNode& n = spine.node(v);
    const auto share = alloc.node_share.find(n.id);
    if (share == alloc.node_share.end() || share->second == Rational(0)) continue;
    const auto& ls = strategy.at(n.level);
    for (std::size_t g = 0; g < ls.groups.size(); ++g) {
      if (ls.shares[g] == Rational(0)) continue;
      tasks.push_back({static_cast<int>(v), static_cast<int>(g)});
    }
  }

  std::vector<NoisyMeasurement> results(tasks.size());
  parallel_for(tasks.size(), options.workers, [&](std::size_t t) {
    const GeoNode& n = spine.node(tasks[t].node);
    const auto& ls = strategy.at(n.level);
    const QueryGroup& q = ls.groups[tasks[t].group];
    const Rational sigma2 = measurement_sigma2(alloc, n.id, ls.shares[tasks[t].group]);
    BitSource stream = master.substream(n.id + "/" + q.name());
    const Histogram hist(schema, conf.at(n.id));
    NoisyMeasurement m;
    m.node_id = n.id;
    m.group = q.name();
    m.sigma2 = sigma2;
    m.values = q.evaluate(hist);
    for (auto& value : m.values) value += sample_discrete_gaussian(sigma2, stream);
    results[t] = std::move(m);
  });

  MeasurementSet out;
  for (auto& m : results) out.add(std::move(m));
  return out;
}

namespace {

// Stacks per-node query rows block-diagonally over the joint child space.
void stack_group_rows(Eigen::MatrixXd& q, Eigen::Index at, const QueryGroup& group,
                      std::size_t node_index, std::size_t c) {
  for (std::size_t cell = 0; cell < c; ++cell)
    if (group.row_of(cell) >= 0) q(at + group.row_of(cell), node_index * c + cell) = 1.0;
}

// One joint solve over `nodes` (all at the same level): multi-pass weighted
// least squares, then multi-pass controlled rounding.
std::vector<std::int64_t> solve_space(const Spine& spine, const Schema& schema,
                                      const QueryStrategy& strategy,
                                      const MeasurementSet& measurements,
                                      const std::vector<int>& nodes, const ConstraintSet& cs) {
  const std::size_t c = schema.cell_count();
  const std::size_t n = c * nodes.size();
  const int level = spine.node(nodes[0]).level;
  const auto& ls = strategy.at(level);

  // Measurements for one pass, stacked over nodes and groups.
  struct PassRows {
    Eigen::MatrixXd q;
    Eigen::VectorXd w, m;
  };
  const auto gather_pass = [&](const std::vector<int>& pass) {
    std::size_t rows = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k)
      for (const int g : pass)
        if (measurements.find(spine.node(nodes[k]).id, ls.groups[g].name()))
          rows += ls.groups[g].rows();
    PassRows pr;
    pr.q = Eigen::MatrixXd::Zero(rows, n);
    pr.w = Eigen::VectorXd::Zero(rows);
    pr.m = Eigen::VectorXd::Zero(rows);
    Eigen::Index at = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      for (const int g : pass) {
        const auto* meas = measurements.find(spine.node(nodes[k]).id, ls.groups[g].name());
        if (!meas) continue;
        stack_group_rows(pr.q, at, ls.groups[g], k, c);
        const double inv_var = 1.0 / to_double(meas->sigma2);
        for (std::size_t r = 0; r < meas->values.size(); ++r) {
          pr.w(at + r) = inv_var;
          pr.m(at + r) = static_cast<double>(meas->values[r]);
        }
        at += ls.groups[g].rows();
      }
    }
    return pr;
  };

  std::vector<std::vector<int>> l2_passes = ls.l2_passes;
  if (l2_passes.empty()) {
    std::vector<int> all(ls.groups.size());
    for (std::size_t g = 0; g < all.size(); ++g) all[g] = static_cast<int>(g);
    l2_passes.push_back(all);
  }

  Eigen::VectorXd xt = Eigen::VectorXd::Zero(n);
  std::vector<LeastSquaresProblem::IntervalBlock> prior_blocks;
  std::vector<std::pair<Eigen::MatrixXd, Eigen::VectorXd>> tolerance_blocks;
  for (std::size_t pass = 0; pass < l2_passes.size(); ++pass) {
    const PassRows pr = gather_pass(l2_passes[pass]);
    LeastSquaresProblem p;
    p.query = pr.q;
    p.weight = pr.w;
    p.target = pr.m;
    p.constraints = cs;
    p.interval_blocks = prior_blocks;
    const RealSolution sol = nnls_solve(p);
    xt = sol.x;
    if (pr.q.rows() == 0) continue;  // nothing measured in this pass
    tolerance_blocks.emplace_back(pr.q, pr.q * xt);
    if (pass + 1 < l2_passes.size()) {
      const double tau = solve_tolerance(cs, tolerance_blocks);
      prior_blocks.push_back({pr.q, pr.q * xt, tau + 1e-7});
    }
  }

  // Rounding passes against the hierarchical objective tree.
  std::vector<std::vector<int>> rounder_passes = ls.rounder_passes;
  std::vector<QueryGroup> rounder_groups = ls.rounder_groups;
  if (rounder_groups.empty()) {
    rounder_groups.push_back(detailed_query(schema));
    rounder_passes = {{0}};
  }
  if (rounder_passes.empty()) {
    std::vector<int> all(rounder_groups.size());
    for (std::size_t g = 0; g < all.size(); ++g) all[g] = static_cast<int>(g);
    rounder_passes.push_back(all);
  }

  for (std::size_t j = 0; j < n; ++j) xt(j) = std::max(0.0, xt(j));
  std::vector<std::int64_t> xhat;
  std::vector<std::pair<Eigen::MatrixXd, Eigen::VectorXd>> pinned;
  for (std::size_t pass = 0; pass < rounder_passes.size(); ++pass) {
    std::size_t rows = 0;
    for (const int g : rounder_passes[pass]) rows += rounder_groups[g].rows();
    Eigen::MatrixXd obj = Eigen::MatrixXd::Zero(rows * nodes.size(), n);
    Eigen::Index at = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k)
      for (const int g : rounder_passes[pass]) {
        stack_group_rows(obj, at, rounder_groups[g], k, c);
        at += rounder_groups[g].rows();
      }
    RounderProblem rp;
    rp.fractional_target = xt;
    rp.constraints = cs;
    rp.objective_rows = obj;
    rp.pinned = pinned;
    const IntegerSolution sol = round_solve(rp);
    xhat = sol.x;
    if (pass + 1 < rounder_passes.size()) {
      Eigen::VectorXd xhat_d(n);
      for (std::size_t j = 0; j < n; ++j) xhat_d(j) = static_cast<double>(xhat[j]);
      pinned.emplace_back(obj, obj * xhat_d);
    }
  }
  return xhat;
}

}  // namespace

MdfOutput topdown_run(const Spine& spine, const Schema& schema, const QueryStrategy& strategy,
                      const AllocationTable& alloc, const InvariantSpec& inv,
                      const StructuralZeroSet& zeros, const NodeData& data,
                      const MeasurementSet& measurements, const EngineOptions& options) {
  total_rho(alloc, spine, strategy);
  const auto conf = aggregate_confidential(spine, schema, data);
  const std::size_t c = schema.cell_count();

  MdfOutput out;
  const auto annotate = [](const std::string& id, const std::exception& e) {
    return std::runtime_error("node '" + id + "': " + e.what());
  };

  // Root first.
  {
    const int root = spine.root();
    const Histogram hist(schema, conf.at(spine.node(root).id));
    try {
      const ConstraintSet cs = build_root_constraints(spine, root, schema, inv, zeros, hist);
      out.node_solutions[spine.node(root).id] =
          solve_space(spine, schema, strategy, measurements, {root}, cs);
    } catch (const std::exception& e) {
      throw annotate(spine.node(root).id, e);
    }
  }

  // Then children of each parent, one tree depth at a time; distinct
  // parents within a wave are independent.
  std::vector<std::vector<int>> waves;
  std::vector<int> frontier = {spine.root()};
  while (!frontier.empty()) {
    std::vector<int> parents, next;
    for (const int v : frontier) {
      if (!spine.is_leaf(v)) parents.push_back(v);
      for (const int ch : spine.node(v).children) next.push_back(ch);
    }
    if (!parents.empty()) waves.push_back(parents);
    frontier = std::move(next);
  }

  for (const auto& wave : waves) {
    std::vector<std::map<std::string, std::vector<std::int64_t>>> results(wave.size());
    parallel_for(wave.size(), options.workers, [&](std::size_t i) {
      const int parent = wave[i];
      const auto& children = spine.node(parent).children;
      std::vector<Histogram> child_conf;
      child_conf.reserve(children.size());
      for (const int ch : children) child_conf.emplace_back(schema, conf.at(spine.node(ch).id));
      try {
        const ConstraintSet cs = build_children_constraints(
            spine, parent, schema, inv, zeros, out.node_solutions.at(spine.node(parent).id),
            child_conf);
        const auto stacked = solve_space(spine, schema, strategy, measurements, children, cs);
        for (std::size_t k = 0; k < children.size(); ++k) {
          std::vector<std::int64_t> x(c);
          for (std::size_t cell = 0; cell < c; ++cell) x[cell] = stacked[k * c + cell];
          results[i][spine.node(children[k]).id] = std::move(x);
        }
      } catch (const std::exception& e) {
        throw annotate(spine.node(parent).id, e);
      }
    });
    for (auto& r : results)
      for (auto& [id, x] : r) out.node_solutions[id] = std::move(x);
  }

  for (const int leaf : spine.leaves()) out.leaf_order.push_back(spine.node(leaf).id);
  std::sort(out.leaf_order.begin(), out.leaf_order.end());
  return out;
}

MdfOutput block_by_block_run(const Spine& spine, const Schema& schema,
                             const QueryStrategy& strategy, const AllocationTable& alloc,
                             const InvariantSpec& inv, const StructuralZeroSet& zeros,
                             const NodeData& data, const MeasurementSet& measurements,
                             const EngineOptions& options) {
  for (int lv = 0; lv < spine.leaf_level(); ++lv)
    if (!strategy.at(lv).groups.empty())
      throw std::invalid_argument("block-by-block runs take a leaf-level strategy only");
  total_rho(alloc, spine, strategy);
  const auto conf = aggregate_confidential(spine, schema, data);
  const std::size_t c = schema.cell_count();
  const auto leaves = spine.leaves();

  MdfOutput out;
  std::vector<std::vector<std::int64_t>> solved(leaves.size());
  parallel_for(leaves.size(), options.workers, [&](std::size_t i) {
    const int leaf = leaves[i];
    const Histogram hist(schema, conf.at(spine.node(leaf).id));
    try {
      const ConstraintSet cs = build_root_constraints(spine, leaf, schema, inv, zeros, hist);
      solved[i] = solve_space(spine, schema, strategy, measurements, {leaf}, cs);
    } catch (const std::exception& e) {
      throw std::runtime_error("node '" + spine.node(leaf).id + "': " + e.what());
    }
  });
  for (std::size_t i = 0; i < leaves.size(); ++i)
    out.node_solutions[spine.node(leaves[i]).id] = std::move(solved[i]);

  // Upper geographies by summation.
  std::vector<int> order = {spine.root()};
  for (std::size_t h = 0; h < order.size(); ++h)
    for (const int ch : spine.node(order[h]).children) order.push_back(ch);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (spine.is_leaf(*it)) continue;
    std::vector<std::int64_t> sum(c, 0);
    for (const int ch : spine.node(*it).children) {
      const auto& x = out.node_solutions.at(spine.node(ch).id);
      for (std::size_t cell = 0; cell < c; ++cell) sum[cell] += x[cell];
    }
    out.node_solutions[spine.node(*it).id] = std::move(sum);
  }

  for (const int leaf : leaves) out.leaf_order.push_back(spine.node(leaf).id);
  std::sort(out.leaf_order.begin(), out.leaf_order.end());
  return out;
}

void for_each_record(const MdfOutput& out, const Schema& schema,
                     const std::function<void(const std::string&, std::size_t)>& fn) {
  for (const auto& geocode : out.leaf_order) {
    const auto& x = out.node_solutions.at(geocode);
    for (std::size_t cell = 0; cell < schema.cell_count(); ++cell)
      for (std::int64_t k = 0; k < x[cell]; ++k) fn(geocode, cell);
  }
}

void write_mdf_csv(const MdfOutput& out, const Schema& schema, std::ostream& os) {
  os << "geocode";
  for (const auto& attr : schema.attributes()) os << ',' << attr.name;
  os << '\n';
  for_each_record(out, schema, [&](const std::string& geocode, std::size_t cell) {
    os << geocode;
    const auto idx = schema.unflatten_index(cell);
    for (std::size_t a = 0; a < idx.size(); ++a)
      os << ',' << schema.attributes()[a].levels[idx[a]];
    os << '\n';
  });
}

void validate_output(const MdfOutput& out, const Spine& spine, const Schema& schema,
                     const InvariantSpec& inv, const StructuralZeroSet& zeros,
                     const NodeData& data) {
  const auto conf = aggregate_confidential(spine, schema, data);
  const std::size_t c = schema.cell_count();
  const auto fail = [](const std::string& what) { throw std::runtime_error("validator: " + what); };

  for (std::size_t v = 0; v < spine.node_count(); ++v) {
    const GeoNode& n = spine.node(v);
    const auto it = out.node_solutions.find(n.id);
    if (it == out.node_solutions.end()) fail("missing solution for '" + n.id + "'");
    const auto& x = it->second;
    if (x.size() != c) fail("wrong histogram length at '" + n.id + "'");
    for (const auto val : x)
      if (val < 0) fail("negative count at '" + n.id + "'");
    if (!spine.is_leaf(v)) {
      std::vector<std::int64_t> sum(c, 0);
      for (const int ch : n.children) {
        const auto& cx = out.node_solutions.at(spine.node(ch).id);
        for (std::size_t cell = 0; cell < c; ++cell) sum[cell] += cx[cell];
      }
      if (sum != x) fail("children do not aggregate to '" + n.id + "'");
    }

    // Per-node rows, with the state total handled group-wise below.
    InvariantSpec no_state = inv;
    no_state.state_total_level = -1;
    const Histogram hist(schema, conf.at(n.id));
    const ConstraintSet cs = build_root_constraints(spine, static_cast<int>(v), schema,
                                                    no_state, zeros, hist);
    std::string witness;
    if (!check_feasible(std::span<const std::int64_t>(x), cs, &witness))
      fail("constraint " + witness + " violated");

    if (inv.state_total_level >= 0 && n.level < inv.state_total_level) {
      std::int64_t total = 0, want = 0;
      for (std::size_t cell = 0; cell < c; ++cell) {
        total += x[cell];
        want += conf.at(n.id)[cell];
      }
      if (total != want) fail("total at '" + n.id + "' is not invariant");
    }
  }

  // State-equivalent group totals at the binding level.
  if (inv.state_total_level >= 0) {
    std::map<std::string, std::pair<std::int64_t, std::int64_t>> groups;  // got, want
    for (const int v : spine.nodes_at_level(inv.state_total_level)) {
      const GeoNode& n = spine.node(v);
      const std::string key = n.state_group.empty() ? n.id : n.state_group;
      auto& [got, want] = groups[key];
      for (std::size_t cell = 0; cell < c; ++cell) {
        got += out.node_solutions.at(n.id)[cell];
        want += conf.at(n.id)[cell];
      }
    }
    for (const auto& [key, pair] : groups)
      if (pair.first != pair.second) fail("state total for '" + key + "' is not invariant");
  }
}

}  // namespace topdown
