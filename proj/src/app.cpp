#include "topdown/app.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

namespace topdown {

namespace {

constexpr const char* kVersion = "0.1.0";

int log_level() {
  const char* env = std::getenv("TOPDOWN_LOG");
  if (!env) return 1;
  const std::string v = env;
  if (v == "quiet") return 0;
  if (v == "debug") return 2;
  return 1;
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "[topdown] " << msg << "\n";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, ',')) out.push_back(cur);
  return out;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

NodeData read_microdata_csv(const std::string& path, const Schema& schema, const Spine& spine) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open microdata file '" + path + "'");
  NodeData data;
  std::map<std::string, std::vector<std::int64_t>> counts;
  std::string line;
  bool header = true;
  const std::size_t ncols = 1 + schema.attributes().size();
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    const auto f = split_csv_line(line);
    if (f.size() != ncols)
      throw std::invalid_argument("microdata row has " + std::to_string(f.size()) +
                                  " columns, expected " + std::to_string(ncols));
    const int node = spine.index_of(f[0]);
    if (!spine.is_leaf(node))
      throw std::invalid_argument("geocode '" + f[0] + "' is not a leaf");
    std::vector<std::size_t> idx(schema.attributes().size());
    for (std::size_t a = 0; a < idx.size(); ++a) idx[a] = schema.level_index(a, f[a + 1]);
    auto& x = counts.try_emplace(f[0], schema.cell_count(), 0).first->second;
    ++x[schema.flatten_index(idx)];
  }
  for (auto& [id, x] : counts) data.leaf_histograms.emplace(id, Histogram(schema, std::move(x)));
  return data;
}

namespace {

void write_certificate(const RunPlan& plan, std::uint64_t seed, int workers,
                       const std::map<std::string, double>& timings, std::ostream& os) {
  os << "[certificate]\n";
  os << "code_version = " << kVersion << "\n";
  os << "config_digest = " << plan.config_digest << "\n";
  os << "master_seed = " << seed << "\n";
  os << "workers = " << workers << "\n";
  os << "engine = " << plan.engine << "\n";
  os << "rho = " << to_string(plan.rho) << "\n";
  os << "psi = " << to_string(plan.alloc.psi) << "\n";
  for (const double delta : plan.delta_grid)
    os << "epsilon(delta=" << delta << ") = " << epsilon_of_rho(to_double(plan.rho), delta)
       << "\n";
  os << "\n[allocation]\n";
  for (const auto& [id, share] : plan.alloc.node_share)
    os << "node_share = " << id << ": " << to_string(share) << "\n";
  os << "\n[strategy]\n";
  for (std::size_t lv = 0; lv < plan.strategy.levels.size(); ++lv) {
    const auto& ls = plan.strategy.levels[lv];
    if (ls.groups.empty()) continue;
    os << "level = " << plan.spine.level_names()[lv] << ":";
    for (std::size_t g = 0; g < ls.groups.size(); ++g)
      os << (g ? "," : "") << " " << ls.groups[g].name() << ":" << to_string(ls.shares[g]);
    os << "\n";
  }
  os << "\n[timings]\n";
  for (const auto& [phase, secs] : timings) os << phase << "_seconds = " << secs << "\n";
}

}  // namespace

int run_app(const RunPlan& plan, const RunOverrides& overrides) {
  const std::uint64_t seed = overrides.seed.value_or(plan.seed);
  int workers = overrides.workers.value_or(plan.workers);
  if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
  if (workers <= 0) workers = 1;
  EngineOptions opts;
  opts.workers = workers;

  std::map<std::string, double> timings;
  const auto wall0 = std::chrono::steady_clock::now();

  if (plan.input_csv.empty()) {
    std::cerr << "[reader] no input microdata configured ([run] input)\n";
    return 2;
  }
  NodeData data;
  try {
    const auto t0 = std::chrono::steady_clock::now();
    data = read_microdata_csv(plan.input_csv, plan.schema, plan.spine);
    timings["reader"] = seconds_since(t0);
  } catch (const std::exception& e) {
    std::cerr << "[reader] " << e.what() << "\n";
    return 2;
  }

  MeasurementSet measurements;
  MdfOutput out;
  try {
    const auto t0 = std::chrono::steady_clock::now();
    measurements = measure_spine(plan.spine, plan.schema, plan.strategy, plan.alloc, data, seed,
                                 opts);
    timings["measure"] = seconds_since(t0);
    const auto t1 = std::chrono::steady_clock::now();
    if (plan.engine == "block_by_block")
      out = block_by_block_run(plan.spine, plan.schema, plan.strategy, plan.alloc,
                               plan.invariants, plan.zeros, data, measurements, opts);
    else
      out = topdown_run(plan.spine, plan.schema, plan.strategy, plan.alloc, plan.invariants,
                        plan.zeros, data, measurements, opts);
    timings["estimate"] = seconds_since(t1);
  } catch (const std::exception& e) {
    std::cerr << "[engine] " << e.what() << "\n";
    return 3;
  }

  try {
    const auto t0 = std::chrono::steady_clock::now();
    validate_output(out, plan.spine, plan.schema, plan.invariants, plan.zeros, data);
    timings["validate"] = seconds_since(t0);
  } catch (const std::exception& e) {
    std::cerr << "[validator] " << e.what() << "\n";
    return 4;
  }

  try {
    const auto t0 = std::chrono::steady_clock::now();
    std::filesystem::create_directories(plan.output_dir);
    {
      std::ofstream os(plan.output_dir + "/mdf.csv");
      write_mdf_csv(out, plan.schema, os);
    }
    {
      std::ofstream os(plan.output_dir + "/measurements.csv");
      measurements.write_csv(os);
    }
    {
      // Metrics against the confidential input, when configured.
      if (plan.metrics.level >= 0 || !plan.metrics.query_names.empty()) {
        const LeafCounts mdf = leaf_counts_of(out);
        LeafCounts cef = leaf_counts_of(data, plan.schema);
        for (const auto& id : out.leaf_order) cef.try_emplace(id, plan.schema.cell_count(), 0);
        MetricReport report;
        if (plan.metrics.level >= 0) {
          const UnitSet units = UnitSet::at_level(plan.spine, plan.metrics.level);
          for (const auto& name : plan.metrics.query_names)
            report.add(plan.spine.level_names()[plan.metrics.level], name, "mean_abs_error",
                       abs_error_by_level(mdf, cef, units, plan.query(name), plan.schema));
        }
        std::ofstream csv(plan.output_dir + "/metrics.csv");
        report.write_csv(csv);
        std::ofstream txt(plan.output_dir + "/metrics.txt");
        report.write_text(txt);
      }
    }
    timings["write"] = seconds_since(t0);
    timings["wall"] = seconds_since(wall0);
    std::ofstream cert(plan.output_dir + "/certificate.txt");
    write_certificate(plan, seed, workers, timings, cert);
  } catch (const std::exception& e) {
    std::cerr << "[writer] " << e.what() << "\n";
    return 5;
  }
  log_info("run complete: " + plan.output_dir);
  return 0;
}

namespace {

// Inversion-sampled Poisson; deterministic across platforms for one build.
std::int64_t sample_poisson(double mean, BitSource& bits) {
  if (mean <= 0) return 0;
  const double u =
      static_cast<double>(bits.raw64() >> 11) * (1.0 / 9007199254740992.0);  // [0,1)
  double p = std::exp(-mean), cdf = p;
  std::int64_t k = 0;
  while (u > cdf && k < 100000) {
    ++k;
    p *= mean / static_cast<double>(k);
    cdf += p;
  }
  return k;
}

}  // namespace

void synthesize_app(const RunPlan& plan, const std::string& out_csv) {
  const Schema& schema = plan.schema;
  const std::size_t c = schema.cell_count();
  std::vector<bool> forbidden(c, false);
  for (const std::size_t cell : plan.zeros.forbidden_cells(schema)) forbidden[cell] = true;

  // Cell pools: per facility type, and the non-facility remainder.
  const auto cells_of_gq_level = [&](const std::string& level) {
    std::vector<std::size_t> cells;
    const std::size_t a = schema.attribute_index(plan.invariants.gq_attribute);
    const std::size_t want = schema.level_index(a, level);
    for (std::size_t cell = 0; cell < c; ++cell)
      if (!forbidden[cell] && schema.unflatten_index(cell)[a] == want) cells.push_back(cell);
    return cells;
  };
  const bool has_gq = !plan.invariants.gq_attribute.empty();
  std::vector<std::size_t> household_cells;
  for (std::size_t cell = 0; cell < c; ++cell) {
    if (forbidden[cell]) continue;
    if (has_gq) {
      const std::size_t a = schema.attribute_index(plan.invariants.gq_attribute);
      const std::string& label =
          schema.attributes()[a].levels[schema.unflatten_index(cell)[a]];
      bool is_type = false;
      for (const auto& t : plan.invariants.gq_types.empty()
                               ? std::vector<std::string>{}
                               : plan.invariants.gq_types)
        is_type = is_type || t == label;
      if (plan.invariants.gq_types.empty())
        is_type = label != plan.invariants.householder_level;
      if (is_type) continue;
    }
    household_cells.push_back(cell);
  }
  if (household_cells.empty()) throw std::runtime_error("no admissible non-facility cells");

  const std::size_t householder_attr =
      plan.invariants.householder_attribute.empty()
          ? static_cast<std::size_t>(-1)
          : schema.attribute_index(plan.invariants.householder_attribute);

  const BitSource master(plan.synth_seed);
  std::ostringstream body;
  for (const int leaf : plan.spine.leaves()) {
    const GeoNode& n = plan.spine.node(leaf);
    BitSource bits = master.substream("synth/" + n.id);
    std::vector<std::pair<std::string, std::size_t>> records;  // (id, cell)

    if (has_gq) {
      for (const auto& [type, count] : n.occupied_gq) {
        const auto pool = cells_of_gq_level(type);
        if (pool.empty())
          throw std::runtime_error("no admissible cells for facility type '" + type + "' at '" +
                                   n.id + "'");
        for (std::int64_t k = 0; k < count; ++k)
          records.emplace_back(n.id, pool[bits.below_u64(pool.size())]);
      }
    }

    std::int64_t persons = sample_poisson(plan.synth_leaf_mean, bits);
    std::int64_t householders = 0;
    for (std::int64_t k = 0; k < persons; ++k) {
      std::size_t cell = household_cells[bits.below_u64(household_cells.size())];
      if (householder_attr != static_cast<std::size_t>(-1)) {
        const std::size_t want =
            schema.level_index(householder_attr, plan.invariants.householder_level);
        const bool is_holder = schema.unflatten_index(cell)[householder_attr] == want;
        if (is_holder) {
          if (householders >= n.housing_units) {
            // Re-draw among non-householder cells; give up if none exist.
            std::vector<std::size_t> alt;
            for (const std::size_t cc : household_cells)
              if (schema.unflatten_index(cc)[householder_attr] != want) alt.push_back(cc);
            if (alt.empty()) break;
            cell = alt[bits.below_u64(alt.size())];
          } else {
            ++householders;
          }
        }
      }
      records.emplace_back(n.id, cell);
    }
    for (const auto& [id, cell] : records) {
      body << id;
      const auto idx = schema.unflatten_index(cell);
      for (std::size_t a = 0; a < idx.size(); ++a)
        body << ',' << schema.attributes()[a].levels[idx[a]];
      body << '\n';
    }
  }

  std::ofstream os(out_csv);
  if (!os) throw std::runtime_error("cannot write '" + out_csv + "'");
  os << "geocode";
  for (const auto& attr : schema.attributes()) os << ',' << attr.name;
  os << '\n' << body.str();
  log_info("synthesized microdata: " + out_csv);
}

int report_app(const RunPlan& plan, const std::string& mdf_csv, const std::string& cef_csv,
               const std::string& out_dir) {
  const NodeData mdf_data = read_microdata_csv(mdf_csv, plan.schema, plan.spine);
  const NodeData cef_data = read_microdata_csv(cef_csv, plan.schema, plan.spine);
  LeafCounts mdf = leaf_counts_of(mdf_data, plan.schema);
  LeafCounts cef = leaf_counts_of(cef_data, plan.schema);
  for (const int leaf : plan.spine.leaves()) {
    mdf.try_emplace(plan.spine.node(leaf).id, plan.schema.cell_count(), 0);
    cef.try_emplace(plan.spine.node(leaf).id, plan.schema.cell_count(), 0);
  }

  std::filesystem::create_directories(out_dir);
  MetricReport report;
  const auto& m = plan.metrics;
  bool thresholds_pass = true;

  if (m.level >= 0) {
    const UnitSet units = UnitSet::at_level(plan.spine, m.level);
    const std::string level_name = plan.spine.level_names()[m.level];
    for (const auto& name : m.query_names) {
      const double err = abs_error_by_level(mdf, cef, units, plan.query(name), plan.schema);
      report.add(level_name, name, "mean_abs_error", err);
    }
    for (const auto& name : m.query_names) {
      const auto rows = signed_quantiles(mdf, cef, units, plan.query(name), plan.schema,
                                         m.buckets, m.probabilities);
      std::ofstream dat;
      if (m.gnuplot) dat.open(out_dir + "/signed_quantiles_" + name + ".dat");
      for (const auto& row : rows) {
        if (row.empty) continue;
        report.add(level_name + "[" + row.bucket + "]", name, "mean_l1", row.mean_l1);
        for (std::size_t q = 0; q < row.quantiles.size(); ++q)
          report.add(level_name + "[" + row.bucket + "]", name,
                     "q(" + std::to_string(m.probabilities[q]) + ")", row.quantiles[q]);
        if (m.gnuplot) {
          dat << row.bucket << ' ' << row.mean_l1;
          for (const double v : row.quantiles) dat << ' ' << v;
          dat << '\n';
        }
      }
    }
  }
  if (!m.blau_query.empty() && m.blau_level >= 0) {
    const UnitSet units = UnitSet::at_level(plan.spine, m.blau_level);
    const auto rows = blau_quintile_bias(mdf, cef, units, plan.query(m.blau_query), plan.schema);
    for (const auto& row : rows) {
      if (row.empty) continue;
      report.add(plan.spine.level_names()[m.blau_level] + "[Q" + std::to_string(row.quintile) + "]",
                 "TOTAL", "mean_signed_error", row.mean_signed_total_error);
    }
  }
  if (!m.largest_group_query.empty()) {
    const UnitSet units = m.largest_group_use_entities
                              ? UnitSet::of_entities(plan.targets)
                              : UnitSet::at_level(plan.spine, std::max(0, m.largest_group_level));
    const auto lg = largest_group_criterion(mdf, cef, units, plan.query(m.largest_group_query),
                                            plan.schema, m.largest_group_threshold_pp,
                                            m.largest_group_min_pop, m.largest_group_min_fraction);
    report.add(m.largest_group_use_entities ? "entities" : "level", m.largest_group_query,
               "largest_group_within_pp_fraction", lg.fraction);
    report.add(m.largest_group_use_entities ? "entities" : "level", m.largest_group_query,
               "largest_group_eligible", static_cast<double>(lg.eligible));
    thresholds_pass = thresholds_pass && lg.pass;
  }

  {
    std::ofstream csv(out_dir + "/metrics.csv");
    report.write_csv(csv);
    std::ofstream txt(out_dir + "/metrics.txt");
    report.write_text(txt);
  }
  log_info("metric report: " + out_dir);
  return thresholds_pass ? 0 : 1;
}

int audit_app(const RunPlan& plan) {
  std::cout << "privacy report\n";
  std::cout << "  rho = " << to_string(plan.rho) << "\n";
  std::cout << "  psi = " << to_string(plan.alloc.psi) << "\n";
  for (std::size_t lv = 0; lv < plan.strategy.levels.size(); ++lv) {
    const auto& ls = plan.strategy.levels[lv];
    if (ls.groups.empty()) continue;
    std::cout << "  level " << plan.spine.level_names()[lv] << ":";
    for (std::size_t g = 0; g < ls.groups.size(); ++g)
      std::cout << (g ? "," : "") << " " << ls.groups[g].name() << ":" << to_string(ls.shares[g]);
    std::cout << "\n";
  }
  for (const double delta : plan.delta_grid)
    std::cout << "  epsilon(delta=" << delta
              << ") = " << epsilon_of_rho(to_double(plan.rho), delta) << "\n";

  const auto report = sensitivity_audit(plan.strategy, plan.alloc, plan.spine, plan.schema);
  std::cout << "sensitivity audit\n";
  std::cout << "  max attained = " << to_string(report.max_attained) << "\n";
  std::cout << "  bound (2*rho) = " << to_string(report.bound) << "\n";
  std::cout << "  tight = " << (report.tight ? "yes" : "no") << "\n";
  if (!report.witness.empty()) std::cout << "  witness = " << report.witness << "\n";
  return 0;
}

}  // namespace topdown
