#include "topdown/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace topdown {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  const auto b = s.find_last_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_trim(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

}  // namespace

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ConfigFile ConfigFile::parse(const std::string& text) {
  ConfigFile cfg;
  cfg.text_ = text;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::invalid_argument("config line " + std::to_string(lineno) + ": bad section");
      section = trim(line.substr(1, line.size() - 2));
      cfg.sections_[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
    if (section.empty())
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": key outside section");
    cfg.sections_[section].emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  ConfigFile cfg = parse(buf.str());
  const auto slash = path.find_last_of('/');
  cfg.directory_ = slash == std::string::npos ? "." : path.substr(0, slash);
  return cfg;
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  const auto it = sections_.find(section);
  if (it == sections_.end()) return false;
  for (const auto& [k, v] : it->second) {
    (void)v;
    if (k == key) return true;
  }
  return false;
}

std::string ConfigFile::get(const std::string& section, const std::string& key) const {
  const auto it = sections_.find(section);
  if (it != sections_.end())
    for (const auto& [k, v] : it->second)
      if (k == key) return v;
  throw std::invalid_argument("config is missing [" + section + "] " + key);
}

std::string ConfigFile::get_or(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
  return has(section, key) ? get(section, key) : fallback;
}

std::vector<std::string> ConfigFile::get_all(const std::string& section,
                                             const std::string& key) const {
  std::vector<std::string> out;
  const auto it = sections_.find(section);
  if (it != sections_.end())
    for (const auto& [k, v] : it->second)
      if (k == key) out.push_back(v);
  return out;
}

QueryGroup parse_query_expression(const Schema& schema, const std::string& name,
                                  const std::string& expression) {
  const std::string expr = trim(expression);
  if (expr == "total") return total_query(schema);
  if (expr == "detailed") return detailed_query(schema);

  std::vector<Recode> recodes;
  for (const auto& clause : split_trim(expr, '&')) {
    if (clause.rfind("marginal(", 0) == 0 && clause.back() == ')') {
      for (const auto& attr : split_trim(clause.substr(9, clause.size() - 10), ',')) {
        Recode r;
        r.attribute = attr;
        const auto& levels = schema.attributes()[schema.attribute_index(attr)].levels;
        for (std::size_t i = 0; i < levels.size(); ++i) r.groups.push_back({i});
        recodes.push_back(std::move(r));
      }
    } else if (clause.rfind("recode(", 0) == 0 && clause.back() == ')') {
      const std::string body = clause.substr(7, clause.size() - 8);
      const auto colon = body.find(':');
      if (colon == std::string::npos)
        throw std::invalid_argument("query '" + name + "': recode needs 'ATTR: ...'");
      Recode r;
      r.attribute = trim(body.substr(0, colon));
      const std::size_t a = schema.attribute_index(r.attribute);
      for (const auto& group : split_trim(body.substr(colon + 1), '|')) {
        std::vector<std::size_t> g;
        for (const auto& label : split_trim(group, ','))
          if (!label.empty()) g.push_back(schema.level_index(a, label));
        if (!g.empty()) r.groups.push_back(std::move(g));
      }
      recodes.push_back(std::move(r));
    } else {
      throw std::invalid_argument("query '" + name + "': cannot parse clause '" + clause + "'");
    }
  }
  return build_marginal(schema, recodes, name);
}

const QueryGroup& RunPlan::query(const std::string& name) const {
  const auto it = queries.find(name);
  if (it == queries.end()) throw std::invalid_argument("unknown query '" + name + "'");
  return it->second;
}

int RunPlan::level_index(const std::string& name) const {
  const auto& names = spine.level_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  throw std::invalid_argument("unknown geographic level '" + name + "'");
}

namespace {

Schema schema_from(const ConfigFile& cfg) {
  std::vector<AttributeSpec> attrs;
  for (const auto& line : cfg.get_all("schema", "attribute")) {
    const auto colon = line.find(':');
    if (colon == std::string::npos)
      throw std::invalid_argument("schema attribute needs 'NAME: level, level'");
    AttributeSpec a;
    a.name = trim(line.substr(0, colon));
    a.levels = split_trim(line.substr(colon + 1), ',');
    attrs.push_back(std::move(a));
  }
  if (attrs.empty()) throw std::invalid_argument("config declares no schema attributes");
  return Schema(std::move(attrs));
}

int parse_level(const RunPlan& plan, const std::string& value) {
  if (value == "off" || value.empty()) return -1;
  return plan.level_index(value);
}

std::vector<PopulationBucket> parse_buckets(const std::string& text) {
  std::vector<PopulationBucket> buckets;
  for (const auto& part : split_trim(text, ',')) {
    PopulationBucket b;
    if (!part.empty() && part.back() == '+') {
      b.lo = std::stoll(part.substr(0, part.size() - 1));
      b.hi = -1;
    } else {
      const auto dash = part.find('-');
      if (dash == std::string::npos)
        throw std::invalid_argument("bucket '" + part + "' is not 'lo-hi' or 'lo+'");
      b.lo = std::stoll(part.substr(0, dash));
      b.hi = std::stoll(part.substr(dash + 1));
    }
    buckets.push_back(b);
  }
  return buckets;
}

}  // namespace

RunPlan build_run_plan(const ConfigFile& cfg) {
  Schema schema = schema_from(cfg);

  const auto resolve_path = [&](const std::string& p) {
    if (p.empty() || p.front() == '/' || cfg.directory().empty()) return p;
    return cfg.directory() + "/" + p;
  };

  // Geography comes before any allocation math: path sums need the tree.
  Spine spine = Spine::load_csv_file(resolve_path(cfg.get("spine", "csv")));

  RunPlan plan(std::move(schema), std::move(spine));
  plan.config_text = cfg.text();
  plan.config_digest = fnv1a_hex(cfg.text());

  plan.queries.emplace("TOTAL", total_query(plan.schema));
  plan.queries.emplace("DETAILED", detailed_query(plan.schema));
  for (const auto& name_value : cfg.get_all("queries", "query")) {
    const auto eq = name_value.find(':');
    if (eq == std::string::npos)
      throw std::invalid_argument("queries entries read 'query = NAME: expression'");
    const std::string name = trim(name_value.substr(0, eq));
    plan.queries.emplace(name,
                         parse_query_expression(plan.schema, name, name_value.substr(eq + 1)));
  }

  // Off-spine targets.
  for (const auto& line : cfg.get_all("spine", "target")) {
    const auto colon = line.find(':');
    if (colon == std::string::npos)
      throw std::invalid_argument("spine target needs 'NAME: leaf, leaf'");
    OffSpineEntity e;
    e.name = trim(line.substr(0, colon));
    e.leaf_ids = split_trim(line.substr(colon + 1), ',');
    plan.targets.push_back(std::move(e));
  }

  // Invariants and structural zeros.
  plan.invariants.state_total_level = parse_level(plan, cfg.get_or("invariants", "state_total", "off"));
  plan.invariants.housing_unit_total_level =
      parse_level(plan, cfg.get_or("invariants", "housing_unit_total", "off"));
  plan.invariants.occupied_gq_level =
      parse_level(plan, cfg.get_or("invariants", "occupied_gq", "off"));
  plan.invariants.householder_bound_level =
      parse_level(plan, cfg.get_or("invariants", "householder_bound", "off"));
  plan.invariants.gq_attribute = cfg.get_or("invariants", "gq_attribute", "");
  if (cfg.has("invariants", "gq_types"))
    plan.invariants.gq_types = split_trim(cfg.get("invariants", "gq_types"), ',');
  if (cfg.has("invariants", "householder")) {
    const std::string hh = cfg.get("invariants", "householder");
    const auto colon = hh.find(':');
    if (colon == std::string::npos)
      throw std::invalid_argument("invariants householder needs 'ATTR: level'");
    plan.invariants.householder_attribute = trim(hh.substr(0, colon));
    plan.invariants.householder_level = trim(hh.substr(colon + 1));
  }
  if (plan.invariants.occupied_gq_level >= 0 && plan.invariants.gq_attribute.empty())
    throw std::invalid_argument("occupied_gq invariant needs gq_attribute");
  if (plan.invariants.householder_bound_level >= 0 &&
      plan.invariants.householder_attribute.empty())
    throw std::invalid_argument("householder_bound invariant needs householder = ATTR: level");

  for (const auto& line : cfg.get_all("zeros", "forbidden")) {
    StructuralZeroSet::Pattern pattern;
    for (const auto& clause : split_trim(line, '&')) {
      const auto colon = clause.find(':');
      if (colon == std::string::npos)
        throw std::invalid_argument("zeros entries read 'forbidden = ATTR: level, level'");
      CellCondition cond;
      cond.attribute = trim(clause.substr(0, colon));
      cond.levels = split_trim(clause.substr(colon + 1), ',');
      plan.schema.attribute_index(cond.attribute);  // validate early
      pattern.all_of.push_back(std::move(cond));
    }
    plan.zeros.patterns.push_back(std::move(pattern));
  }

  // Geography transformations, in the production order: AIAN branches,
  // custom block groups, then single-child bypass of the rho shares.
  const bool use_aian = cfg.get_or("spine", "aian", "false") == "true";
  const bool use_cbg = cfg.get_or("spine", "optimize_block_groups", "false") == "true";
  const bool use_bypass = cfg.get_or("spine", "bypass", "false") == "true";
  if (use_aian) plan.spine = build_aian_spine(plan.spine);
  if (use_cbg) plan.spine = optimize_block_groups(plan.spine, plan.targets);

  // Per-level shares become per-node shares.
  plan.alloc.psi = parse_fraction(cfg.get("allocation", "psi"));
  std::map<int, Rational> level_share;
  for (const auto& line : cfg.get_all("allocation", "share")) {
    const auto colon = line.find(':');
    if (colon == std::string::npos)
      throw std::invalid_argument("allocation share needs 'level: fraction'");
    const int lv = plan.level_index(trim(line.substr(0, colon)));
    level_share[lv] = parse_fraction(line.substr(colon + 1));
  }
  {
    Rational sum(0);
    for (const auto& [lv, s] : level_share) {
      (void)lv;
      sum += s;
    }
    if (sum != Rational(1))
      throw std::invalid_argument("per-level rho shares sum to " + to_string(sum) +
                                  ", expected 1");
  }
  for (std::size_t v = 0; v < plan.spine.node_count(); ++v) {
    const auto it = level_share.find(plan.spine.node(v).level);
    if (it != level_share.end() && it->second != Rational(0))
      plan.alloc.node_share[plan.spine.node(v).id] = it->second;
  }
  if (use_bypass) {
    auto [merged_spine, merged_shares] = bypass_single_child(plan.spine, plan.alloc.node_share);
    plan.spine = std::move(merged_spine);
    plan.alloc.node_share.clear();
    for (const auto& [id, share] : merged_shares)
      if (share != Rational(0)) plan.alloc.node_share[id] = share;
  }

  // Strategy: per-level query lists with exact shares, plus pass schedules.
  plan.strategy.levels.assign(plan.spine.leaf_level() + 1, LevelStrategy{});
  const auto level_of_prefix = [&](const std::string& line, std::string* rest) {
    const auto colon = line.find(':');
    if (colon == std::string::npos)
      throw std::invalid_argument("strategy entries read 'key = level: ...'");
    *rest = line.substr(colon + 1);
    return plan.level_index(trim(line.substr(0, colon)));
  };
  for (const auto& line : cfg.get_all("strategy", "queries")) {
    std::string rest;
    const int lv = level_of_prefix(line, &rest);
    auto& ls = plan.strategy.levels[lv];
    for (const auto& item : split_trim(rest, ',')) {
      const auto at = item.find_last_of(':');
      if (at == std::string::npos)
        throw std::invalid_argument("strategy query needs 'NAME:share' in '" + line + "'");
      const std::string name = trim(item.substr(0, at));
      ls.groups.push_back(plan.query(name));
      ls.shares.push_back(parse_fraction(item.substr(at + 1)));
    }
  }
  const auto parse_passes = [&](const std::string& key, bool rounder) {
    for (const auto& line : cfg.get_all("strategy", key)) {
      std::string rest;
      const int lv = level_of_prefix(line, &rest);
      auto& ls = plan.strategy.levels[lv];
      std::vector<std::vector<int>> passes;
      std::vector<bool> used(rounder ? ls.rounder_groups.size() : ls.groups.size(), false);
      for (const auto& pass_text : split_trim(rest, '|')) {
        std::vector<int> pass;
        for (const auto& name : split_trim(pass_text, ',')) {
          if (name == "rest") {
            for (std::size_t g = 0; g < used.size(); ++g)
              if (!used[g]) {
                pass.push_back(static_cast<int>(g));
                used[g] = true;
              }
            continue;
          }
          int idx = -1;
          const auto& pool = rounder ? ls.rounder_groups : ls.groups;
          for (std::size_t g = 0; g < pool.size(); ++g)
            if (pool[g].name() == name) idx = static_cast<int>(g);
          if (idx < 0)
            throw std::invalid_argument("pass schedule names unknown group '" + name + "'");
          pass.push_back(idx);
          used[idx] = true;
        }
        if (!pass.empty()) passes.push_back(std::move(pass));
      }
      (rounder ? ls.rounder_passes : ls.l2_passes) = std::move(passes);
    }
  };
  for (const auto& line : cfg.get_all("strategy", "rounder_queries")) {
    std::string rest;
    const int lv = level_of_prefix(line, &rest);
    auto& ls = plan.strategy.levels[lv];
    for (const auto& name : split_trim(rest, ',')) ls.rounder_groups.push_back(plan.query(name));
  }
  parse_passes("l2_passes", false);
  parse_passes("rounder_passes", true);
  apply_default_passes(plan.schema, plan.strategy);
  plan.rho = total_rho(plan.alloc, plan.spine, plan.strategy);

  // Run options.
  plan.engine = cfg.get_or("run", "engine", "topdown");
  if (plan.engine != "topdown" && plan.engine != "block_by_block")
    throw std::invalid_argument("engine must be topdown or block_by_block");
  plan.seed = std::stoull(cfg.get_or("run", "seed", "0"));
  plan.workers = std::stoi(cfg.get_or("run", "workers", "0"));
  plan.input_csv = resolve_path(cfg.get_or("run", "input", ""));
  plan.output_dir = resolve_path(cfg.get_or("run", "output_dir", "out"));
  for (const auto& d : split_trim(cfg.get_or("run", "delta", "1e-10"), ','))
    plan.delta_grid.push_back(std::stod(d));

  plan.synth_seed = std::stoull(cfg.get_or("synthesize", "seed", "1"));
  plan.synth_leaf_mean = std::stod(cfg.get_or("synthesize", "leaf_mean", "10"));

  // Metrics.
  auto& m = plan.metrics;
  if (cfg.has("metrics", "level")) m.level = plan.level_index(cfg.get("metrics", "level"));
  if (cfg.has("metrics", "queries")) m.query_names = split_trim(cfg.get("metrics", "queries"), ',');
  m.buckets = parse_buckets(cfg.get_or("metrics", "buckets", "0-0, 1-9, 10-99, 100-999, 1000+"));
  for (const auto& p :
       split_trim(cfg.get_or("metrics", "quantiles", "0.005,0.025,0.25,0.5,0.75,0.975,0.995"), ','))
    m.probabilities.push_back(std::stod(p));
  m.blau_query = cfg.get_or("metrics", "blau_query", "");
  if (cfg.has("metrics", "blau_level")) m.blau_level = plan.level_index(cfg.get("metrics", "blau_level"));
  m.largest_group_query = cfg.get_or("metrics", "largest_group_query", "");
  if (cfg.has("metrics", "largest_group_level")) {
    const std::string where = cfg.get("metrics", "largest_group_level");
    if (where == "entities")
      m.largest_group_use_entities = true;
    else
      m.largest_group_level = plan.level_index(where);
  }
  m.largest_group_threshold_pp = std::stod(cfg.get_or("metrics", "largest_group_threshold_pp", "5"));
  m.largest_group_min_pop = std::stoll(cfg.get_or("metrics", "largest_group_min_pop", "500"));
  m.largest_group_min_fraction =
      std::stod(cfg.get_or("metrics", "largest_group_min_fraction", "0.95"));
  m.gnuplot = cfg.get_or("metrics", "gnuplot", "false") == "true";
  for (const auto& name : m.query_names) plan.query(name);
  if (!m.blau_query.empty()) plan.query(m.blau_query);
  if (!m.largest_group_query.empty()) plan.query(m.largest_group_query);

  return plan;
}

RunPlan load_run_plan(const std::string& path) { return build_run_plan(ConfigFile::load(path)); }

}  // namespace topdown
