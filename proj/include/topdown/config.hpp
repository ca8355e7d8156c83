#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "topdown/constraints.hpp"
#include "topdown/evaluation.hpp"
#include "topdown/privacy.hpp"
#include "topdown/schema.hpp"
#include "topdown/spine.hpp"
#include "topdown/strategy.hpp"

namespace topdown {

// Sectioned key=value text with '#' comments; keys may repeat.
class ConfigFile {
 public:
  static ConfigFile parse(const std::string& text);
  static ConfigFile load(const std::string& path);

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key) const;
  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const;
  std::vector<std::string> get_all(const std::string& section, const std::string& key) const;
  const std::string& text() const { return text_; }
  const std::string& directory() const { return directory_; }

 private:
  std::string text_;
  std::string directory_;
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections_;
};

struct MetricsConfig {
  int level = -1;                         // unit level for generic metrics
  std::vector<std::string> query_names;   // abs-error queries
  std::vector<PopulationBucket> buckets;
  std::vector<double> probabilities;
  std::string blau_query;
  int blau_level = -1;
  std::string largest_group_query;
  int largest_group_level = -1;           // -1 with entities set uses targets
  bool largest_group_use_entities = false;
  double largest_group_threshold_pp = 5.0;
  std::int64_t largest_group_min_pop = 500;
  double largest_group_min_fraction = 0.95;
  bool gnuplot = false;
};

// A fully validated run plan; nothing here depends on the microdata, so an
// invalid configuration fails before any record is read.
struct RunPlan {
  RunPlan(Schema s, Spine sp) : schema(std::move(s)), spine(std::move(sp)) {}

  Schema schema;
  Spine spine;  // after the configured transformations
  std::map<std::string, QueryGroup> queries;
  QueryStrategy strategy;
  AllocationTable alloc;
  Rational rho{0};
  InvariantSpec invariants;
  StructuralZeroSet zeros;
  std::vector<OffSpineEntity> targets;

  std::string engine = "topdown";
  std::uint64_t seed = 0;
  int workers = 0;  // 0 = hardware default
  std::string input_csv;
  std::string output_dir = "out";
  std::vector<double> delta_grid;

  std::uint64_t synth_seed = 1;
  double synth_leaf_mean = 10.0;

  MetricsConfig metrics;

  std::string config_digest;
  std::string config_text;

  const QueryGroup& query(const std::string& name) const;
  int level_index(const std::string& name) const;
};

RunPlan load_run_plan(const std::string& path);
RunPlan build_run_plan(const ConfigFile& cfg);

// Query expressions: total | detailed | marginal(A,...) | recode(A: l|l,l)
// joined with '&'.
QueryGroup parse_query_expression(const Schema& schema, const std::string& name,
                                  const std::string& expression);

std::string fnv1a_hex(const std::string& text);

}  // namespace topdown
