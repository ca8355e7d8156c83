#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "topdown/config.hpp"
#include "topdown/engine.hpp"

namespace topdown {

// Microdata CSV (geocode plus one level-label column per attribute) to
// per-leaf histograms. Unknown geocodes and labels are hard errors.
NodeData read_microdata_csv(const std::string& path, const Schema& schema, const Spine& spine);

struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

// reader -> engine -> validator -> writer. Returns the process exit status;
// validator failures suppress every output except the diagnostic.
int run_app(const RunPlan& plan, const RunOverrides& overrides = {});

// Deterministic synthetic microdata honoring structural zeros and payload
// invariants (every occupied facility houses at least one person).
void synthesize_app(const RunPlan& plan, const std::string& out_csv);

// Metric files for a protected/confidential pair; the exit status reflects
// the configured acceptance thresholds.
int report_app(const RunPlan& plan, const std::string& mdf_csv, const std::string& cef_csv,
               const std::string& out_dir);

// Privacy report plus the desk-scale brute-force accounting audit.
int audit_app(const RunPlan& plan);

}  // namespace topdown
