#include <CLI11.hpp>
#include <iostream>

#include "topdown/app.hpp"
#include "topdown/config.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical differentially private tabulation engine"};
  app.require_subcommand(1);

  std::string config_path, out_path, mdf_path, cef_path, out_dir;
  std::uint64_t seed = 0;
  int workers = 0;
  bool seed_set = false, workers_set = false;

  auto* run = app.add_subcommand("run", "Read microdata, run the engine, write the MDF");
  run->add_option("--config", config_path, "run configuration file")->required();
  run->add_option("--seed", seed, "override the master seed")->each([&](const std::string&) {
    seed_set = true;
  });
  run->add_option("--workers", workers, "override the worker count")->each([&](const std::string&) {
    workers_set = true;
  });

  auto* synth = app.add_subcommand("synthesize", "Generate synthetic microdata");
  synth->add_option("--config", config_path, "run configuration file")->required();
  synth->add_option("--out", out_path, "output microdata csv")->required();

  auto* report = app.add_subcommand("report", "Accuracy metrics for a protected/confidential pair");
  report->add_option("--config", config_path, "run configuration file")->required();
  report->add_option("--mdf", mdf_path, "protected microdata csv")->required();
  report->add_option("--cef", cef_path, "confidential microdata csv")->required();
  report->add_option("--out", out_dir, "output directory")->required();

  auto* audit = app.add_subcommand("audit", "Privacy report and brute-force accounting audit");
  audit->add_option("--config", config_path, "run configuration file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const topdown::RunPlan plan = topdown::load_run_plan(config_path);
    if (run->parsed()) {
      topdown::RunOverrides ov;
      if (seed_set) ov.seed = seed;
      if (workers_set) ov.workers = workers;
      return topdown::run_app(plan, ov);
    }
    if (synth->parsed()) {
      topdown::synthesize_app(plan, out_path);
      return 0;
    }
    if (report->parsed()) return topdown::report_app(plan, mdf_path, cef_path, out_dir);
    if (audit->parsed()) return topdown::audit_app(plan);
  } catch (const std::exception& e) {
    std::cerr << "[config] " << e.what() << "\n";
    return 1;
  }
  return 1;
}
