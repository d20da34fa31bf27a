#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "darl/orchestrator.hpp"
#include "darl/synthdata.hpp"

namespace darl::harness {

struct ExperimentSpec {
  synth::TaskParams task = synth::default_task_params();
  orch::DarlConfig darl;
  std::vector<orch::Variant> variants = {orch::Variant::FullDarl};
  std::vector<std::uint64_t> seeds = {1};
  std::vector<double> sweep_taus;
  std::filesystem::path out_dir = "out";
};

/// Flat key=value config with dotted section prefixes (task.*, darl.*,
/// run.*, sweep.*). `overrides` are further key=value pairs applied on top
/// (CLI flags). Unknown keys and out-of-range values are rejected with the
/// offending key named.
ExperimentSpec parse_config(const std::optional<std::filesystem::path>& path,
                            const std::vector<std::string>& overrides = {});

/// The accepted keys, for error messages and --help.
const std::vector<std::string>& config_keys();

/// metrics.csv (header + one row per outer iteration, '.' decimals, '\n'
/// endings, 17 significant digits) plus summary.txt with the final numbers.
void export_metrics(const orch::RunMetrics& metrics,
                    const std::filesystem::path& dir);

orch::RunMetrics load_metrics_csv(const std::filesystem::path& csv);

struct SweepRow {
  double tau = 0.0;
  double median_accuracy = 0.0;
};

/// One full run per (tau, seed); per-tau medians of the final target
/// accuracy, written to sweep.csv under spec.out_dir.
std::vector<SweepRow> run_threshold_sweep(const ExperimentSpec& spec,
                                          const std::vector<double>& taus);

struct VariantRow {
  orch::Variant variant;
  double median_accuracy = 0.0;
};

/// Runs every (variant, seed) pair, exports per-run metrics under
/// out_dir/<variant>/seed_<s>/ and ablation.csv with per-variant medians.
std::vector<VariantRow> run_variant_grid(const ExperimentSpec& spec,
                                         const synth::DaTask& task);

double median(std::vector<double> values);

}  // namespace darl::harness
