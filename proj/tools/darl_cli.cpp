#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "darl/harness.hpp"
#include "darl/orchestrator.hpp"
#include "darl/synthdata.hpp"

namespace {

using darl::harness::ExperimentSpec;

struct CommonOpts {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::string task_file;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config, "flat key=value config file");
  cmd->add_option("--set", opts.sets,
                  "config override, key=value (repeatable; keys mirror the "
                  "config file)");
  cmd->add_option("--out", opts.out, "output directory");
  cmd->add_option("--task", opts.task_file,
                  "load a task file instead of generating one");
}

ExperimentSpec build_spec(const CommonOpts& opts) {
  std::optional<std::filesystem::path> cfg;
  if (!opts.config.empty()) cfg = opts.config;
  std::vector<std::string> overrides = opts.sets;
  if (!opts.out.empty()) overrides.push_back("run.out_dir=" + opts.out);
  return darl::harness::parse_config(cfg, overrides);
}

darl::synth::DaTask get_task(const CommonOpts& opts,
                             const ExperimentSpec& spec) {
  if (!opts.task_file.empty()) return darl::synth::load_task(opts.task_file);
  return darl::synth::generate_task(spec.task);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DARL: adversarial instance selection for partial domain "
               "adaptation on synthetic tasks"};
  app.require_subcommand(1);

  CommonOpts run_opts, sweep_opts, ablate_opts, gen_opts;
  double flag_tau = -1.0;
  std::string eval_checkpoint, eval_task, gen_out = "task.txt";
  std::vector<double> sweep_taus;
  std::vector<std::string> ablate_variants;

  auto* run = app.add_subcommand("run", "single experiment (full DARL)");
  add_common(run, run_opts);
  run->add_option("--tau", flag_tau, "reward threshold override");

  auto* sweep = app.add_subcommand("sweep", "tau threshold sweep");
  add_common(sweep, sweep_opts);
  sweep->add_option("--taus", sweep_taus, "tau values (need >= 3)");

  auto* ablate = app.add_subcommand("ablate", "variant grid");
  add_common(ablate, ablate_opts);
  ablate->add_option("--variants", ablate_variants,
                     "full_darl no_qlearning pseudo_label_selection "
                     "source_only");

  auto* eval = app.add_subcommand("eval",
                                  "load a checkpoint and report accuracy");
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint directory")
      ->required();
  eval->add_option("--task", eval_task, "task file")->required();

  auto* gen = app.add_subcommand("gen-task", "emit a DaTask file");
  add_common(gen, gen_opts);
  gen->add_option("--out-file", gen_out, "task file path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      ExperimentSpec spec = build_spec(run_opts);
      if (flag_tau >= 0.0) spec.darl.tau = flag_tau;
      const auto task = get_task(run_opts, spec);
      for (std::uint64_t seed : spec.seeds) {
        auto cfg = spec.darl;
        cfg.seed = seed;
        darl::orch::DarlRun darl_run(task, cfg);
        darl_run.run_all();
        const auto dir = spec.out_dir / ("seed_" + std::to_string(seed));
        darl::harness::export_metrics(darl_run.metrics(), dir);
        darl_run.save(dir / "checkpoint");
        const auto& last = darl_run.metrics().records.back();
        std::printf("seed %llu: target_acc %.4f precision %.4f (%zu iterations)\n",
                    static_cast<unsigned long long>(seed), last.target_acc,
                    last.precision, darl_run.metrics().records.size());
      }
    } else if (sweep->parsed()) {
      ExperimentSpec spec = build_spec(sweep_opts);
      if (!sweep_taus.empty()) spec.sweep_taus = sweep_taus;
      const auto rows =
          darl::harness::run_threshold_sweep(spec, spec.sweep_taus);
      for (const auto& r : rows)
        std::printf("tau %.3f: median target_acc %.4f\n", r.tau,
                    r.median_accuracy);
    } else if (ablate->parsed()) {
      ExperimentSpec spec = build_spec(ablate_opts);
      if (!ablate_variants.empty()) {
        spec.variants.clear();
        for (const auto& v : ablate_variants)
          spec.variants.push_back(darl::orch::variant_from_string(v));
      }
      const auto task = get_task(ablate_opts, spec);
      const auto rows = darl::harness::run_variant_grid(spec, task);
      for (const auto& r : rows)
        std::printf("%s: median target_acc %.4f\n",
                    darl::orch::to_string(r.variant).c_str(),
                    r.median_accuracy);
    } else if (eval->parsed()) {
      const auto nets = darl::adv::load_adv_nets(eval_checkpoint);
      const auto task = darl::synth::load_task(eval_task);
      const auto res = darl::orch::evaluate(nets, task);
      std::printf("target_acc %.4f\n", res.target_accuracy);
      for (int c = 0; c < task.k_source; ++c)
        if (res.per_class_count[c] > 0)
          std::printf("class %d: acc %.4f (%d instances)\n", c,
                      res.per_class_accuracy(c), res.per_class_count[c]);
    } else if (gen->parsed()) {
      ExperimentSpec spec = build_spec(gen_opts);
      const auto task = darl::synth::generate_task(spec.task);
      darl::synth::save_task(task, gen_out);
      const auto s = darl::synth::dataset_summary(task);
      std::printf("wrote %s: %lld source / %lld target instances, %zu shared "
                  "classes\n",
                  gen_out.c_str(),
                  static_cast<long long>(task.source_x.cols()),
                  static_cast<long long>(task.target_x.cols()),
                  s.shared.size());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
