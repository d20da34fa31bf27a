#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "darl/adversarial.hpp"
#include "darl/qlearn.hpp"
#include "darl/relevance.hpp"
#include "darl/rng.hpp"
#include "darl/synthdata.hpp"

namespace darl::orch {

using nn::Matrix;
using nn::Vector;

struct DarlConfig {
  double tau = 0.3;    // reward threshold
  double gamma = 0.9;  // discount factor
  int n_candidates = 16;
  int outer_iterations = 300;
  int pretrain_epochs = 5000;  // full-batch; enough to converge at lr 1e-4
  int adv_steps_per_iteration = 10;  // alternating (D, F) pairs
  double lr_dqn = 1e-4;
  double lr_adv = 1e-4;
  double epsilon_start = 1.0;
  double epsilon_end = 0.0;
  double epsilon_decay_fraction = 0.8;  // of outer_iterations
  int replay_capacity = 2048;
  int replay_batch = 32;
  int batch_cap = 64;
  int feature_dim = 16;
  std::uint64_t seed = 1;
  bool early_stop = true;
  double plateau_tol = 1e-3;
  int plateau_window = 20;

  void validate() const;
};

struct IterationRecord {
  int iteration = 0;
  int episode_len = 0;
  double mean_reward = 0.0;
  double precision = 1.0;  // shared-class fraction of the selected set
  double target_acc = 0.0;
  double test_error = 0.0;
  double d_loss = 0.0;
  double c_loss = 0.0;
  double adv_loss = 0.0;  // feature-step confusion term
  double q_loss = 0.0;
  double epsilon = 0.0;
  bool adv_skipped = false;
  Vector mu;
};

struct RunMetrics {
  std::vector<IterationRecord> records;
};

struct EvalResult {
  double target_accuracy = 0.0;
  Vector per_class_accuracy;      // NaN for classes absent from the target
  std::vector<int> per_class_count;
};

/// Fraction of target instances whose argmax C(F(x)) matches the hidden
/// ground truth. The only reader of target_y_hidden.
EvalResult evaluate(const adv::AdvNets& nets, const synth::DaTask& task);

enum class Variant { FullDarl, NoQlearning, PseudoLabelSelection, SourceOnly };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

double epsilon_at(const DarlConfig& cfg, int iteration);

struct EpisodeResult {
  std::vector<int> actions;
  std::vector<int> rewards;
  std::vector<int> selected;  // positions within the candidate set in D_e
  double q_loss_sum = 0.0;
  int q_updates = 0;
};

/// One episode over a fixed candidate set: epsilon-greedy selection, binary
/// rewards, replay insertion, one TD update per step. Stops at the first -1
/// reward (that instance stays out of the selected set) or on exhaustion.
EpisodeResult run_episode(nn::ParamSet& dqn, const nn::MlpSpec& dqn_spec,
                          const adv::AdvNets& nets, const Matrix& candidate_x,
                          std::span<const int> candidate_y,
                          const relevance::ClassRelevance& mu,
                          const DarlConfig& cfg, double epsilon,
                          qlearn::ReplayBuffer& replay, RngStreams& rng);

/// The whole training loop as a resumable object; all mutable state lives
/// here so a checkpoint between outer iterations is complete.
class DarlRun {
 public:
  DarlRun(synth::DaTask task, DarlConfig cfg, Variant variant = Variant::FullDarl);

  void pretrain();
  /// One outer iteration. Returns false once the budget or the plateau
  /// criterion is reached (the iteration is then not executed).
  bool step();
  void run_all();

  const RunMetrics& metrics() const { return metrics_; }
  const adv::AdvNets& nets() const { return nets_; }
  const nn::ParamSet& dqn() const { return dqn_; }
  const nn::MlpSpec& dqn_spec() const { return dqn_spec_; }
  int iteration() const { return iter_; }
  Variant variant() const { return variant_; }

  void save(const std::filesystem::path& dir) const;
  static DarlRun resume(synth::DaTask task, DarlConfig cfg,
                        const std::filesystem::path& dir);

 private:
  bool plateaued() const;
  void adversarial_phase(const std::vector<int>& selected_src,
                         IterationRecord& rec);

  synth::DaTask task_;
  DarlConfig cfg_;
  Variant variant_;
  adv::AdvNets nets_;
  nn::MlpSpec dqn_spec_;
  nn::ParamSet dqn_;
  qlearn::ReplayBuffer replay_;
  RngStreams rng_;
  int iter_ = 0;
  bool pretrained_ = false;
  RunMetrics metrics_;
};

struct RunResult {
  adv::AdvNets nets;
  nn::ParamSet dqn;
  nn::MlpSpec dqn_spec;
  RunMetrics metrics;
};

/// Algorithm: pretrain F,C; then per outer iteration run one selection
/// episode and the alternating adversarial updates on (D_e, D_t).
RunResult run_darl(const synth::DaTask& task, const DarlConfig& cfg);

RunResult run_ablation(const synth::DaTask& task, const DarlConfig& cfg,
                       Variant variant);

}  // namespace darl::orch
