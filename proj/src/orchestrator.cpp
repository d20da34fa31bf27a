#include "darl/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace darl::orch {

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// n distinct indices from [0, pool), uniform, order of draw
std::vector<int> sample_without_replacement(int pool, int n,
                                            std::mt19937_64& rng) {
  std::vector<int> all(pool);
  for (int i = 0; i < pool; ++i) all[i] = i;
  std::vector<int> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const auto j = static_cast<int>(uniform_index(rng, all.size()));
    out.push_back(all[j]);
    all[j] = all.back();
    all.pop_back();
  }
  return out;
}

Matrix gather_columns(const Matrix& m, const std::vector<int>& idx) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(j) = m.col(idx[j]);
  return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels,
                               const std::vector<int>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(labels[i]);
  return out;
}

}  // namespace

void DarlConfig::validate() const {
  if (tau < 0.0 || tau > 1.0)
    throw std::invalid_argument("tau must be in [0,1]");
  if (gamma < 0.0 || gamma > 1.0)
    throw std::invalid_argument("gamma must be in [0,1]");
  if (n_candidates < 1 || outer_iterations < 1 || pretrain_epochs < 1 ||
      adv_steps_per_iteration < 1 || replay_batch < 1 || batch_cap < 1 ||
      feature_dim < 1 || plateau_window < 1)
    throw std::invalid_argument("all counts must be >= 1");
  if (replay_capacity < replay_batch)
    throw std::invalid_argument("replay_capacity must be >= replay_batch");
  if (lr_dqn <= 0.0 || lr_adv <= 0.0)
    throw std::invalid_argument("learning rates must be > 0");
  if (epsilon_start < 0.0 || epsilon_start > 1.0 || epsilon_end < 0.0 ||
      epsilon_end > 1.0)
    throw std::invalid_argument("epsilon bounds must be in [0,1]");
  if (epsilon_decay_fraction <= 0.0 || epsilon_decay_fraction > 1.0)
    throw std::invalid_argument("epsilon_decay_fraction must be in (0,1]");
}

EvalResult evaluate(const adv::AdvNets& nets, const synth::DaTask& task) {
  EvalResult res;
  const auto pred = adv::predict(nets, task.target_x);
  res.per_class_count.assign(task.k_source, 0);
  std::vector<int> correct(task.k_source, 0);
  int hits = 0;
  for (std::size_t i = 0; i < task.target_y_hidden.size(); ++i) {
    const int truth = task.target_y_hidden[i];
    res.per_class_count[truth] += 1;
    if (pred.pseudo_labels[i] == truth) {
      correct[truth] += 1;
      hits += 1;
    }
  }
  res.target_accuracy =
      static_cast<double>(hits) / static_cast<double>(task.target_y_hidden.size());
  res.per_class_accuracy = Vector::Constant(
      task.k_source, std::numeric_limits<double>::quiet_NaN());
  for (int c = 0; c < task.k_source; ++c)
    if (res.per_class_count[c] > 0)
      res.per_class_accuracy(c) =
          static_cast<double>(correct[c]) / res.per_class_count[c];
  return res;
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::FullDarl: return "full_darl";
    case Variant::NoQlearning: return "no_qlearning";
    case Variant::PseudoLabelSelection: return "pseudo_label_selection";
    case Variant::SourceOnly: return "source_only";
  }
  return "full_darl";
}

Variant variant_from_string(const std::string& s) {
  if (s == "full_darl") return Variant::FullDarl;
  if (s == "no_qlearning") return Variant::NoQlearning;
  if (s == "pseudo_label_selection") return Variant::PseudoLabelSelection;
  if (s == "source_only") return Variant::SourceOnly;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

double epsilon_at(const DarlConfig& cfg, int iteration) {
  const double horizon = cfg.epsilon_decay_fraction * cfg.outer_iterations;
  if (horizon <= 0.0 || iteration >= horizon) return cfg.epsilon_end;
  const double frac = static_cast<double>(iteration) / horizon;
  return cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start);
}

EpisodeResult run_episode(nn::ParamSet& dqn, const nn::MlpSpec& dqn_spec,
                          const adv::AdvNets& nets, const Matrix& candidate_x,
                          std::span<const int> candidate_y,
                          const relevance::ClassRelevance& mu,
                          const DarlConfig& cfg, double epsilon,
                          qlearn::ReplayBuffer& replay, RngStreams& rng) {
  EpisodeResult ep;
  qlearn::SelectionState state = qlearn::init_state(nets, candidate_x);
  while (true) {
    const int action =
        qlearn::select_action(dqn, dqn_spec, state, epsilon, rng.agent);
    const double phi = relevance::relevance_score(
        nets, candidate_x.col(action), mu, candidate_y[action]);
    const int r = relevance::reward(phi, cfg.tau);
    qlearn::SelectionState next = qlearn::apply_action(state, action);
    const bool terminal = (r < 0) || next.fully_selected();
    replay.push({state, action, r, next, terminal});
    if (auto loss = qlearn::td_update(dqn, dqn_spec, replay, cfg.replay_batch,
                                      cfg.gamma, cfg.lr_dqn, rng.replay)) {
      ep.q_loss_sum += *loss;
      ep.q_updates += 1;
    }
    ep.actions.push_back(action);
    ep.rewards.push_back(r);
    if (r > 0) ep.selected.push_back(action);
    if (terminal) break;
    state = std::move(next);
  }
  return ep;
}

DarlRun::DarlRun(synth::DaTask task, DarlConfig cfg, Variant variant)
    : task_(std::move(task)),
      cfg_(cfg),
      variant_(variant),
      replay_(static_cast<std::size_t>(cfg.replay_capacity)),
      rng_(cfg.seed) {
  cfg_.validate();
  nets_ = adv::make_adv_nets(static_cast<int>(task_.source_x.rows()),
                             task_.k_source, cfg_.feature_dim,
                             rng_.adversarial);
  dqn_spec_ = {{cfg_.feature_dim * cfg_.n_candidates, 64, 32, cfg_.n_candidates},
               nn::Activation::Relu,
               nn::Output::Linear};
  dqn_ = nn::init_params(dqn_spec_, rng_.agent);
}

void DarlRun::pretrain() {
  if (pretrained_) return;
  adv::pretrain_source(nets_, task_, cfg_.pretrain_epochs, cfg_.lr_adv);
  pretrained_ = true;
}

bool DarlRun::plateaued() const {
  if (!cfg_.early_stop) return false;
  // never stop while the agent is still exploring
  if (iter_ < cfg_.epsilon_decay_fraction * cfg_.outer_iterations) return false;
  const auto& recs = metrics_.records;
  if (static_cast<int>(recs.size()) < cfg_.plateau_window + 1) return false;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = recs.size() - cfg_.plateau_window - 1; i < recs.size();
       ++i) {
    lo = std::min(lo, recs[i].test_error);
    hi = std::max(hi, recs[i].test_error);
  }
  return hi - lo < cfg_.plateau_tol;
}

void DarlRun::adversarial_phase(const std::vector<int>& selected_src,
                                IterationRecord& rec) {
  if (selected_src.empty()) {
    rec.adv_skipped = true;
    return;
  }
  const int n_target = static_cast<int>(task_.target_x.cols());
  for (int s = 0; s < cfg_.adv_steps_per_iteration; ++s) {
    std::vector<int> src_idx = selected_src;
    if (static_cast<int>(src_idx.size()) > cfg_.batch_cap) {
      std::vector<int> pick = sample_without_replacement(
          static_cast<int>(src_idx.size()), cfg_.batch_cap, rng_.adversarial);
      src_idx = gather_labels(src_idx, pick);
    }
    const std::vector<int> tgt_idx = sample_without_replacement(
        n_target, std::min(cfg_.batch_cap, n_target), rng_.adversarial);

    const Matrix src_x = gather_columns(task_.source_x, src_idx);
    const std::vector<int> src_y = gather_labels(task_.source_y, src_idx);
    const Matrix tgt_x = gather_columns(task_.target_x, tgt_idx);

    rec.d_loss = adv::discriminator_step(nets_, src_x, src_y, tgt_x, cfg_.lr_adv);
    const auto fc = adv::feature_classifier_step(nets_, src_x, src_y, tgt_x,
                                                 cfg_.lr_adv);
    rec.c_loss = fc.classifier_loss;
    rec.adv_loss = fc.adversarial_loss;
  }
}

bool DarlRun::step() {
  pretrain();
  if (variant_ == Variant::SourceOnly) return false;
  if (iter_ >= cfg_.outer_iterations || plateaued()) return false;

  IterationRecord rec;
  rec.iteration = iter_;
  rec.epsilon = epsilon_at(cfg_, iter_);

  const auto mu = relevance::class_relevance(nets_, task_.target_x);
  rec.mu = mu.mu;

  std::vector<int> de;  // indices into the full source set
  if (variant_ == Variant::NoQlearning) {
    de.resize(task_.source_y.size());
    for (std::size_t i = 0; i < de.size(); ++i) de[i] = static_cast<int>(i);
  } else {
    const std::vector<int> candidates = sample_without_replacement(
        static_cast<int>(task_.source_x.cols()), cfg_.n_candidates, rng_.data);
    const Matrix cand_x = gather_columns(task_.source_x, candidates);
    const std::vector<int> cand_y = gather_labels(task_.source_y, candidates);

    if (variant_ == Variant::PseudoLabelSelection) {
      // no agent: keep every candidate whose relevance clears the threshold
      int pos = 0;
      for (int i = 0; i < cfg_.n_candidates; ++i) {
        const double phi = relevance::relevance_score(nets_, cand_x.col(i), mu,
                                                      cand_y[i]);
        const int r = relevance::reward(phi, cfg_.tau);
        pos += (r > 0);
        if (r > 0) de.push_back(candidates[i]);
      }
      rec.episode_len = cfg_.n_candidates;
      rec.mean_reward =
          (2.0 * pos - cfg_.n_candidates) / cfg_.n_candidates;
    } else {
      auto ep = run_episode(dqn_, dqn_spec_, nets_, cand_x, cand_y, mu, cfg_,
                            rec.epsilon, replay_, rng_);
      rec.episode_len = static_cast<int>(ep.actions.size());
      double sum = 0.0;
      for (int r : ep.rewards) sum += r;
      rec.mean_reward = sum / static_cast<double>(ep.rewards.size());
      rec.q_loss = ep.q_updates ? ep.q_loss_sum / ep.q_updates : 0.0;
      for (int pos : ep.selected) de.push_back(candidates[pos]);
    }
  }

  std::vector<char> is_shared(task_.k_source, 0);
  for (int c : task_.shared_classes) is_shared[c] = 1;
  if (!de.empty()) {
    int shared_hits = 0;
    for (int i : de) shared_hits += is_shared[task_.source_y[i]];
    rec.precision = static_cast<double>(shared_hits) / de.size();
  }

  adversarial_phase(de, rec);

  const auto eval = evaluate(nets_, task_);
  rec.target_acc = eval.target_accuracy;
  rec.test_error = 1.0 - eval.target_accuracy;
  metrics_.records.push_back(std::move(rec));
  iter_ += 1;
  return true;
}

void DarlRun::run_all() {
  pretrain();
  if (variant_ == Variant::SourceOnly) {
    IterationRecord rec;
    rec.iteration = 0;
    const auto eval = evaluate(nets_, task_);
    rec.target_acc = eval.target_accuracy;
    rec.test_error = 1.0 - eval.target_accuracy;
    rec.mu = relevance::class_relevance(nets_, task_.target_x).mu;
    metrics_.records.push_back(std::move(rec));
    return;
  }
  while (step()) {
  }
}

void DarlRun::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  adv::save_adv_nets(nets_, dir);
  nn::save_params(dqn_, dqn_spec_, "dqn", dir);
  {
    std::ofstream os(dir / "run.manifest");
    os << "darl-run 1\n";
    os << "variant " << to_string(variant_) << '\n';
    os << "iteration " << iter_ << '\n';
    os << "pretrained " << (pretrained_ ? 1 : 0) << '\n';
  }
  {
    std::ofstream os(dir / "rng.txt");
    os << rng_;
  }
  {
    std::ofstream os(dir / "replay.bin", std::ios::binary);
    replay_.save(os);
  }
  {
    std::ofstream os(dir / "metrics.txt");
    for (const auto& r : metrics_.records) {
      os << r.iteration << ' ' << r.episode_len << ' ' << fmt17(r.mean_reward)
         << ' ' << fmt17(r.precision) << ' ' << fmt17(r.target_acc) << ' '
         << fmt17(r.test_error) << ' ' << fmt17(r.d_loss) << ' '
         << fmt17(r.c_loss) << ' ' << fmt17(r.adv_loss) << ' '
         << fmt17(r.q_loss) << ' ' << fmt17(r.epsilon) << ' '
         << (r.adv_skipped ? 1 : 0) << ' ' << r.mu.size();
      for (Eigen::Index i = 0; i < r.mu.size(); ++i)
        os << ' ' << fmt17(r.mu(i));
      os << '\n';
    }
  }
}

DarlRun DarlRun::resume(synth::DaTask task, DarlConfig cfg,
                        const std::filesystem::path& dir) {
  DarlRun run(std::move(task), cfg);
  std::ifstream mf(dir / "run.manifest");
  if (!mf) throw std::runtime_error("missing run.manifest in " + dir.string());
  std::string magic, key, variant;
  int version = 0, pretrained = 0;
  mf >> magic >> version;
  if (magic != "darl-run" || version != 1)
    throw std::runtime_error("bad run.manifest in " + dir.string());
  mf >> key >> variant >> key >> run.iter_ >> key >> pretrained;
  run.variant_ = variant_from_string(variant);
  run.pretrained_ = pretrained != 0;

  run.nets_ = adv::load_adv_nets(dir);
  std::tie(run.dqn_, run.dqn_spec_) = nn::load_params("dqn", dir);
  {
    std::ifstream is(dir / "rng.txt");
    if (!is) throw std::runtime_error("missing rng.txt in " + dir.string());
    is >> run.rng_;
  }
  {
    std::ifstream is(dir / "replay.bin", std::ios::binary);
    if (!is) throw std::runtime_error("missing replay.bin in " + dir.string());
    run.replay_ = qlearn::ReplayBuffer::load(is);
  }
  {
    std::ifstream is(dir / "metrics.txt");
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::istringstream ss(line);
      IterationRecord r;
      int skipped = 0;
      Eigen::Index mu_len = 0;
      ss >> r.iteration >> r.episode_len >> r.mean_reward >> r.precision >>
          r.target_acc >> r.test_error >> r.d_loss >> r.c_loss >> r.adv_loss >>
          r.q_loss >> r.epsilon >> skipped >> mu_len;
      r.adv_skipped = skipped != 0;
      r.mu = Vector(mu_len);
      for (Eigen::Index i = 0; i < mu_len; ++i) ss >> r.mu(i);
      run.metrics_.records.push_back(std::move(r));
    }
  }
  return run;
}

RunResult run_darl(const synth::DaTask& task, const DarlConfig& cfg) {
  return run_ablation(task, cfg, Variant::FullDarl);
}

RunResult run_ablation(const synth::DaTask& task, const DarlConfig& cfg,
                       Variant variant) {
  DarlRun run(task, cfg, variant);
  run.run_all();
  return {run.nets(), run.dqn(), run.dqn_spec(), run.metrics()};
}

}  // namespace darl::orch
