#include "darl/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace darl::harness {

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(s);
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': '" + v +
                                "' is not a number");
  }
}

long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long n = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': '" + v +
                                "' is not an integer");
  }
}

void range_check(const std::string& key, bool ok, const std::string& what) {
  if (!ok)
    throw std::out_of_range("config key '" + key + "' out of range: " + what);
}

nn::Vector to_vector(const std::string& key, const std::string& v) {
  const auto parts = split(v, ',');
  nn::Vector out(static_cast<Eigen::Index>(parts.size()));
  for (std::size_t i = 0; i < parts.size(); ++i)
    out(static_cast<Eigen::Index>(i)) = to_double(key, parts[i]);
  return out;
}

const std::vector<std::string> kKeys = {
    "task.seed", "task.k_source", "task.n_shared", "task.d_in",
    "task.per_class_src", "task.per_class_tgt", "task.class_separation",
    "task.blob_sigma", "task.rotation_angle", "task.translation", "task.scale",
    "task.noise_sigma", "darl.tau", "darl.gamma", "darl.n_candidates",
    "darl.outer_iterations", "darl.pretrain_epochs",
    "darl.adv_steps_per_iteration", "darl.lr_dqn", "darl.lr_adv",
    "darl.epsilon_start", "darl.epsilon_end", "darl.epsilon_decay_fraction",
    "darl.replay_capacity", "darl.replay_batch", "darl.batch_cap",
    "darl.feature_dim", "darl.early_stop", "darl.plateau_tol",
    "darl.plateau_window", "run.seeds", "run.variants", "run.out_dir",
    "sweep.taus"};

void apply_key(ExperimentSpec& spec, const std::string& key,
               const std::string& value) {
  if (key == "task.seed") {
    spec.task.seed = static_cast<std::uint64_t>(to_long(key, value));
  } else if (key == "task.k_source") {
    spec.task.k_source = static_cast<int>(to_long(key, value));
    range_check(key, spec.task.k_source >= 2, "need >= 2 classes");
  } else if (key == "task.n_shared") {
    spec.task.n_shared = static_cast<int>(to_long(key, value));
    range_check(key, spec.task.n_shared >= 1, "need >= 1 shared class");
  } else if (key == "task.d_in") {
    spec.task.d_in = static_cast<int>(to_long(key, value));
    range_check(key, spec.task.d_in >= 2, "need d_in >= 2");
  } else if (key == "task.per_class_src") {
    spec.task.per_class_src = static_cast<int>(to_long(key, value));
    range_check(key, spec.task.per_class_src >= 1, "need >= 1");
  } else if (key == "task.per_class_tgt") {
    spec.task.per_class_tgt = static_cast<int>(to_long(key, value));
    range_check(key, spec.task.per_class_tgt >= 1, "need >= 1");
  } else if (key == "task.class_separation") {
    spec.task.class_separation = to_double(key, value);
    range_check(key, spec.task.class_separation > 0.0, "need > 0");
  } else if (key == "task.blob_sigma") {
    spec.task.blob_sigma = to_double(key, value);
    range_check(key, spec.task.blob_sigma >= 0.0, "need >= 0");
  } else if (key == "task.rotation_angle") {
    spec.task.shift.rotation_angle = to_double(key, value);
  } else if (key == "task.translation") {
    spec.task.shift.translation = to_vector(key, value);
  } else if (key == "task.scale") {
    spec.task.shift.scale = to_vector(key, value);
    range_check(key, (spec.task.shift.scale.array() > 0.0).all(),
                "scale factors must be > 0");
  } else if (key == "task.noise_sigma") {
    spec.task.shift.noise_sigma = to_double(key, value);
    range_check(key, spec.task.shift.noise_sigma >= 0.0, "need >= 0");
  } else if (key == "darl.tau") {
    spec.darl.tau = to_double(key, value);
    range_check(key, spec.darl.tau >= 0.0 && spec.darl.tau <= 1.0,
                "tau must be in [0,1]");
  } else if (key == "darl.gamma") {
    spec.darl.gamma = to_double(key, value);
    range_check(key, spec.darl.gamma >= 0.0 && spec.darl.gamma <= 1.0,
                "gamma must be in [0,1]");
  } else if (key == "darl.n_candidates") {
    spec.darl.n_candidates = static_cast<int>(to_long(key, value));
  } else if (key == "darl.outer_iterations") {
    spec.darl.outer_iterations = static_cast<int>(to_long(key, value));
  } else if (key == "darl.pretrain_epochs") {
    spec.darl.pretrain_epochs = static_cast<int>(to_long(key, value));
  } else if (key == "darl.adv_steps_per_iteration") {
    spec.darl.adv_steps_per_iteration = static_cast<int>(to_long(key, value));
  } else if (key == "darl.lr_dqn") {
    spec.darl.lr_dqn = to_double(key, value);
    range_check(key, spec.darl.lr_dqn > 0.0, "lr must be > 0");
  } else if (key == "darl.lr_adv") {
    spec.darl.lr_adv = to_double(key, value);
    range_check(key, spec.darl.lr_adv > 0.0, "lr must be > 0");
  } else if (key == "darl.epsilon_start") {
    spec.darl.epsilon_start = to_double(key, value);
  } else if (key == "darl.epsilon_end") {
    spec.darl.epsilon_end = to_double(key, value);
  } else if (key == "darl.epsilon_decay_fraction") {
    spec.darl.epsilon_decay_fraction = to_double(key, value);
  } else if (key == "darl.replay_capacity") {
    spec.darl.replay_capacity = static_cast<int>(to_long(key, value));
  } else if (key == "darl.replay_batch") {
    spec.darl.replay_batch = static_cast<int>(to_long(key, value));
  } else if (key == "darl.batch_cap") {
    spec.darl.batch_cap = static_cast<int>(to_long(key, value));
  } else if (key == "darl.feature_dim") {
    spec.darl.feature_dim = static_cast<int>(to_long(key, value));
  } else if (key == "darl.early_stop") {
    spec.darl.early_stop = to_long(key, value) != 0;
  } else if (key == "darl.plateau_tol") {
    spec.darl.plateau_tol = to_double(key, value);
  } else if (key == "darl.plateau_window") {
    spec.darl.plateau_window = static_cast<int>(to_long(key, value));
  } else if (key == "run.seeds") {
    spec.seeds.clear();
    for (const auto& s : split(value, ','))
      spec.seeds.push_back(static_cast<std::uint64_t>(to_long(key, s)));
    range_check(key, !spec.seeds.empty(), "need at least one seed");
  } else if (key == "run.variants") {
    spec.variants.clear();
    for (const auto& s : split(value, ','))
      spec.variants.push_back(orch::variant_from_string(s));
    range_check(key, !spec.variants.empty(), "need at least one variant");
  } else if (key == "run.out_dir") {
    spec.out_dir = value;
  } else if (key == "sweep.taus") {
    spec.sweep_taus.clear();
    for (const auto& s : split(value, ','))
      spec.sweep_taus.push_back(to_double(key, s));
  } else {
    std::string msg = "unknown config key '" + key + "'; valid keys:";
    for (const auto& k : kKeys) msg += " " + k;
    throw std::invalid_argument(msg);
  }
}

void apply_line(ExperimentSpec& spec, const std::string& raw) {
  std::string line = raw;
  if (const auto hash = line.find('#'); hash != std::string::npos)
    line.erase(hash);
  // trim
  const auto b = line.find_first_not_of(" \t\r");
  if (b == std::string::npos) return;
  const auto e = line.find_last_not_of(" \t\r");
  line = line.substr(b, e - b + 1);
  const auto eq = line.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("config line '" + line +
                                "' is not key=value");
  std::string key = line.substr(0, eq);
  std::string value = line.substr(eq + 1);
  while (!key.empty() && (key.back() == ' ' || key.back() == '\t'))
    key.pop_back();
  while (!value.empty() && (value.front() == ' ' || value.front() == '\t'))
    value.erase(value.begin());
  apply_key(spec, key, value);
}

}  // namespace

const std::vector<std::string>& config_keys() { return kKeys; }

ExperimentSpec parse_config(const std::optional<std::filesystem::path>& path,
                            const std::vector<std::string>& overrides) {
  ExperimentSpec spec;
  if (path) {
    std::ifstream is(*path);
    if (!is)
      throw std::runtime_error("cannot read config file " + path->string());
    std::string line;
    while (std::getline(is, line)) apply_line(spec, line);
  }
  for (const auto& o : overrides) apply_line(spec, o);

  // keep the shift vectors consistent with d_in
  if (!spec.task.shift.translation.size())
    spec.task.shift.translation = nn::Vector::Zero(spec.task.d_in);
  if (!spec.task.shift.scale.size())
    spec.task.shift.scale = nn::Vector::Ones(spec.task.d_in);
  if (spec.task.n_shared >= spec.task.k_source)
    throw std::out_of_range(
        "config key 'task.n_shared' out of range: must be < task.k_source");
  spec.darl.validate();
  return spec;
}

void export_metrics(const orch::RunMetrics& metrics,
                    const std::filesystem::path& dir) {
  if (metrics.records.empty())
    throw std::invalid_argument("export_metrics: no records");
  std::filesystem::create_directories(dir);
  const auto mu_len = metrics.records.front().mu.size();

  std::ofstream csv(dir / "metrics.csv", std::ios::binary);
  if (!csv)
    throw std::runtime_error("cannot write " + (dir / "metrics.csv").string());
  csv << "iteration,episode_len,mean_reward,precision,target_acc,test_error,"
         "d_loss,c_loss,adv_loss,q_loss,epsilon,adv_skipped";
  for (Eigen::Index i = 0; i < mu_len; ++i) csv << ",mu_" << i;
  csv << '\n';
  for (const auto& r : metrics.records) {
    csv << r.iteration << ',' << r.episode_len << ',' << fmt17(r.mean_reward)
        << ',' << fmt17(r.precision) << ',' << fmt17(r.target_acc) << ','
        << fmt17(r.test_error) << ',' << fmt17(r.d_loss) << ','
        << fmt17(r.c_loss) << ',' << fmt17(r.adv_loss) << ','
        << fmt17(r.q_loss) << ',' << fmt17(r.epsilon) << ','
        << (r.adv_skipped ? 1 : 0);
    for (Eigen::Index i = 0; i < r.mu.size(); ++i)
      csv << ',' << fmt17(r.mu(i));
    csv << '\n';
  }

  const auto& last = metrics.records.back();
  std::ofstream sum(dir / "summary.txt", std::ios::binary);
  sum << "iterations " << metrics.records.size() << '\n';
  sum << "final_target_acc " << fmt17(last.target_acc) << '\n';
  sum << "final_test_error " << fmt17(last.test_error) << '\n';
  sum << "final_precision " << fmt17(last.precision) << '\n';
  sum << "final_mean_reward " << fmt17(last.mean_reward) << '\n';
  sum << "final_epsilon " << fmt17(last.epsilon) << '\n';
}

orch::RunMetrics load_metrics_csv(const std::filesystem::path& csv) {
  std::ifstream is(csv);
  if (!is) throw std::runtime_error("cannot read " + csv.string());
  std::string header;
  std::getline(is, header);
  const auto cols = split(header, ',');
  Eigen::Index mu_len = 0;
  for (const auto& c : cols)
    if (c.rfind("mu_", 0) == 0) mu_len += 1;

  orch::RunMetrics m;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    orch::IterationRecord r;
    r.iteration = static_cast<int>(to_long("iteration", f[0]));
    r.episode_len = static_cast<int>(to_long("episode_len", f[1]));
    r.mean_reward = to_double("mean_reward", f[2]);
    r.precision = to_double("precision", f[3]);
    r.target_acc = to_double("target_acc", f[4]);
    r.test_error = to_double("test_error", f[5]);
    r.d_loss = to_double("d_loss", f[6]);
    r.c_loss = to_double("c_loss", f[7]);
    r.adv_loss = to_double("adv_loss", f[8]);
    r.q_loss = to_double("q_loss", f[9]);
    r.epsilon = to_double("epsilon", f[10]);
    r.adv_skipped = to_long("adv_skipped", f[11]) != 0;
    r.mu = nn::Vector(mu_len);
    for (Eigen::Index i = 0; i < mu_len; ++i)
      r.mu(i) = to_double("mu", f[12 + i]);
    m.records.push_back(std::move(r));
  }
  return m;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<SweepRow> run_threshold_sweep(const ExperimentSpec& spec,
                                          const std::vector<double>& taus) {
  if (taus.size() < 3)
    throw std::invalid_argument(
        "threshold sweep needs at least 3 tau values");
  const synth::DaTask task = synth::generate_task(spec.task);
  std::vector<SweepRow> rows;
  for (double tau : taus) {
    std::vector<double> finals;
    for (std::uint64_t seed : spec.seeds) {
      orch::DarlConfig cfg = spec.darl;
      cfg.tau = tau;
      cfg.seed = seed;
      const auto res = orch::run_darl(task, cfg);
      finals.push_back(res.metrics.records.back().target_acc);
      std::ostringstream sub;
      sub << "tau_" << tau << "/seed_" << seed;
      export_metrics(res.metrics, spec.out_dir / "sweep" / sub.str());
    }
    rows.push_back({tau, median(finals)});
  }
  std::filesystem::create_directories(spec.out_dir);
  std::ofstream csv(spec.out_dir / "sweep.csv", std::ios::binary);
  csv << "tau,median_target_acc\n";
  for (const auto& r : rows)
    csv << fmt17(r.tau) << ',' << fmt17(r.median_accuracy) << '\n';
  return rows;
}

std::vector<VariantRow> run_variant_grid(const ExperimentSpec& spec,
                                         const synth::DaTask& task) {
  std::vector<VariantRow> rows;
  for (orch::Variant v : spec.variants) {
    std::vector<double> finals;
    for (std::uint64_t seed : spec.seeds) {
      orch::DarlConfig cfg = spec.darl;
      cfg.seed = seed;
      const auto res = orch::run_ablation(task, cfg, v);
      finals.push_back(res.metrics.records.back().target_acc);
      std::ostringstream sub;
      sub << to_string(v) << "/seed_" << seed;
      export_metrics(res.metrics, spec.out_dir / sub.str());
    }
    rows.push_back({v, median(finals)});
  }
  std::filesystem::create_directories(spec.out_dir);
  std::ofstream csv(spec.out_dir / "ablation.csv", std::ios::binary);
  csv << "variant,median_target_acc\n";
  for (const auto& r : rows)
    csv << to_string(r.variant) << ',' << fmt17(r.median_accuracy) << '\n';
  return rows;
}

}  // namespace darl::harness
