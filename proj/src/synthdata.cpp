#include "darl/synthdata.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>

#include "darl/rng.hpp"

namespace darl::synth {

namespace {

void check_params(const TaskParams& p) {
  if (p.k_source < 2) throw std::invalid_argument("k_source must be >= 2");
  if (p.n_shared < 1 || p.n_shared >= p.k_source)
    throw std::invalid_argument("need 1 <= n_shared < k_source");
  if (p.d_in < 2) throw std::invalid_argument("d_in must be >= 2");
  if (p.per_class_src < 1 || p.per_class_tgt < 1)
    throw std::invalid_argument("per-class counts must be >= 1");
  if (p.class_separation <= 0.0)
    throw std::invalid_argument("class_separation must be > 0");
  if (p.blob_sigma < 0.0)
    throw std::invalid_argument("blob_sigma must be >= 0");
}

Vector class_mean(int c, int k, int d_in, double separation) {
  Vector m = Vector::Zero(d_in);
  const double angle = 2.0 * std::numbers::pi * c / k;
  m(0) = separation * std::cos(angle);
  m(1) = separation * std::sin(angle);
  return m;
}

}  // namespace

ShiftSpec identity_shift(int d_in) {
  ShiftSpec s;
  s.translation = Vector::Zero(d_in);
  s.scale = Vector::Ones(d_in);
  return s;
}

TaskParams default_task_params() {
  TaskParams p;
  p.shift = identity_shift(p.d_in);
  p.shift.rotation_angle = std::numbers::pi / 6.0;  // 30 degrees
  p.shift.scale << 0.4, 0.4;
  p.shift.noise_sigma = 0.6;
  return p;
}

Matrix apply_domain_shift(const Matrix& points, const ShiftSpec& shift,
                          std::uint64_t seed) {
  const auto d = points.rows();
  Vector scale = shift.scale.size() ? shift.scale : Vector::Ones(d);
  Vector trans = shift.translation.size() ? shift.translation : Vector::Zero(d);
  if (scale.size() != d || trans.size() != d)
    throw std::invalid_argument("shift dims do not match points");
  if ((scale.array() <= 0.0).any())
    throw std::invalid_argument("shift scale factors must be > 0");

  Matrix out = scale.asDiagonal() * points;
  // rotation acts on the first two coordinates only
  const double c = std::cos(shift.rotation_angle);
  const double s = std::sin(shift.rotation_angle);
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const double x = out(0, j), y = out(1, j);
    out(0, j) = c * x - s * y;
    out(1, j) = s * x + c * y;
  }
  out.colwise() += trans;
  if (shift.noise_sigma > 0.0) {
    std::mt19937_64 rng(split_seed(seed, 0xd5));
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      for (Eigen::Index i = 0; i < d; ++i)
        out(i, j) += normal(rng, 0.0, shift.noise_sigma);
  }
  return out;
}

DaTask generate_task(const TaskParams& p) {
  check_params(p);
  ShiftSpec shift = p.shift;
  if (!shift.translation.size()) shift.translation = Vector::Zero(p.d_in);
  if (!shift.scale.size()) shift.scale = Vector::Ones(p.d_in);

  DaTask task;
  task.k_source = p.k_source;
  for (int c = 0; c < p.n_shared; ++c) task.shared_classes.push_back(c);

  std::mt19937_64 src_rng(split_seed(p.seed, 0x50));
  const int n_s = p.k_source * p.per_class_src;
  task.source_x = Matrix(p.d_in, n_s);
  task.source_y.resize(n_s);
  int col = 0;
  for (int c = 0; c < p.k_source; ++c) {
    const Vector mean = class_mean(c, p.k_source, p.d_in, p.class_separation);
    for (int i = 0; i < p.per_class_src; ++i, ++col) {
      for (int dim = 0; dim < p.d_in; ++dim)
        task.source_x(dim, col) = mean(dim) + normal(src_rng, 0.0, p.blob_sigma);
      task.source_y[col] = c;
    }
  }

  std::mt19937_64 tgt_rng(split_seed(p.seed, 0x71));
  const int n_t = p.n_shared * p.per_class_tgt;
  Matrix raw(p.d_in, n_t);
  task.target_y_hidden.resize(n_t);
  col = 0;
  for (int c = 0; c < p.n_shared; ++c) {
    const Vector mean = class_mean(c, p.k_source, p.d_in, p.class_separation);
    for (int i = 0; i < p.per_class_tgt; ++i, ++col) {
      for (int dim = 0; dim < p.d_in; ++dim)
        raw(dim, col) = mean(dim) + normal(tgt_rng, 0.0, p.blob_sigma);
      task.target_y_hidden[col] = c;
    }
  }
  task.target_x = apply_domain_shift(raw, shift, split_seed(p.seed, 0x9f));
  return task;
}

TaskSummary dataset_summary(const DaTask& task) {
  TaskSummary s;
  s.source_counts.assign(task.k_source, 0);
  s.target_counts.assign(task.k_source, 0);
  for (int y : task.source_y) s.source_counts[y] += 1;
  for (int y : task.target_y_hidden) s.target_counts[y] += 1;
  std::vector<char> is_shared(task.k_source, 0);
  for (int c : task.shared_classes) is_shared[c] = 1;
  for (int c = 0; c < task.k_source; ++c)
    (is_shared[c] ? s.shared : s.outliers).push_back(c);
  return s;
}

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_matrix(std::ofstream& os, const Matrix& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      if (i) os << ' ';
      os << fmt17(m(i, j));
    }
    os << '\n';
  }
}

Matrix read_matrix(std::ifstream& is, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i)
      if (!(is >> m(i, j)))
        throw std::runtime_error("task file: truncated matrix body");
  return m;
}

}  // namespace

void save_task(const DaTask& task, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write task file " + path.string());
  os << "darl-task 1\n";
  os << "d_in " << task.source_x.rows() << '\n';
  os << "k_source " << task.k_source << '\n';
  os << "n_source " << task.source_x.cols() << '\n';
  os << "n_target " << task.target_x.cols() << '\n';
  os << "shared";
  for (int c : task.shared_classes) os << ' ' << c;
  os << '\n';
  os << "source_y";
  for (int y : task.source_y) os << ' ' << y;
  os << '\n';
  os << "target_y_hidden";
  for (int y : task.target_y_hidden) os << ' ' << y;
  os << '\n';
  os << "source_x\n";
  write_matrix(os, task.source_x);
  os << "target_x\n";
  write_matrix(os, task.target_x);
}

DaTask load_task(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read task file " + path.string());
  std::string magic, key;
  int version = 0;
  is >> magic >> version;
  if (magic != "darl-task" || version != 1)
    throw std::runtime_error("not a darl task file: " + path.string());
  DaTask task;
  Eigen::Index d_in = 0, n_source = 0, n_target = 0;
  is >> key >> d_in;
  is >> key >> task.k_source;
  is >> key >> n_source;
  is >> key >> n_target;
  is >> key;  // "shared"
  {
    std::string rest;
    std::getline(is, rest);
    std::istringstream ss(rest);
    int c;
    while (ss >> c) task.shared_classes.push_back(c);
  }
  is >> key;
  task.source_y.resize(n_source);
  for (auto& y : task.source_y) is >> y;
  is >> key;
  task.target_y_hidden.resize(n_target);
  for (auto& y : task.target_y_hidden) is >> y;
  is >> key;
  task.source_x = read_matrix(is, d_in, n_source);
  is >> key;
  task.target_x = read_matrix(is, d_in, n_target);
  return task;
}

}  // namespace darl::synth
