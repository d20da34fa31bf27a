#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "darl/nn.hpp"

namespace darl::synth {

using nn::Matrix;
using nn::Vector;

/// Affine domain shift: x' = R(angle in the first two coords) * diag(scale) * x
/// + translation + N(0, noise_sigma^2 I).
struct ShiftSpec {
  double rotation_angle = 0.0;
  Vector translation;  // length d_in
  Vector scale;        // length d_in, entries > 0
  double noise_sigma = 0.0;
};

ShiftSpec identity_shift(int d_in);

/// A generated partial-domain-adaptation problem. target_y_hidden is ground
/// truth for evaluation only; training code must not read it.
struct DaTask {
  Matrix source_x;  // d_in x N_s
  std::vector<int> source_y;
  Matrix target_x;  // d_in x N_t
  std::vector<int> target_y_hidden;
  std::vector<int> shared_classes;  // strict subset of [0, k_source)
  int k_source = 0;
};

struct TaskParams {
  std::uint64_t seed = 1;
  int k_source = 4;
  int n_shared = 2;
  int d_in = 2;
  int per_class_src = 50;
  int per_class_tgt = 40;
  double class_separation = 6.0;
  double blob_sigma = 0.5;
  ShiftSpec shift;  // empty vectors mean "use default shift for d_in"
};

/// The default desk-scale task: 30-degree rotation, uniform 0.4 shrink,
/// noise 0.6. Calibrated so a source-only classifier lands around 0.8
/// target accuracy while the target clusters stay mutually separable.
TaskParams default_task_params();

/// Gaussian class blobs with means on a circle of radius class_separation;
/// the target draws only from the first n_shared classes, then passes
/// through the domain shift. Deterministic given seed.
DaTask generate_task(const TaskParams& p);

Matrix apply_domain_shift(const Matrix& points, const ShiftSpec& shift,
                          std::uint64_t seed);

struct TaskSummary {
  std::vector<int> source_counts;  // per class
  std::vector<int> target_counts;  // per class, against hidden labels
  std::vector<int> shared;
  std::vector<int> outliers;
};

TaskSummary dataset_summary(const DaTask& task);

/// Text format: header (dims, counts, shared set) + whitespace-separated
/// numeric body at 17 significant digits.
void save_task(const DaTask& task, const std::filesystem::path& path);
DaTask load_task(const std::filesystem::path& path);

}  // namespace darl::synth
