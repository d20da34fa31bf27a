#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "darl/nn.hpp"
#include "darl/synthdata.hpp"

namespace darl::adv {

using nn::GradSet;
using nn::Matrix;
using nn::MlpSpec;
using nn::ParamSet;
using nn::Vector;

enum class Domain { Source, Target };

/// Feature extractor F, classifier C and (K+1)-way discriminator D.
struct AdvNets {
  ParamSet f, c, d;
  MlpSpec f_spec, c_spec, d_spec;
  int k_source = 0;
  int feature_dim = 0;
};

/// Desk-scale ladders: F d_in->32->32->feature_dim, C feature_dim->K,
/// D feature_dim->32->(K+1).
AdvNets make_adv_nets(int d_in, int k_source, int feature_dim,
                      std::mt19937_64& rng);

/// Discriminator-step labels: a source instance of class i is one-hot at
/// slot i; a target instance is one-hot at the domain slot K.
/// Returns a (K+1) x n matrix of one-hot columns.
Matrix build_disc_labels(Domain domain, std::span<const int> class_labels,
                         int k, int n_target = 0);

/// Feature-step labels, the flipped encoding: a source instance goes to the
/// domain slot K; a target instance with pseudo label j is one-hot at slot j.
Matrix build_feat_labels(Domain domain, std::span<const int> pseudo_labels,
                         int k, int n_source = 0);

struct ClassifierLossResult {
  double loss = 0.0;
  GradSet f_grads;
  GradSet c_grads;
};

/// Mean cross-entropy of C(F(x)) against one-hot labels; gradients for both
/// C and F.
ClassifierLossResult classifier_loss(const AdvNets& nets, const Matrix& x,
                                     std::span<const int> y);

/// One Adam step on D with F frozen: sum of the mean source-batch and mean
/// target-batch cross entropies under the discriminator labels.
double discriminator_step(AdvNets& nets, const Matrix& src_x,
                          std::span<const int> src_y, const Matrix& tgt_x,
                          double lr);

struct FeatureStepResult {
  double classifier_loss = 0.0;  // source risk term
  double adversarial_loss = 0.0;  // confusion term under the flipped labels
};

/// One Adam step on F and C with D frozen. Pseudo labels for the target
/// batch are taken from the current C(F(x)) before the update.
FeatureStepResult feature_classifier_step(AdvNets& nets, const Matrix& src_x,
                                          std::span<const int> src_y,
                                          const Matrix& tgt_x, double lr);

/// Full-batch source training of F and C; D untouched. Returns the per-epoch
/// loss curve.
std::vector<double> pretrain_source(AdvNets& nets, const synth::DaTask& task,
                                    int epochs, double lr);

struct Prediction {
  Matrix class_probs;              // K x n
  std::vector<int> pseudo_labels;  // argmax per column, ties -> lowest index
  Matrix d_probs;                  // (K+1) x n
};

Prediction predict(const AdvNets& nets, const Matrix& x);

int argmax_lowest(const Vector& v);

void save_adv_nets(const AdvNets& nets, const std::filesystem::path& dir);
AdvNets load_adv_nets(const std::filesystem::path& dir);

}  // namespace darl::adv
