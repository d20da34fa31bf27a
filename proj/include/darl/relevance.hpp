#pragma once

#include <stdexcept>

#include "darl/adversarial.hpp"

namespace darl::relevance {

using nn::Matrix;
using nn::Vector;

/// Class-level relevance mu: mean predicted class distribution over the
/// target data, normalized by its maximum. Entries in [0,1].
struct ClassRelevance {
  Vector mu;
  bool degenerate = false;  // max was 0; mu returned unnormalized
};

inline ClassRelevance class_relevance(const adv::AdvNets& nets,
                                      const Matrix& target_x) {
  if (target_x.cols() == 0)
    throw std::invalid_argument("class_relevance needs a nonempty target");
  const auto pred = adv::predict(nets, target_x);
  ClassRelevance r;
  r.mu = pred.class_probs.rowwise().mean();
  const double mx = r.mu.maxCoeff();
  if (mx > 0.0) {
    r.mu /= mx;
  } else {
    r.degenerate = true;
  }
  return r;
}

/// Relevance of one source instance: mu_i * D(F(x))_d, the product of its
/// class relevance and the discriminator's domain-slot probability.
inline double relevance_score(const adv::AdvNets& nets, const Matrix& x,
                              const ClassRelevance& rel, int class_label) {
  if (class_label < 0 || class_label >= nets.k_source)
    throw std::invalid_argument("relevance_score: class label out of range");
  const auto pred = adv::predict(nets, x);
  const double domain_prob = pred.d_probs(nets.k_source, 0);
  return rel.mu(class_label) * domain_prob;
}

/// Binary reward: +1 iff phi > tau (strict), else -1. A -1 also signals
/// episode termination to the caller.
inline int reward(double phi, double tau) {
  if (tau < 0.0 || tau > 1.0)
    throw std::invalid_argument("reward: tau must be in [0,1]");
  return phi > tau ? +1 : -1;
}

}  // namespace darl::relevance
