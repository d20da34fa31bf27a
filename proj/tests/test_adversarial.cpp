#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "darl/adversarial.hpp"
#include "darl/rng.hpp"
#include "darl/synthdata.hpp"

using namespace darl;
using nn::Matrix;
using nn::Vector;

namespace {

bool params_equal(const nn::ParamSet& a, const nn::ParamSet& b) {
  if (a.layers.size() != b.layers.size() || a.step_count != b.step_count)
    return false;
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    if (a.layers[k].w != b.layers[k].w || a.layers[k].b != b.layers[k].b)
      return false;
    if (a.adam_m[k].w != b.adam_m[k].w || a.adam_m[k].b != b.adam_m[k].b)
      return false;
    if (a.adam_v[k].w != b.adam_v[k].w || a.adam_v[k].b != b.adam_v[k].b)
      return false;
  }
  return true;
}

double max_param_diff(const nn::ParamSet& a, const nn::ParamSet& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    m = std::max(m, (a.layers[k].w - b.layers[k].w).cwiseAbs().maxCoeff());
    m = std::max(m, (a.layers[k].b - b.layers[k].b).cwiseAbs().maxCoeff());
  }
  return m;
}

void zero_layer(nn::LayerParams& l) {
  l.w.setZero();
  l.b.setZero();
}

adv::AdvNets small_nets(std::uint64_t seed, int d_in = 2, int k = 3,
                        int d = 4) {
  std::mt19937_64 rng(seed);
  return adv::make_adv_nets(d_in, k, d, rng);
}

}  // namespace

TEST_CASE("discriminator labels: source one-hot at class, target at slot K") {
  for (int k = 1; k <= 8; ++k) {
    for (int i = 0; i < k; ++i) {
      const std::vector<int> y = {i};
      const Matrix m = adv::build_disc_labels(adv::Domain::Source, y, k, 0);
      CHECK(m.rows() == k + 1);
      CHECK(m.cols() == 1);
      CHECK(m.sum() == 1.0);
      CHECK(m(i, 0) == 1.0);
      CHECK(m(k, 0) == 0.0);
    }
    const Matrix t = adv::build_disc_labels(adv::Domain::Target, {}, k, 3);
    CHECK(t.cols() == 3);
    for (int j = 0; j < 3; ++j) {
      CHECK(t.col(j).sum() == 1.0);
      CHECK(t(k, j) == 1.0);
    }
  }
}

TEST_CASE("feature labels: source at slot K, target one-hot at pseudo label") {
  for (int k = 1; k <= 8; ++k) {
    const Matrix s = adv::build_feat_labels(adv::Domain::Source, {}, k, 2);
    CHECK(s.cols() == 2);
    for (int j = 0; j < 2; ++j) {
      CHECK(s.col(j).sum() == 1.0);
      CHECK(s(k, j) == 1.0);
    }
    for (int j = 0; j < k; ++j) {
      const std::vector<int> pseudo = {j};
      const Matrix t = adv::build_feat_labels(adv::Domain::Target, pseudo, k, 0);
      CHECK(t.sum() == 1.0);
      CHECK(t(j, 0) == 1.0);
      CHECK(t(k, 0) == 0.0);
    }
    // structural duality of the two encodings
    CHECK(adv::build_feat_labels(adv::Domain::Source, {}, k, 5) ==
          adv::build_disc_labels(adv::Domain::Target, {}, k, 5));
  }
}

TEST_CASE("label builders reject out-of-range class indices") {
  const std::vector<int> bad = {3};
  CHECK_THROWS_AS(adv::build_disc_labels(adv::Domain::Source, bad, 3, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(adv::build_feat_labels(adv::Domain::Target, bad, 3, 0),
                  std::invalid_argument);
}

TEST_CASE("uniform classifier head gives loss ln K") {
  auto nets = small_nets(1, 2, 4);
  for (auto& l : nets.c.layers) zero_layer(l);
  Matrix x = Matrix::Random(2, 6);
  std::vector<int> y = {0, 1, 2, 3, 0, 1};
  const auto res = adv::classifier_loss(nets, x, y);
  CHECK(res.loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("classifier gradients through F match finite differences") {
  // tanh hidden layers keep the finite-difference probe off relu kinks
  adv::AdvNets nets = small_nets(2);
  nets.f_spec.hidden = nn::Activation::Tanh;
  Matrix x = Matrix::Random(2, 5);
  std::vector<int> y = {0, 1, 2, 0, 1};
  const auto res = adv::classifier_loss(nets, x, y);

  const double h = 1e-5;
  for (std::size_t k = 0; k < nets.f.layers.size(); ++k) {
    auto& w = nets.f.layers[k].w;
    for (Eigen::Index idx = 0; idx < w.size(); ++idx) {
      const double orig = w(idx);
      w(idx) = orig + h;
      const double up = adv::classifier_loss(nets, x, y).loss;
      w(idx) = orig - h;
      const double dn = adv::classifier_loss(nets, x, y).loss;
      w(idx) = orig;
      const double fd = (up - dn) / (2.0 * h);
      const double an = res.f_grads[k].w(idx);
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      CHECK(std::abs(fd - an) / denom < 1e-4);
    }
  }
}

TEST_CASE("discriminator step freezes F and C") {
  auto nets = small_nets(3);
  const auto f_before = nets.f;
  const auto c_before = nets.c;
  const auto d_before = nets.d;
  Matrix src = Matrix::Random(2, 4), tgt = Matrix::Random(2, 4);
  std::vector<int> y = {0, 1, 2, 0};
  adv::discriminator_step(nets, src, y, tgt, 1e-3);
  CHECK(params_equal(nets.f, f_before));
  CHECK(params_equal(nets.c, c_before));
  CHECK_FALSE(params_equal(nets.d, d_before));
}

TEST_CASE("feature step freezes D") {
  auto nets = small_nets(4);
  const auto d_before = nets.d;
  Matrix src = Matrix::Random(2, 4), tgt = Matrix::Random(2, 4);
  std::vector<int> y = {0, 1, 2, 0};
  adv::feature_classifier_step(nets, src, y, tgt, 1e-3);
  CHECK(params_equal(nets.d, d_before));
}

TEST_CASE("zero discriminator head makes the first step loss 2 ln(K+1)") {
  auto nets = small_nets(5, 2, 3);
  zero_layer(nets.d.layers.back());  // uniform softmax regardless of input
  Matrix src = Matrix::Random(2, 4), tgt = Matrix::Random(2, 6);
  std::vector<int> y = {0, 1, 2, 0};
  auto probe = nets;  // loss is computed before the update moves anything
  const double loss = adv::discriminator_step(probe, src, y, tgt, 1e-4);
  CHECK(loss == doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("empty batches are rejected") {
  auto nets = small_nets(6);
  Matrix some = Matrix::Random(2, 3), none(2, 0);
  std::vector<int> y = {0, 1, 2};
  CHECK_THROWS_AS(adv::discriminator_step(nets, none, {}, some, 1e-4),
                  std::invalid_argument);
  CHECK_THROWS_AS(adv::discriminator_step(nets, some, y, none, 1e-4),
                  std::invalid_argument);
  CHECK_THROWS_AS(adv::feature_classifier_step(nets, some, y, none, 1e-4),
                  std::invalid_argument);
}

TEST_CASE("with D frozen at uniform output the feature step is a pure classifier step") {
  auto nets = small_nets(7);
  zero_layer(nets.d.layers.back());
  auto pure = nets;

  Matrix src = Matrix::Random(2, 5), tgt = Matrix::Random(2, 5);
  std::vector<int> y = {0, 1, 2, 0, 1};
  adv::feature_classifier_step(nets, src, y, tgt, 1e-3);

  const auto cls = adv::classifier_loss(pure, src, y);
  nn::adam_step(pure.f, cls.f_grads, 1e-3, 0.5);
  nn::adam_step(pure.c, cls.c_grads, 1e-3, 0.5);

  CHECK(max_param_diff(nets.f, pure.f) < 1e-6);
  CHECK(max_param_diff(nets.c, pure.c) < 1e-6);
}

TEST_CASE("feature-step loss trends down on a fixed batch with frozen D") {
  auto nets = small_nets(8, 2, 3, 4);
  Matrix src = Matrix::Random(2, 8), tgt = Matrix::Random(2, 8);
  std::vector<int> y = {0, 1, 2, 0, 1, 2, 0, 1};
  double prev = std::numeric_limits<double>::infinity();
  int non_monotone = 0;
  for (int s = 0; s < 50; ++s) {
    const auto r = adv::feature_classifier_step(nets, src, y, tgt, 1e-3);
    const double combined = r.classifier_loss + r.adversarial_loss;
    non_monotone += combined > prev;
    prev = combined;
  }
  CHECK(non_monotone <= 5);
}

TEST_CASE("discriminator overfits well-separated frozen features") {
  synth::TaskParams p;
  p.seed = 3;
  p.k_source = 3;
  p.n_shared = 2;
  p.per_class_src = 30;
  p.per_class_tgt = 30;
  p.blob_sigma = 0.1;
  p.shift = synth::identity_shift(2);
  p.shift.translation << 1.0, 1.0;
  const auto task = synth::generate_task(p);

  auto nets = small_nets(9, 2, 3, 4);
  for (int s = 0; s < 2000; ++s)
    adv::discriminator_step(nets, task.source_x, task.source_y, task.target_x,
                            3e-3);

  const auto src_pred = adv::predict(nets, task.source_x);
  const auto tgt_pred = adv::predict(nets, task.target_x);
  double src_ok = 0.0;
  for (Eigen::Index j = 0; j < task.source_x.cols(); ++j)
    src_ok += src_pred.d_probs(task.source_y[j], j);
  double tgt_ok = tgt_pred.d_probs.row(3).mean();
  CHECK(src_ok / task.source_x.cols() > 0.9);
  CHECK(tgt_ok > 0.9);
}

TEST_CASE("pretraining fits the source and leaves D untouched") {
  const auto task = synth::generate_task(synth::default_task_params());
  std::mt19937_64 rng(11);
  auto nets = adv::make_adv_nets(2, task.k_source, 16, rng);
  const auto d_before = nets.d;
  const auto curve = adv::pretrain_source(nets, task, 5000, 1e-4);
  CHECK(curve.size() == 5000);
  CHECK(curve.back() < curve.front());
  CHECK(params_equal(nets.d, d_before));

  const auto pred = adv::predict(nets, task.source_x);
  int hits = 0;
  for (Eigen::Index j = 0; j < task.source_x.cols(); ++j)
    hits += pred.pseudo_labels[j] == task.source_y[j];
  CHECK(static_cast<double>(hits) / task.source_x.cols() >= 0.95);

  CHECK_THROWS_AS(adv::pretrain_source(nets, task, 0, 1e-4),
                  std::invalid_argument);
}

TEST_CASE("predict returns proper distributions and argmax pseudo labels") {
  auto nets = small_nets(12, 2, 3, 4);
  Matrix x = Matrix::Random(2, 10);
  const auto pred = adv::predict(nets, x);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    CHECK(pred.class_probs.col(j).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pred.d_probs.col(j).sum() == doctest::Approx(1.0).epsilon(1e-12));
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (pred.class_probs(i, j) > pred.class_probs(best, j)) best = i;
    CHECK(pred.pseudo_labels[j] == best);
  }

  // uniform classifier: the tie rule picks index 0 everywhere
  for (auto& l : nets.c.layers) zero_layer(l);
  const auto uni = adv::predict(nets, x);
  for (int lbl : uni.pseudo_labels) CHECK(lbl == 0);
}

TEST_CASE("initial discriminator is exactly domain-agnostic") {
  // an untrained D must score every instance 0.5 on the domain slot, or
  // the first selection episodes can never earn a positive reward
  auto nets = small_nets(13, 2, 4, 8);
  Matrix x = Matrix::Random(2, 20) * 10.0;
  const auto pred = adv::predict(nets, x);
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    CHECK(pred.d_probs(4, j) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("adversarial nets round-trip through a checkpoint directory") {
  auto nets = small_nets(14);
  Matrix src = Matrix::Random(2, 4), tgt = Matrix::Random(2, 4);
  std::vector<int> y = {0, 1, 2, 0};
  adv::discriminator_step(nets, src, y, tgt, 1e-3);
  adv::feature_classifier_step(nets, src, y, tgt, 1e-3);

  const auto dir = std::filesystem::temp_directory_path() / "darl_adv_rt";
  adv::save_adv_nets(nets, dir);
  const auto back = adv::load_adv_nets(dir);
  CHECK(back.k_source == nets.k_source);
  CHECK(back.feature_dim == nets.feature_dim);
  CHECK(params_equal(back.f, nets.f));
  CHECK(params_equal(back.c, nets.c));
  CHECK(params_equal(back.d, nets.d));
  std::filesystem::remove_all(dir);
}
