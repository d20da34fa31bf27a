#include "darl/adversarial.hpp"

#include <fstream>
#include <stdexcept>
#include <string>

namespace darl::adv {

namespace {

// Paper setting for the adversarial optimizer: momentum 0.5.
constexpr double kAdvBeta1 = 0.5;

Matrix one_hot(std::span<const int> labels, int k) {
  Matrix m = Matrix::Zero(k, static_cast<Eigen::Index>(labels.size()));
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (labels[j] < 0 || labels[j] >= k)
      throw std::invalid_argument("class label " + std::to_string(labels[j]) +
                                  " out of range [0," + std::to_string(k) +
                                  ")");
    m(labels[j], static_cast<Eigen::Index>(j)) = 1.0;
  }
  return m;
}

GradSet& add_grads(GradSet& acc, const GradSet& g) {
  for (std::size_t k = 0; k < acc.size(); ++k) {
    acc[k].w += g[k].w;
    acc[k].b += g[k].b;
  }
  return acc;
}

void require_nonempty(const Matrix& src, const Matrix& tgt) {
  if (src.cols() == 0 || tgt.cols() == 0)
    throw std::invalid_argument("adversarial step needs nonempty batches");
}

}  // namespace

AdvNets make_adv_nets(int d_in, int k_source, int feature_dim,
                      std::mt19937_64& rng) {
  AdvNets nets;
  nets.k_source = k_source;
  nets.feature_dim = feature_dim;
  nets.f_spec = {{d_in, 32, 32, feature_dim}, nn::Activation::Relu,
                 nn::Output::Linear};
  nets.c_spec = {{feature_dim, k_source}, nn::Activation::Relu,
                 nn::Output::Softmax};
  nets.d_spec = {{feature_dim, 32, k_source + 1}, nn::Activation::Relu,
                 nn::Output::Softmax};
  nets.f = nn::init_params(nets.f_spec, rng);
  nets.c = nn::init_params(nets.c_spec, rng);
  nets.d = nn::init_params(nets.d_spec, rng);
  // An untrained discriminator should not yet claim instances for the
  // source: start its head at zero with the domain slot biased to ln K, so
  // D(.)_d is exactly 0.5 everywhere and the first episodes can select at
  // all. The head differentiates as soon as training starts.
  nets.d.layers.back().w.setZero();
  nets.d.layers.back().b(k_source) = std::log(static_cast<double>(k_source));
  return nets;
}

Matrix build_disc_labels(Domain domain, std::span<const int> class_labels,
                         int k, int n_target) {
  if (domain == Domain::Source) {
    Matrix m = Matrix::Zero(k + 1, static_cast<Eigen::Index>(class_labels.size()));
    m.topRows(k) = one_hot(class_labels, k);
    return m;
  }
  Matrix m = Matrix::Zero(k + 1, n_target);
  m.row(k).setOnes();
  return m;
}

Matrix build_feat_labels(Domain domain, std::span<const int> pseudo_labels,
                         int k, int n_source) {
  if (domain == Domain::Source) {
    Matrix m = Matrix::Zero(k + 1, n_source);
    m.row(k).setOnes();
    return m;
  }
  Matrix m = Matrix::Zero(k + 1, static_cast<Eigen::Index>(pseudo_labels.size()));
  m.topRows(k) = one_hot(pseudo_labels, k);
  return m;
}

ClassifierLossResult classifier_loss(const AdvNets& nets, const Matrix& x,
                                     std::span<const int> y) {
  nn::ForwardCache f_cache;
  const Matrix feat = nn::forward(nets.f, nets.f_spec, x, &f_cache);
  auto c_res = nn::loss_and_grad(nets.c, nets.c_spec, feat,
                                 one_hot(y, nets.k_source),
                                 nn::LossKind::CrossEntropy);
  auto f_bp = nn::backward(nets.f, nets.f_spec, f_cache, c_res.input_grad);
  return {c_res.loss, std::move(f_bp.grads), std::move(c_res.grads)};
}

double discriminator_step(AdvNets& nets, const Matrix& src_x,
                          std::span<const int> src_y, const Matrix& tgt_x,
                          double lr) {
  require_nonempty(src_x, tgt_x);
  const Matrix feat_src = nn::forward(nets.f, nets.f_spec, src_x);
  const Matrix feat_tgt = nn::forward(nets.f, nets.f_spec, tgt_x);

  auto src = nn::loss_and_grad(
      nets.d, nets.d_spec, feat_src,
      build_disc_labels(Domain::Source, src_y, nets.k_source),
      nn::LossKind::CrossEntropy);
  auto tgt = nn::loss_and_grad(
      nets.d, nets.d_spec, feat_tgt,
      build_disc_labels(Domain::Target, {}, nets.k_source,
                        static_cast<int>(tgt_x.cols())),
      nn::LossKind::CrossEntropy);
  add_grads(src.grads, tgt.grads);
  nn::adam_step(nets.d, src.grads, lr, kAdvBeta1);
  return src.loss + tgt.loss;
}

FeatureStepResult feature_classifier_step(AdvNets& nets, const Matrix& src_x,
                                          std::span<const int> src_y,
                                          const Matrix& tgt_x, double lr) {
  require_nonempty(src_x, tgt_x);
  // pseudo labels from the nets as they stand, before any update
  const std::vector<int> pseudo = predict(nets, tgt_x).pseudo_labels;

  auto cls = classifier_loss(nets, src_x, src_y);

  // confusion term: D fixed, gradients flow to F only
  nn::ForwardCache fs_cache, ft_cache;
  const Matrix feat_src = nn::forward(nets.f, nets.f_spec, src_x, &fs_cache);
  const Matrix feat_tgt = nn::forward(nets.f, nets.f_spec, tgt_x, &ft_cache);
  auto d_src = nn::loss_and_grad(
      nets.d, nets.d_spec, feat_src,
      build_feat_labels(Domain::Source, {}, nets.k_source,
                        static_cast<int>(src_x.cols())),
      nn::LossKind::CrossEntropy);
  auto d_tgt = nn::loss_and_grad(
      nets.d, nets.d_spec, feat_tgt,
      build_feat_labels(Domain::Target, pseudo, nets.k_source),
      nn::LossKind::CrossEntropy);
  auto f_src = nn::backward(nets.f, nets.f_spec, fs_cache, d_src.input_grad);
  auto f_tgt = nn::backward(nets.f, nets.f_spec, ft_cache, d_tgt.input_grad);

  add_grads(cls.f_grads, f_src.grads);
  add_grads(cls.f_grads, f_tgt.grads);
  nn::adam_step(nets.f, cls.f_grads, lr, kAdvBeta1);
  nn::adam_step(nets.c, cls.c_grads, lr, kAdvBeta1);
  return {cls.loss, d_src.loss + d_tgt.loss};
}

std::vector<double> pretrain_source(AdvNets& nets, const synth::DaTask& task,
                                    int epochs, double lr) {
  if (epochs < 1) throw std::invalid_argument("pretrain needs epochs >= 1");
  std::vector<double> curve;
  curve.reserve(epochs);
  for (int e = 0; e < epochs; ++e) {
    auto cls = classifier_loss(nets, task.source_x, task.source_y);
    nn::adam_step(nets.f, cls.f_grads, lr, kAdvBeta1);
    nn::adam_step(nets.c, cls.c_grads, lr, kAdvBeta1);
    curve.push_back(cls.loss);
  }
  return curve;
}

int argmax_lowest(const Vector& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

Prediction predict(const AdvNets& nets, const Matrix& x) {
  Prediction p;
  const Matrix feat = nn::forward(nets.f, nets.f_spec, x);
  p.class_probs = nn::forward(nets.c, nets.c_spec, feat);
  p.d_probs = nn::forward(nets.d, nets.d_spec, feat);
  p.pseudo_labels.resize(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    p.pseudo_labels[j] = argmax_lowest(p.class_probs.col(j));
  return p;
}

void save_adv_nets(const AdvNets& nets, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nn::save_params(nets.f, nets.f_spec, "feature", dir);
  nn::save_params(nets.c, nets.c_spec, "classifier", dir);
  nn::save_params(nets.d, nets.d_spec, "discriminator", dir);
  std::ofstream mf(dir / "adv.manifest");
  mf << "darl-adv 1\n";
  mf << "k_source " << nets.k_source << '\n';
  mf << "feature_dim " << nets.feature_dim << '\n';
}

AdvNets load_adv_nets(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "adv.manifest");
  if (!mf) throw std::runtime_error("missing adv.manifest in " + dir.string());
  std::string magic, key;
  int version = 0;
  AdvNets nets;
  mf >> magic >> version;
  if (magic != "darl-adv" || version != 1)
    throw std::runtime_error("bad adv.manifest in " + dir.string());
  mf >> key >> nets.k_source >> key >> nets.feature_dim;
  std::tie(nets.f, nets.f_spec) = nn::load_params("feature", dir);
  std::tie(nets.c, nets.c_spec) = nn::load_params("classifier", dir);
  std::tie(nets.d, nets.d_spec) = nn::load_params("discriminator", dir);
  return nets;
}

}  // namespace darl::adv
