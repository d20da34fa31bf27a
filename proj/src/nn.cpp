#include "darl/nn.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "darl/rng.hpp"

namespace darl::nn {

namespace {

constexpr double kProbFloor = 1e-12;

void check_spec(const MlpSpec& spec) {
  if (spec.widths.size() < 2)
    throw std::invalid_argument("MlpSpec needs at least 2 widths");
  for (int w : spec.widths)
    if (w < 1) throw std::invalid_argument("MlpSpec widths must be >= 1");
}

Matrix apply_hidden(const Matrix& z, Activation act) {
  if (act == Activation::Relu) return z.cwiseMax(0.0);
  return z.array().tanh().matrix();
}

Matrix hidden_grad(const Matrix& pre, const Matrix& post_grad, Activation act) {
  if (act == Activation::Relu)
    return (pre.array() > 0.0).cast<double>() * post_grad.array();
  // d tanh = 1 - tanh^2
  return (1.0 - pre.array().tanh().square()) * post_grad.array();
}

}  // namespace

ParamSet init_params(const MlpSpec& spec, std::mt19937_64& rng) {
  check_spec(spec);
  ParamSet p;
  for (std::size_t k = 0; k + 1 < spec.widths.size(); ++k) {
    const int fan_in = spec.widths[k];
    const int fan_out = spec.widths[k + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    LayerParams layer;
    layer.w = Matrix(fan_out, fan_in);
    for (int j = 0; j < fan_in; ++j)
      for (int i = 0; i < fan_out; ++i)
        layer.w(i, j) = uniform_real(rng, -limit, limit);
    layer.b = Vector::Zero(fan_out);
    p.layers.push_back(layer);
    p.adam_m.push_back({Matrix::Zero(fan_out, fan_in), Vector::Zero(fan_out)});
    p.adam_v.push_back({Matrix::Zero(fan_out, fan_in), Vector::Zero(fan_out)});
  }
  return p;
}

GradSet zero_grads(const MlpSpec& spec) {
  GradSet g;
  for (std::size_t k = 0; k + 1 < spec.widths.size(); ++k)
    g.push_back({Matrix::Zero(spec.widths[k + 1], spec.widths[k]),
                 Vector::Zero(spec.widths[k + 1])});
  return g;
}

Matrix softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const double m = logits.col(c).maxCoeff();
    Vector e = (logits.col(c).array() - m).exp();
    out.col(c) = e / e.sum();
  }
  return out;
}

Vector softmax(const Vector& logits) {
  return Vector(softmax(Matrix(logits)));
}

Matrix forward(const ParamSet& params, const MlpSpec& spec,
               const Matrix& input, ForwardCache* cache) {
  check_spec(spec);
  if (input.rows() != spec.input_dim())
    throw std::invalid_argument("forward: input has " +
                                std::to_string(input.rows()) +
                                " rows, spec expects " +
                                std::to_string(spec.input_dim()));
  if (params.layers.size() != spec.layer_count())
    throw std::invalid_argument("forward: params/spec layer count mismatch");

  Matrix a = input;
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    if (cache) cache->inputs.push_back(a);
    Matrix z = (params.layers[k].w * a).colwise() + params.layers[k].b;
    if (cache) cache->pre.push_back(z);
    if (k + 1 < params.layers.size()) {
      a = apply_hidden(z, spec.hidden);
    } else {
      a = (spec.output == Output::Softmax) ? softmax(z) : std::move(z);
    }
  }
  return a;
}

BackpropResult backward(const ParamSet& params, const MlpSpec& spec,
                        const ForwardCache& cache,
                        const Matrix& last_pre_grad) {
  BackpropResult res;
  res.grads.resize(params.layers.size());
  Matrix delta = last_pre_grad;
  for (std::size_t k = params.layers.size(); k-- > 0;) {
    res.grads[k].w = delta * cache.inputs[k].transpose();
    res.grads[k].b = delta.rowwise().sum();
    Matrix prev = params.layers[k].w.transpose() * delta;
    if (k > 0) {
      delta = hidden_grad(cache.pre[k - 1], prev, spec.hidden);
    } else {
      res.input_grad = std::move(prev);
    }
  }
  return res;
}

namespace {

// Loss and gradient w.r.t. the final pre-activation, given the forward output.
std::pair<double, Matrix> loss_and_pre_grad(const Matrix& out,
                                            const Matrix& targets,
                                            const MlpSpec& spec,
                                            LossKind kind) {
  if (out.rows() != targets.rows() || out.cols() != targets.cols())
    throw std::invalid_argument("loss: target shape mismatch");
  const double batch = static_cast<double>(out.cols());
  if (kind == LossKind::CrossEntropy) {
    if (spec.output != Output::Softmax)
      throw std::invalid_argument("cross_entropy requires a softmax head");
    const Matrix p = out.cwiseMax(kProbFloor);
    const double loss =
        -(targets.array() * p.array().log()).sum() / batch;
    return {loss, (out - targets) / batch};
  }
  const Matrix diff = out - targets;
  const double loss = diff.squaredNorm() / batch;
  return {loss, 2.0 * diff / batch};
}

void check_finite(double loss, const ForwardCache& cache) {
  if (std::isfinite(loss)) return;
  for (std::size_t k = 0; k < cache.pre.size(); ++k)
    if (!cache.pre[k].allFinite())
      throw std::runtime_error("non-finite loss; first offending layer " +
                               std::to_string(k));
  throw std::runtime_error("non-finite loss (inputs or targets)");
}

}  // namespace

LossGrad loss_and_grad(const ParamSet& params, const MlpSpec& spec,
                       const Matrix& input, const Matrix& targets,
                       LossKind kind) {
  ForwardCache cache;
  const Matrix out = forward(params, spec, input, &cache);
  auto [loss, pre_grad] = loss_and_pre_grad(out, targets, spec, kind);
  check_finite(loss, cache);
  auto bp = backward(params, spec, cache, pre_grad);
  return {loss, std::move(bp.grads), std::move(bp.input_grad)};
}

double loss_value(const ParamSet& params, const MlpSpec& spec,
                  const Matrix& input, const Matrix& targets, LossKind kind) {
  ForwardCache cache;
  const Matrix out = forward(params, spec, input, &cache);
  auto [loss, grad] = loss_and_pre_grad(out, targets, spec, kind);
  check_finite(loss, cache);
  return loss;
}

void adam_step(ParamSet& params, const GradSet& grads, double lr, double beta1,
               double beta2, double eps) {
  if (lr <= 0.0) throw std::invalid_argument("adam_step: lr must be > 0");
  if (grads.size() != params.layers.size())
    throw std::invalid_argument("adam_step: grad/param layer count mismatch");
  params.step_count += 1;
  const double t = static_cast<double>(params.step_count);
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    auto& m = params.adam_m[k];
    auto& v = params.adam_v[k];
    const auto& g = grads[k];
    if (g.w.rows() != params.layers[k].w.rows() ||
        g.w.cols() != params.layers[k].w.cols())
      throw std::invalid_argument("adam_step: grad shape mismatch at layer " +
                                  std::to_string(k));
    m.w = beta1 * m.w + (1.0 - beta1) * g.w;
    m.b = beta1 * m.b + (1.0 - beta1) * g.b;
    v.w = beta2 * v.w.array().matrix() + (1.0 - beta2) * g.w.array().square().matrix();
    v.b = beta2 * v.b.array().matrix() + (1.0 - beta2) * g.b.array().square().matrix();
    params.layers[k].w.array() -=
        lr * (m.w.array() / bc1) / ((v.w.array() / bc2).sqrt() + eps);
    params.layers[k].b.array() -=
        lr * (m.b.array() / bc1) / ((v.b.array() / bc2).sqrt() + eps);
  }
}

GradSet finite_diff_grad(const ParamSet& params, const MlpSpec& spec,
                         const Matrix& input, const Matrix& targets,
                         LossKind kind, double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: h must be > 0");
  ParamSet work = params;
  GradSet out = zero_grads(spec);
  auto probe = [&](double& slot, double& dest) {
    const double saved = slot;
    slot = saved + h;
    const double up = loss_value(work, spec, input, targets, kind);
    slot = saved - h;
    const double down = loss_value(work, spec, input, targets, kind);
    slot = saved;
    dest = (up - down) / (2.0 * h);
  };
  for (std::size_t k = 0; k < work.layers.size(); ++k) {
    auto& w = work.layers[k].w;
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i)
        probe(w(i, j), out[k].w(i, j));
    auto& b = work.layers[k].b;
    for (Eigen::Index i = 0; i < b.size(); ++i) probe(b(i), out[k].b(i));
  }
  return out;
}

namespace {

void write_blob(std::ofstream& os, const Matrix& m) {
  // Eigen is column-major; written in storage order. Little-endian host
  // assumed (checked at load via the manifest magic).
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(sizeof(double) * m.size()));
}

void read_blob(std::ifstream& is, Matrix& m) {
  is.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * m.size()));
}

void write_set(std::ofstream& os, const std::vector<LayerParams>& set) {
  for (const auto& l : set) {
    write_blob(os, l.w);
    Matrix b = l.b;
    write_blob(os, b);
  }
}

void read_set(std::ifstream& is, std::vector<LayerParams>& set) {
  for (auto& l : set) {
    read_blob(is, l.w);
    Matrix b(l.b.size(), 1);
    read_blob(is, b);
    l.b = b.col(0);
  }
}

}  // namespace

void save_params(const ParamSet& params, const MlpSpec& spec,
                 const std::string& name, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream mf(dir / (name + ".manifest"));
    if (!mf) throw std::runtime_error("cannot write manifest for " + name);
    mf << "darl-net 1\n";
    mf << "name " << name << '\n';
    mf << "widths";
    for (int w : spec.widths) mf << ' ' << w;
    mf << '\n';
    mf << "hidden " << (spec.hidden == Activation::Relu ? "relu" : "tanh")
       << '\n';
    mf << "output " << (spec.output == Output::Softmax ? "softmax" : "linear")
       << '\n';
    mf << "step_count " << params.step_count << '\n';
  }
  std::ofstream bf(dir / (name + ".bin"), std::ios::binary);
  if (!bf) throw std::runtime_error("cannot write blob for " + name);
  write_set(bf, params.layers);
  write_set(bf, params.adam_m);
  write_set(bf, params.adam_v);
}

std::pair<ParamSet, MlpSpec> load_params(const std::string& name,
                                         const std::filesystem::path& dir) {
  std::ifstream mf(dir / (name + ".manifest"));
  if (!mf) throw std::runtime_error("missing manifest for " + name);
  std::string magic;
  int version = 0;
  mf >> magic >> version;
  if (magic != "darl-net" || version != 1)
    throw std::runtime_error("bad manifest magic for " + name);
  MlpSpec spec;
  long step_count = 0;
  std::string key;
  while (mf >> key) {
    if (key == "name") {
      std::string n;
      mf >> n;
    } else if (key == "widths") {
      std::string rest;
      std::getline(mf, rest);
      std::istringstream ws(rest);
      int w;
      while (ws >> w) spec.widths.push_back(w);
    } else if (key == "hidden") {
      std::string v;
      mf >> v;
      spec.hidden = (v == "relu") ? Activation::Relu : Activation::Tanh;
    } else if (key == "output") {
      std::string v;
      mf >> v;
      spec.output = (v == "softmax") ? Output::Softmax : Output::Linear;
    } else if (key == "step_count") {
      mf >> step_count;
    } else {
      throw std::runtime_error("unknown manifest key '" + key + "' in " +
                               name);
    }
  }
  check_spec(spec);

  ParamSet p;
  std::size_t doubles = 0;
  for (std::size_t k = 0; k + 1 < spec.widths.size(); ++k) {
    const int in = spec.widths[k];
    const int out = spec.widths[k + 1];
    p.layers.push_back({Matrix::Zero(out, in), Vector::Zero(out)});
    p.adam_m.push_back({Matrix::Zero(out, in), Vector::Zero(out)});
    p.adam_v.push_back({Matrix::Zero(out, in), Vector::Zero(out)});
    doubles += static_cast<std::size_t>(out) * in + out;
  }
  doubles *= 3;
  p.step_count = step_count;

  const auto blob_path = dir / (name + ".bin");
  std::error_code ec;
  const auto actual = std::filesystem::file_size(blob_path, ec);
  if (ec || actual != doubles * sizeof(double))
    throw std::runtime_error("checkpoint blob for " + name + " has " +
                             std::to_string(ec ? 0 : actual) +
                             " bytes, expected " +
                             std::to_string(doubles * sizeof(double)));
  std::ifstream bf(blob_path, std::ios::binary);
  read_set(bf, p.layers);
  read_set(bf, p.adam_m);
  read_set(bf, p.adam_v);
  if (!bf) throw std::runtime_error("short read on blob for " + name);
  return {std::move(p), std::move(spec)};
}

}  // namespace darl::nn
