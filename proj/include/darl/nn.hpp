#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace darl::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { Relu, Tanh };
enum class Output { Linear, Softmax };
enum class LossKind { CrossEntropy, SquaredError };

/// Architecture of a dense MLP. Instances are columns; widths[0] is the
/// input dimension, widths.back() the output dimension.
struct MlpSpec {
  std::vector<int> widths;
  Activation hidden = Activation::Relu;
  Output output = Output::Linear;

  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }
  std::size_t layer_count() const { return widths.size() - 1; }
};

struct LayerParams {
  Matrix w;  // out x in
  Vector b;  // out
};

using GradSet = std::vector<LayerParams>;

/// Weights plus Adam moment state for one network.
struct ParamSet {
  std::vector<LayerParams> layers;
  std::vector<LayerParams> adam_m;
  std::vector<LayerParams> adam_v;
  long step_count = 0;
};

/// Glorot-uniform weights, zero biases, zero Adam moments.
ParamSet init_params(const MlpSpec& spec, std::mt19937_64& rng);

GradSet zero_grads(const MlpSpec& spec);

/// Intermediate activations kept for backprop. inputs[k] is the input to
/// layer k (inputs[0] is the network input), pre[k] its pre-activation.
struct ForwardCache {
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre;
};

Matrix forward(const ParamSet& params, const MlpSpec& spec,
               const Matrix& input, ForwardCache* cache = nullptr);

/// Column-wise numerically stable softmax.
Matrix softmax(const Matrix& logits);
Vector softmax(const Vector& logits);

struct BackpropResult {
  GradSet grads;
  Matrix input_grad;
};

/// Backpropagate `last_pre_grad`, the loss gradient w.r.t. the final layer's
/// pre-activation (for a linear output this equals the gradient w.r.t. the
/// output; for softmax+cross-entropy it is (p - y)/batch).
BackpropResult backward(const ParamSet& params, const MlpSpec& spec,
                        const ForwardCache& cache, const Matrix& last_pre_grad);

struct LossGrad {
  double loss = 0.0;
  GradSet grads;
  Matrix input_grad;
};

/// Loss (mean over the batch) and analytic gradients for all parameters.
/// CrossEntropy requires a Softmax output head and per-column target
/// distributions; SquaredError sums over output rows.
LossGrad loss_and_grad(const ParamSet& params, const MlpSpec& spec,
                       const Matrix& input, const Matrix& targets,
                       LossKind kind);

/// Loss value only, same definition as loss_and_grad.
double loss_value(const ParamSet& params, const MlpSpec& spec,
                  const Matrix& input, const Matrix& targets, LossKind kind);

/// Bias-corrected Adam update in place; increments step_count.
void adam_step(ParamSet& params, const GradSet& grads, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

/// Central-difference gradients (L(th+h)-L(th-h))/2h per parameter.
/// Test oracle; independent of the backward pass.
GradSet finite_diff_grad(const ParamSet& params, const MlpSpec& spec,
                         const Matrix& input, const Matrix& targets,
                         LossKind kind, double h);

/// Checkpoint: `<name>.manifest` (text: widths, activations, step count,
/// shapes) plus `<name>.bin` (little-endian doubles: per-layer W,b for the
/// parameters, then adam_m, then adam_v). Round-trips bit-exact.
void save_params(const ParamSet& params, const MlpSpec& spec,
                 const std::string& name, const std::filesystem::path& dir);

std::pair<ParamSet, MlpSpec> load_params(const std::string& name,
                                         const std::filesystem::path& dir);

}  // namespace darl::nn
