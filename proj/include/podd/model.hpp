#pragma once

// ConvNet classifier used both inside the distillation unroll and for
// downstream evaluation: depth × [conv3x3 → instance norm → ReLU → avgpool2]
// followed by a linear head. Parameters live in one flat vector.

#include <cstdint>
#include <span>
#include <vector>

#include "podd/image.hpp"

namespace podd {

struct ConvNetSpec {
  int depth = 3;
  int width = 128;
  double norm_eps = 1e-5;

  bool operator==(const ConvNetSpec&) const = default;
};

struct InputShape {
  int height = 0;
  int width = 0;
  int channels = 0;
  bool operator==(const InputShape&) const = default;
};

/// Parameter layout of a ConvNet for one input shape and class count.
/// Per block: conv weight [3][3][in][out], conv bias [out], norm scale [out],
/// norm shift [out]. Head: weight [features][n], bias [n].
class ConvNet {
 public:
  struct Block {
    int in_h, in_w, in_c, out_c;
    std::size_t weight, bias, gamma, beta;
  };

  /// Throws ConfigError unless depth ≥ 1, width ≥ 1 and the input side
  /// lengths are divisible by 2^depth.
  ConvNet(ConvNetSpec spec, InputShape input, int n_classes);

  const ConvNetSpec& spec() const { return spec_; }
  const InputShape& input() const { return input_; }
  int n_classes() const { return n_classes_; }
  std::size_t param_count() const { return param_count_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  std::size_t head_weight() const { return head_weight_; }
  std::size_t head_bias() const { return head_bias_; }
  int feature_dim() const { return feature_dim_; }
  std::size_t input_size() const { return static_cast<std::size_t>(input_.height) * input_.width * input_.channels; }

 private:
  ConvNetSpec spec_;
  InputShape input_;
  int n_classes_;
  std::vector<Block> blocks_;
  std::size_t head_weight_ = 0;
  std::size_t head_bias_ = 0;
  int feature_dim_ = 0;
  std::size_t param_count_ = 0;
};

/// Closed-form parameter count, independent of ConvNet's layout code.
std::size_t convnet_param_count(ConvNetSpec spec, InputShape input, int n_classes);

struct ModelState {
  ConvNet net;
  std::vector<double> params;
  std::uint64_t seed = 0;
};

/// Conv and head weights/biases ~ U(−1/√fan_in, 1/√fan_in); norm scale 1,
/// shift 0. Deterministic per seed.
ModelState init_model(ConvNetSpec spec, InputShape input, int n_classes, std::uint64_t seed);

/// Logits, batch × n row-major.
std::vector<double> forward(const ModelState& model, const ImageBatch& images);
std::vector<double> forward(const ConvNet& net, std::span<const double> params, std::span<const double> images,
                            int batch);

/// −Σ_k y_k log softmax(logits)_k for one sample.
double soft_cross_entropy(std::span<const double> logits, std::span<const double> label);

/// Which input gradients to compute besides the parameter gradient.
struct GradRequest {
  bool images = false;
  bool labels = false;
};

struct LossGrad {
  double loss = 0.0;
  std::vector<double> params;
  std::vector<double> images;  // empty unless requested
  std::vector<double> labels;  // empty unless requested
};

/// Mean soft-label cross-entropy over the batch and its gradients.
LossGrad loss_and_gradient(const ConvNet& net, std::span<const double> params, std::span<const double> images,
                           std::span<const double> labels, int batch, GradRequest request = {});

/// Hessian-vector products of the mean inner loss L(θ, X, Y) along a
/// parameter direction a: ∇_θ(aᵀ∇_θL), ∇_X(aᵀ∇_θL), ∇_Y(aᵀ∇_θL).
struct InnerHvp {
  double loss = 0.0;
  std::vector<double> params;
  std::vector<double> images;
  std::vector<double> labels;
};
InnerHvp inner_loss_hvp(const ConvNet& net, std::span<const double> params, std::span<const double> direction,
                        std::span<const double> images, std::span<const double> labels, int batch);

/// One plain gradient-descent step θ ← θ − lr ∇θ L. Throws RuntimeFailure on
/// a non-finite loss.
ModelState sgd_step(const ModelState& model, const ImageBatch& batch, std::span<const double> labels, double lr);
double sgd_step_in_place(const ConvNet& net, std::vector<double>& params, std::span<const double> images,
                         std::span<const double> labels, int batch, double lr);

/// Top-1 accuracy against hard labels.
double accuracy(const ConvNet& net, std::span<const double> params, const ImageBatch& images,
                std::span<const int> labels);

/// One-hot rows for hard class labels.
std::vector<double> one_hot(std::span<const int> labels, int n);

}  // namespace podd
