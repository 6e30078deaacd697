#pragma once

#include <random>
#include <string>
#include <vector>

#include "yoho/tensor.hpp"

namespace yoho::nn {

using Rng = std::mt19937_64;

/// Parameter partitions; the encoder partition can be frozen on its own.
enum class ParamGroup { Encoder, Decoder, Edge, Fusion };

/// Non-owning view of one named array inside a network. Buffers (batch-norm
/// running statistics) are saved in checkpoints but never optimized.
struct ParamRef {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;  // null for buffers
  ParamGroup group = ParamGroup::Decoder;

  bool trainable() const { return grad != nullptr; }
};

using ParamList = std::vector<ParamRef>;

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias);

  /// He-normal weights (fan-in, ReLU gain); zero bias.
  void init(Rng& rng, float gain = 2.0f);

  Tensor forward(const Tensor& x);
  /// Accumulates weight/bias gradients; returns dL/dx when `need_input_grad`.
  Tensor backward(const Tensor& dy, bool need_input_grad = true);

  void register_params(const std::string& prefix, ParamGroup group, ParamList& out);

  int in_channels() const { return cin_; }
  int out_channels() const { return cout_; }

  Tensor weight;  // [cout][cin*k*k] stored as (cout, 1, 1, cin*k*k)
  Tensor weight_grad;
  Tensor bias;
  Tensor bias_grad;

 private:
  int cin_ = 0;
  int cout_ = 0;
  int k_ = 1;
  int stride_ = 1;
  int pad_ = 0;
  bool has_bias_ = false;
  Tensor input_;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels, float momentum = 0.1f, float eps = 1e-5f);

  Tensor forward(const Tensor& x, bool training);
  Tensor backward(const Tensor& dy);

  void register_params(const std::string& prefix, ParamGroup group, ParamList& out);

  Tensor gamma, gamma_grad, beta, beta_grad;
  Tensor running_mean, running_var;

 private:
  int c_ = 0;
  float momentum_ = 0.1f;
  float eps_ = 1e-5f;
  bool last_training_ = true;
  Tensor xhat_;
  std::vector<float> inv_std_;
};

/// 3x3, stride 2, padding 1 max pooling (residual-network stem).
class MaxPool3x3s2 {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);

 private:
  int in_h_ = 0, in_w_ = 0;
  std::vector<int> argmax_;
};

// Stateless operations. Backward variants take what the forward produced.
void relu_inplace(Tensor& x);
/// Zeroes dy wherever the forward output was not positive.
void relu_backward_inplace(Tensor& dy, const Tensor& y);

Tensor sigmoid(const Tensor& logits);
/// dL/dz from dL/dy, evaluated from the logits so saturated outputs keep a gradient.
Tensor sigmoid_backward(const Tensor& dy, const Tensor& logits);

Tensor upsample_nearest2x(const Tensor& x);
Tensor upsample_nearest2x_backward(const Tensor& dy);

/// Bilinear resampling with half-pixel centers (no corner alignment).
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);
Tensor resize_bilinear_backward(const Tensor& dy, int in_h, int in_w);

}  // namespace yoho::nn
