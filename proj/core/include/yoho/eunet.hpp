#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "yoho/image.hpp"
#include "yoho/layers.hpp"

namespace yoho::nn {

enum class EncoderKind {
  /// 34-layer residual topology: blocks {3,4,6,3}, widths base*{1,1,2,4,8}.
  ResNet34,
  /// One residual block per stage, widths base*{1,1,2,4,4}; for fast tests.
  Small,
};

struct NetworkConfig {
  int depth = 5;
  EncoderKind encoder = EncoderKind::ResNet34;
  int in_channels = 3;
  int base_width = 64;
  bool use_pretrained_encoder = false;
  /// Checkpoint holding "encoder.*" arrays; used when use_pretrained_encoder.
  std::string pretrained_path;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

void validate(const NetworkConfig& cfg);

/// Network outputs, all (channels, N, H, W) at the input resolution.
struct ModelOutputs {
  Tensor s_hat;        // 1 channel, segmentation in [0,1]
  Tensor e_hat;        // 1 channel, fused edge map
  Tensor e_hat_prime;  // 1 channel, boundary of s_hat
  Tensor stage_edges;  // 5 channels, per-stage edge maps (diagnostic)
};

/// Loss gradients with respect to the three principal outputs.
struct OutputGrads {
  Tensor d_s_hat;
  Tensor d_e_hat;
  Tensor d_e_hat_prime;
};

/// Fixed morphological gradient: max3x3(s) - min3x3(s), window clipped at the
/// frame border. Zero on constant regions; has no parameters.
Tensor boundary_enhance(const Tensor& s_hat);
/// Routes each output gradient to the window's arg-max (+) and arg-min (-).
Tensor boundary_enhance_backward(const Tensor& dy, const Tensor& s_hat);

/// Attention fusion of the five stage edge maps: a 3x3 convolution stack
/// yields per-map weights, softmax-normalised across maps at every pixel; the
/// weighted sum f is mapped to sigmoid(gain * f + offset).
class AttentionFusion {
 public:
  static constexpr int kMaps = 5;

  AttentionFusion();
  void init(Rng& rng);

  Tensor forward(const Tensor& stage_edges);
  /// Returns dL/d(stage_edges).
  Tensor backward(const Tensor& d_out);

  /// Softmax weights from the last forward, (5, N, H, W).
  const Tensor& attention() const { return weights_; }

  void register_params(const std::string& prefix, ParamList& out);

  Conv2d conv1;
  Conv2d conv2;
  Tensor gain, gain_grad, offset, offset_grad;

 private:
  Tensor input_, hidden_, weights_, fused_, output_;
};

class EUNet {
 public:
  explicit EUNet(NetworkConfig cfg);
  ~EUNet();
  EUNet(EUNet&&) noexcept;
  EUNet& operator=(EUNet&&) noexcept;

  /// Random initialisation (He-normal convolutions) from `rng`; when the
  /// config asks for a pretrained encoder its arrays are then loaded.
  void init(Rng& rng);

  /// Input is (3, N, H, W) with H and W divisible by 32.
  ModelOutputs forward(const Tensor& x, bool training);

  /// Back-propagates the most recent training forward. Encoder gradients are
  /// skipped while the encoder is frozen.
  void backward(const OutputGrads& grads);

  void zero_grad();
  void set_encoder_frozen(bool frozen) { encoder_frozen_ = frozen; }
  bool encoder_frozen() const { return encoder_frozen_; }

  /// Every named array: trainable parameters and batch-norm buffers.
  ParamList params();
  std::size_t parameter_count();

  const NetworkConfig& config() const { return cfg_; }

 private:
  struct Impl;
  NetworkConfig cfg_;
  bool encoder_frozen_ = false;
  std::unique_ptr<Impl> impl_;
};

/// SHA-256 over trainable parameters (names, shapes, values), optionally
/// restricted to one partition.
std::string parameter_hash(EUNet& net, std::optional<ParamGroup> group = std::nullopt);

/// Channel-mean/std normalisation used by the encoder; images are BGR 8-bit.
Tensor make_input_batch(std::span<const Image> images);

inline constexpr int kCheckpointVersion = 1;

/// Single-file archive: magic, version, JSON header (config echo, array
/// table, free-form metadata), then raw little-endian float32 arrays.
void save_checkpoint(EUNet& net, const std::filesystem::path& path, const std::string& metadata_json = "{}");
EUNet load_checkpoint(const std::filesystem::path& path);
/// Loads every array of `path` whose name matches `prefix` into `net`.
/// Throws CheckpointMismatch on a missing name or shape disagreement.
void load_arrays(EUNet& net, const std::filesystem::path& path, const std::string& prefix = "");
std::string checkpoint_metadata(const std::filesystem::path& path);

}  // namespace yoho::nn
