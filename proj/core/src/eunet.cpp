#include "yoho/eunet.hpp"

#include <cmath>
#include <limits>

#include "yoho/error.hpp"

namespace yoho::nn {

void validate(const NetworkConfig& cfg) {
  if (cfg.depth != 5) throw Error(ErrorCode::InvalidConfig, "network depth is fixed at 5");
  if (cfg.base_width < 8) throw Error(ErrorCode::InvalidConfig, "base_width must be >= 8");
  if (cfg.in_channels != 3) throw Error(ErrorCode::InvalidConfig, "in_channels must be 3");
}

// ---------------------------------------------------------------------------
// Boundary-enhance block

namespace {

template <class Better>
void pool3x3_arg(const Tensor& s, std::vector<int>& arg, Better better) {
  const int h = s.height();
  const int w = s.width();
  arg.resize(s.size());
  std::size_t o = 0;
  for (int c = 0; c < s.channels(); ++c) {
    for (int n = 0; n < s.batch(); ++n) {
      const float* src = s.image(c, n);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x, ++o) {
          int best = y * w + x;
          for (int yy = std::max(0, y - 1); yy <= std::min(h - 1, y + 1); ++yy) {
            for (int xx = std::max(0, x - 1); xx <= std::min(w - 1, x + 1); ++xx) {
              if (better(src[yy * w + xx], src[best])) best = yy * w + xx;
            }
          }
          arg[o] = best;
        }
      }
    }
  }
}

}  // namespace

Tensor boundary_enhance(const Tensor& s_hat) {
  std::vector<int> amax;
  std::vector<int> amin;
  pool3x3_arg(s_hat, amax, std::greater<float>());
  pool3x3_arg(s_hat, amin, std::less<float>());
  Tensor out = Tensor::like(s_hat);
  const std::size_t per = s_hat.image_plane();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float* img = s_hat.data() + (i / per) * per;
    out.data()[i] = img[amax[i]] - img[amin[i]];
  }
  return out;
}

Tensor boundary_enhance_backward(const Tensor& dy, const Tensor& s_hat) {
  std::vector<int> amax;
  std::vector<int> amin;
  pool3x3_arg(s_hat, amax, std::greater<float>());
  pool3x3_arg(s_hat, amin, std::less<float>());
  Tensor ds = Tensor::like(s_hat);
  const std::size_t per = s_hat.image_plane();
  for (std::size_t i = 0; i < dy.size(); ++i) {
    float* img = ds.data() + (i / per) * per;
    img[amax[i]] += dy.data()[i];
    img[amin[i]] -= dy.data()[i];
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Attention fusion

namespace {
constexpr int kFusionHidden = 8;
constexpr float kFusionGainInit = 12.0f;
constexpr float kFusionOffsetInit = -6.0f;
}  // namespace

AttentionFusion::AttentionFusion()
    : conv1(kMaps, kFusionHidden, 3, 1, 1, true),
      conv2(kFusionHidden, kMaps, 3, 1, 1, true),
      gain(1, 1, 1, 1, kFusionGainInit),
      gain_grad(1, 1, 1, 1),
      offset(1, 1, 1, 1, kFusionOffsetInit),
      offset_grad(1, 1, 1, 1) {}

void AttentionFusion::init(Rng& rng) {
  conv1.init(rng);
  // Zero logits start the fusion as a plain average of the five maps.
  conv2.weight.fill(0.0f);
  conv2.bias.fill(0.0f);
  gain.fill(kFusionGainInit);
  offset.fill(kFusionOffsetInit);
}

Tensor AttentionFusion::forward(const Tensor& stage_edges) {
  if (stage_edges.channels() != kMaps) throw Error(ErrorCode::ShapeError, "attention fusion expects 5 edge maps");
  input_ = stage_edges;
  hidden_ = conv1.forward(stage_edges);
  relu_inplace(hidden_);
  Tensor logits = conv2.forward(hidden_);

  weights_ = Tensor::like(logits);
  fused_ = Tensor(1, stage_edges.batch(), stage_edges.height(), stage_edges.width());
  const std::size_t plane = logits.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    float mx = -std::numeric_limits<float>::infinity();
    for (int c = 0; c < kMaps; ++c) mx = std::max(mx, logits.channel(c)[i]);
    float denom = 0.0f;
    for (int c = 0; c < kMaps; ++c) {
      const float e = std::exp(logits.channel(c)[i] - mx);
      weights_.channel(c)[i] = e;
      denom += e;
    }
    float f = 0.0f;
    for (int c = 0; c < kMaps; ++c) {
      weights_.channel(c)[i] /= denom;
      f += weights_.channel(c)[i] * stage_edges.channel(c)[i];
    }
    fused_.data()[i] = f;
  }

  Tensor z = Tensor::like(fused_);
  for (std::size_t i = 0; i < z.size(); ++i) z.data()[i] = gain.data()[0] * fused_.data()[i] + offset.data()[0];
  output_ = z;
  return sigmoid(z);
}

Tensor AttentionFusion::backward(const Tensor& d_out) {
  const Tensor dz = sigmoid_backward(d_out, output_);
  const float g = gain.data()[0];
  double dgain = 0.0;
  double doffset = 0.0;
  Tensor d_in = Tensor::like(input_);
  Tensor d_logits = Tensor::like(weights_);
  const std::size_t plane = fused_.size();
  for (std::size_t i = 0; i < plane; ++i) {
    const float dzi = dz.data()[i];
    dgain += static_cast<double>(dzi) * fused_.data()[i];
    doffset += dzi;
    const float df = dzi * g;
    // d weights_c = df * m_c; softmax Jacobian: a_c (dw_c - sum_j a_j dw_j).
    float dot = 0.0f;
    for (int c = 0; c < kMaps; ++c) dot += weights_.channel(c)[i] * df * input_.channel(c)[i];
    for (int c = 0; c < kMaps; ++c) {
      const float a = weights_.channel(c)[i];
      d_in.channel(c)[i] = df * a;
      d_logits.channel(c)[i] = a * (df * input_.channel(c)[i] - dot);
    }
  }
  gain_grad.data()[0] += static_cast<float>(dgain);
  offset_grad.data()[0] += static_cast<float>(doffset);

  Tensor d_hidden = conv2.backward(d_logits);
  relu_backward_inplace(d_hidden, hidden_);
  d_in += conv1.backward(d_hidden);
  return d_in;
}

void AttentionFusion::register_params(const std::string& prefix, ParamList& out) {
  conv1.register_params(prefix + ".conv1", ParamGroup::Fusion, out);
  conv2.register_params(prefix + ".conv2", ParamGroup::Fusion, out);
  out.push_back({prefix + ".gain", &gain, &gain_grad, ParamGroup::Fusion});
  out.push_back({prefix + ".offset", &offset, &offset_grad, ParamGroup::Fusion});
}

// ---------------------------------------------------------------------------
// Residual encoder

namespace {

struct ConvBn {
  Conv2d conv;
  BatchNorm2d bn;

  ConvBn() = default;
  ConvBn(int cin, int cout, int k, int stride, int pad) : conv(cin, cout, k, stride, pad, false), bn(cout) {}

  Tensor forward(const Tensor& x, bool training) { return bn.forward(conv.forward(x), training); }
  Tensor backward(const Tensor& dy, bool need_input_grad) { return conv.backward(bn.backward(dy), need_input_grad); }

  void register_params(const std::string& conv_name, const std::string& bn_name, ParamGroup g, ParamList& out) {
    conv.register_params(conv_name, g, out);
    bn.register_params(bn_name, g, out);
  }
};

struct BasicBlock {
  ConvBn a, b;
  std::optional<ConvBn> down;
  Tensor a_out, out;

  BasicBlock(int cin, int cout, int stride) : a(cin, cout, 3, stride, 1), b(cout, cout, 3, 1, 1) {
    if (stride != 1 || cin != cout) down.emplace(cin, cout, 1, stride, 0);
  }

  void init(Rng& rng) {
    a.conv.init(rng);
    b.conv.init(rng);
    if (down) down->conv.init(rng, 1.0f);
  }

  Tensor forward(const Tensor& x, bool training) {
    a_out = a.forward(x, training);
    relu_inplace(a_out);
    out = b.forward(a_out, training);
    out += down ? down->forward(x, training) : x;
    relu_inplace(out);
    return out;
  }

  Tensor backward(Tensor dy) {
    relu_backward_inplace(dy, out);
    Tensor da = b.backward(dy, true);
    relu_backward_inplace(da, a_out);
    Tensor dx = a.backward(da, true);
    dx += down ? down->backward(dy, true) : dy;
    return dx;
  }

  void register_params(const std::string& prefix, ParamList& out_list) {
    a.register_params(prefix + ".conv1", prefix + ".bn1", ParamGroup::Encoder, out_list);
    b.register_params(prefix + ".conv2", prefix + ".bn2", ParamGroup::Encoder, out_list);
    if (down) down->register_params(prefix + ".downsample.0", prefix + ".downsample.1", ParamGroup::Encoder, out_list);
  }
};

struct Encoder {
  ConvBn stem;
  MaxPool3x3s2 pool;
  std::array<std::vector<BasicBlock>, 4> layers;
  std::array<int, 5> widths{};
  Tensor stem_out;

  explicit Encoder(const NetworkConfig& cfg) {
    const int w = cfg.base_width;
    const bool full = cfg.encoder == EncoderKind::ResNet34;
    widths = full ? std::array<int, 5>{w, w, 2 * w, 4 * w, 8 * w} : std::array<int, 5>{w, w, 2 * w, 4 * w, 4 * w};
    const std::array<int, 4> blocks = full ? std::array<int, 4>{3, 4, 6, 3} : std::array<int, 4>{1, 1, 1, 1};
    stem = full ? ConvBn(cfg.in_channels, w, 7, 2, 3) : ConvBn(cfg.in_channels, w, 3, 2, 1);
    int cin = w;
    for (int l = 0; l < 4; ++l) {
      const int cout = widths[static_cast<std::size_t>(l + 1)];
      for (int b = 0; b < blocks[static_cast<std::size_t>(l)]; ++b) {
        layers[static_cast<std::size_t>(l)].emplace_back(cin, cout, (b == 0 && l > 0) ? 2 : 1);
        cin = cout;
      }
    }
  }

  void init(Rng& rng) {
    stem.conv.init(rng);
    for (auto& layer : layers) {
      for (auto& block : layer) block.init(rng);
    }
  }

  std::array<Tensor, 5> forward(const Tensor& x, bool training) {
    std::array<Tensor, 5> feats;
    stem_out = stem.forward(x, training);
    relu_inplace(stem_out);
    feats[0] = stem_out;
    Tensor h = pool.forward(stem_out);
    for (std::size_t l = 0; l < 4; ++l) {
      for (auto& block : layers[l]) h = block.forward(h, training);
      feats[l + 1] = h;
    }
    return feats;
  }

  void backward(std::array<Tensor, 5>& dfeats) {
    Tensor g = std::move(dfeats[4]);
    for (int l = 3; l >= 0; --l) {
      auto& layer = layers[static_cast<std::size_t>(l)];
      for (auto it = layer.rbegin(); it != layer.rend(); ++it) g = it->backward(std::move(g));
      if (l > 0) g += dfeats[static_cast<std::size_t>(l)];
    }
    g = pool.backward(g);
    g += dfeats[0];
    relu_backward_inplace(g, stem_out);
    stem.backward(g, false);
  }

  void register_params(ParamList& out) {
    stem.register_params("encoder.conv1", "encoder.bn1", ParamGroup::Encoder, out);
    for (std::size_t l = 0; l < 4; ++l) {
      for (std::size_t b = 0; b < layers[l].size(); ++b) {
        layers[l][b].register_params("encoder.layer" + std::to_string(l + 1) + "." + std::to_string(b), out);
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Decoder

struct DecoderBlock {
  ConvBn a, b;
  int up_channels = 0;
  int skip_channels = 0;
  Tensor a_out, out;

  DecoderBlock(int in, int skip, int out_c) : a(in + skip, out_c, 3, 1, 1), b(out_c, out_c, 3, 1, 1), up_channels(in), skip_channels(skip) {}

  void init(Rng& rng) {
    a.conv.init(rng);
    b.conv.init(rng);
  }

  Tensor forward(const Tensor& x, const Tensor* skip, bool training) {
    Tensor up = upsample_nearest2x(x);
    Tensor in = skip ? concat_channels({&up, skip}) : std::move(up);
    a_out = a.forward(in, training);
    relu_inplace(a_out);
    out = b.forward(a_out, training);
    relu_inplace(out);
    return out;
  }

  /// Returns (d input-before-upsampling, d skip).
  std::pair<Tensor, Tensor> backward(Tensor dy) {
    relu_backward_inplace(dy, out);
    Tensor da = b.backward(dy, true);
    relu_backward_inplace(da, a_out);
    Tensor din = a.backward(da, true);
    Tensor dskip;
    if (skip_channels > 0) {
      dskip = slice_channels(din, up_channels, skip_channels);
      din = slice_channels(din, 0, up_channels);
    }
    return {upsample_nearest2x_backward(din), std::move(dskip)};
  }

  void register_params(const std::string& prefix, ParamList& out_list) {
    a.register_params(prefix + ".conv1", prefix + ".bn1", ParamGroup::Decoder, out_list);
    b.register_params(prefix + ".conv2", prefix + ".bn2", ParamGroup::Decoder, out_list);
  }
};

struct EdBlock {
  Conv2d proj;
  int in_h = 0, in_w = 0;
  Tensor logits;

  explicit EdBlock(int channels) : proj(channels, 1, 1, 1, 0, true) {}

  Tensor forward(const Tensor& feat, int out_h, int out_w) {
    in_h = feat.height();
    in_w = feat.width();
    logits = resize_bilinear(proj.forward(feat), out_h, out_w);
    return sigmoid(logits);
  }

  Tensor backward(const Tensor& d_map, bool need_input_grad) {
    const Tensor dz = sigmoid_backward(d_map, logits);
    return proj.backward(resize_bilinear_backward(dz, in_h, in_w), need_input_grad);
  }
};

}  // namespace

struct EUNet::Impl {
  Encoder encoder;
  std::vector<DecoderBlock> decoder;
  DecoderBlock head;
  Conv2d head_out;
  std::vector<EdBlock> ed;
  AttentionFusion fusion;

  Tensor s_logits, s_hat;
  int height = 0, width = 0;

  static std::array<int, 5> decoder_widths(const NetworkConfig& cfg) {
    const int w = cfg.base_width;
    if (cfg.encoder == EncoderKind::ResNet34) return {4 * w, 2 * w, w, w / 2, w / 4};
    return {4 * w, 2 * w, 2 * w, w, w};
  }

  explicit Impl(const NetworkConfig& cfg)
      : encoder(cfg),
        head(decoder_widths(cfg)[3], 0, decoder_widths(cfg)[4]),
        head_out(decoder_widths(cfg)[4], 1, 3, 1, 1, true) {
    const auto dw = decoder_widths(cfg);
    const auto& ew = encoder.widths;
    int in = ew[4];
    for (int i = 0; i < 4; ++i) {
      decoder.emplace_back(in, ew[static_cast<std::size_t>(3 - i)], dw[static_cast<std::size_t>(i)]);
      in = dw[static_cast<std::size_t>(i)];
    }
    for (int width : ew) ed.emplace_back(width);
  }
};

EUNet::EUNet(NetworkConfig cfg) : cfg_(std::move(cfg)) {
  validate(cfg_);
  impl_ = std::make_unique<Impl>(cfg_);
}

EUNet::~EUNet() = default;
EUNet::EUNet(EUNet&&) noexcept = default;
EUNet& EUNet::operator=(EUNet&&) noexcept = default;

void EUNet::init(Rng& rng) {
  impl_ = std::make_unique<Impl>(cfg_);
  Impl& m = *impl_;
  m.encoder.init(rng);
  for (auto& block : m.decoder) block.init(rng);
  m.head.init(rng);
  m.head_out.init(rng, 1.0f);
  for (auto& e : m.ed) e.proj.init(rng, 1.0f);
  m.fusion.init(rng);
  if (cfg_.use_pretrained_encoder && !cfg_.pretrained_path.empty()) load_arrays(*this, cfg_.pretrained_path, "encoder.");
}

ModelOutputs EUNet::forward(const Tensor& x, bool training) {
  if (x.channels() != cfg_.in_channels) throw Error(ErrorCode::ShapeError, "input must have 3 channels");
  if (x.height() % 32 != 0 || x.width() % 32 != 0 || x.height() == 0 || x.width() == 0) {
    throw Error(ErrorCode::ShapeError, "input size " + std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                                           " is not divisible by 32");
  }
  Impl& m = *impl_;
  m.height = x.height();
  m.width = x.width();
  const auto feats = m.encoder.forward(x, training);

  Tensor h = feats[4];
  for (std::size_t i = 0; i < 4; ++i) h = m.decoder[i].forward(h, &feats[3 - i], training);
  h = m.head.forward(h, nullptr, training);
  m.s_logits = m.head_out.forward(h);
  m.s_hat = sigmoid(m.s_logits);

  ModelOutputs out;
  out.stage_edges = Tensor(5, x.batch(), x.height(), x.width());
  for (std::size_t i = 0; i < 5; ++i) {
    const Tensor map = m.ed[i].forward(feats[i], x.height(), x.width());
    std::copy(map.data(), map.data() + map.size(), out.stage_edges.channel(static_cast<int>(i)));
  }
  out.e_hat = m.fusion.forward(out.stage_edges);
  out.e_hat_prime = boundary_enhance(m.s_hat);
  out.s_hat = m.s_hat;
  return out;
}

void EUNet::backward(const OutputGrads& grads) {
  Impl& m = *impl_;
  const bool need_encoder = !encoder_frozen_;

  // Segmentation branch: direct gradient plus the boundary-enhance path.
  Tensor ds = grads.d_s_hat;
  if (!grads.d_e_hat_prime.empty()) ds += boundary_enhance_backward(grads.d_e_hat_prime, m.s_hat);
  Tensor g = sigmoid_backward(ds, m.s_logits);
  g = m.head_out.backward(g, true);
  g = m.head.backward(std::move(g)).first;

  std::array<Tensor, 5> dfeats;
  for (int i = 3; i >= 0; --i) {
    auto [dx, dskip] = m.decoder[static_cast<std::size_t>(i)].backward(std::move(g));
    g = std::move(dx);
    dfeats[static_cast<std::size_t>(3 - i)] = std::move(dskip);
  }
  dfeats[4] = std::move(g);

  // Edge branch.
  if (!grads.d_e_hat.empty()) {
    const Tensor d_stage = m.fusion.backward(grads.d_e_hat);
    for (std::size_t i = 0; i < 5; ++i) {
      const Tensor d_map = slice_channels(d_stage, static_cast<int>(i), 1);
      Tensor d_feat = m.ed[i].backward(d_map, need_encoder);
      if (need_encoder) dfeats[i] += d_feat;
    }
  }

  if (need_encoder) m.encoder.backward(dfeats);
}

void EUNet::zero_grad() {
  for (auto& p : params()) {
    if (p.grad) p.grad->fill(0.0f);
  }
}

ParamList EUNet::params() {
  Impl& m = *impl_;
  ParamList out;
  m.encoder.register_params(out);
  for (std::size_t i = 0; i < m.decoder.size(); ++i) m.decoder[i].register_params("decoder.block" + std::to_string(i), out);
  m.head.register_params("decoder.head", out);
  m.head_out.register_params("decoder.head_out", ParamGroup::Decoder, out);
  for (std::size_t i = 0; i < m.ed.size(); ++i) m.ed[i].proj.register_params("edge.ed" + std::to_string(i + 1), ParamGroup::Edge, out);
  m.fusion.register_params("fusion", out);
  return out;
}

std::size_t EUNet::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : params()) {
    if (p.trainable()) n += p.value->size();
  }
  return n;
}

Tensor make_input_batch(std::span<const Image> images) {
  if (images.empty()) throw Error(ErrorCode::ShapeError, "empty batch");
  const int h = images[0].rows;
  const int w = images[0].cols;
  // ImageNet statistics in RGB order; OpenCV rasters are BGR.
  constexpr float kMean[3] = {0.485f, 0.456f, 0.406f};
  constexpr float kStd[3] = {0.229f, 0.224f, 0.225f};
  Tensor t(3, static_cast<int>(images.size()), h, w);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = images[n];
    if (img.rows != h || img.cols != w || img.type() != CV_8UC3) throw Error(ErrorCode::ShapeError, "batch images differ in size/type");
    for (int c = 0; c < 3; ++c) {
      float* dst = t.image(c, static_cast<int>(n));
      const int bgr = 2 - c;
      for (int y = 0; y < h; ++y) {
        const auto* row = img.ptr<cv::Vec3b>(y);
        for (int x = 0; x < w; ++x) dst[y * w + x] = (row[x][bgr] / 255.0f - kMean[c]) / kStd[c];
      }
    }
  }
  return t;
}

}  // namespace yoho::nn
