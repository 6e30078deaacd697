#include "yoho/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "yoho/config.hpp"
#include "yoho/hash.hpp"

namespace yoho::train {

namespace fs = std::filesystem;
using nlohmann::json;

void validate(const TrainConfig& cfg) {
  if (cfg.phase1_steps <= 0 || cfg.phase2_steps <= 0) throw Error(ErrorCode::InvalidConfig, "phase steps must be positive");
  if (cfg.batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
  if (!(cfg.phase1_lr > 0.0) || !(cfg.phase2_lr > 0.0)) throw Error(ErrorCode::InvalidConfig, "learning rates must be positive");
  if (!(cfg.decay_factor > 0.0 && cfg.decay_factor <= 1.0)) throw Error(ErrorCode::InvalidConfig, "decay_factor must lie in (0,1]");
  if (cfg.decay_every < 1) throw Error(ErrorCode::InvalidConfig, "decay_every must be >= 1");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0) || !(cfg.adam_eps > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "invalid optimizer moments");
  }
  if (cfg.checkpoint_every < 1) throw Error(ErrorCode::InvalidConfig, "checkpoint_every must be >= 1");
}

double lr_at(int step, int phase, const TrainConfig& cfg) {
  const int steps = phase == 1 ? cfg.phase1_steps : cfg.phase2_steps;
  if (phase != 1 && phase != 2) throw Error(ErrorCode::InvalidConfig, "phase must be 1 or 2");
  if (step < 0 || step >= steps) throw Error(ErrorCode::InvalidConfig, fmt::format("step {} outside phase {}", step, phase));
  const double base = phase == 1 ? cfg.phase1_lr : cfg.phase2_lr;
  return base * std::pow(cfg.decay_factor, step / cfg.decay_every);
}

Adam::Adam(nn::ParamList params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& p : params) {
    if (!p.trainable()) continue;
    m_.emplace_back(p.value->size(), 0.0f);
    v_.emplace_back(p.value->size(), 0.0f);
    params_.push_back(std::move(p));
  }
}

void Adam::step(double lr, std::optional<nn::ParamGroup> frozen) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  const auto b1 = static_cast<float>(beta1_);
  const auto b2 = static_cast<float>(beta2_);
  const auto step_size = static_cast<float>(lr / c1);
  const auto inv_c2 = static_cast<float>(1.0 / c2);
  const auto eps = static_cast<float>(eps_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    if (frozen && params_[k].group == *frozen) continue;
    float* w = params_[k].value->data();
    const float* g = params_[k].grad->data();
    float* m = m_[k].data();
    float* v = v_[k].data();
    const std::size_t n = m_[k].size();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      w[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
  }
}

std::string TrainHistory::to_csv() const {
  std::ostringstream out;
  out << "step,phase,lr,seg,edge,consist,total,train_dice\n";
  for (const auto& r : rows) {
    out << fmt::format("{},{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},", r.step, r.phase, r.lr, r.seg, r.edge, r.consist, r.total);
    if (r.train_dice) out << fmt::format("{:.9g}", *r.train_dice);
    out << '\n';
  }
  return out.str();
}

std::optional<double> TrainHistory::final_train_dice() const {
  for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
    if (it->train_dice) return it->train_dice;
  }
  return std::nullopt;
}

TrainingData load_training_data(const render::DatasetManifest& manifest) {
  TrainingData d;
  const int k = manifest.K();
  d.images.resize(k);
  d.masks.resize(k);
  d.edges.resize(k);
  for (int i = 0; i < k; ++i) {
    const auto& s = manifest.samples[i];
    d.images[i] = read_color_image(manifest.root / s.image);
    d.masks[i] = read_binary_mask(manifest.root / s.mask);
    d.edges[i] = read_binary_mask(manifest.root / s.edge);
  }
  if (manifest.ignore) d.ignore = read_binary_mask(manifest.root / *manifest.ignore);
  return d;
}

TrainingData from_generated(const render::GeneratedDataset& ds) {
  TrainingData d;
  for (const auto& s : ds.samples) {
    d.images.push_back(s.image);
    d.masks.push_back(s.mask);
    d.edges.push_back(s.edge);
  }
  d.ignore = ds.ignore;
  return d;
}

std::vector<std::uint8_t> effective_ignore(const BinaryMask& ignore, const BinaryMask& mask) {
  std::vector<std::uint8_t> out(mask.total(), 0);
  if (ignore.empty()) return out;
  if (ignore.size() != mask.size()) throw Error(ErrorCode::ShapeError, "ignore raster differs from the sample size");
  for (int y = 0; y < mask.rows; ++y) {
    const auto* ig = ignore.ptr<std::uint8_t>(y);
    const auto* m = mask.ptr<std::uint8_t>(y);
    for (int x = 0; x < mask.cols; ++x) out[static_cast<std::size_t>(y) * mask.cols + x] = (ig[x] && !m[x]) ? 1 : 0;
  }
  return out;
}

namespace {

void copy_mask(const BinaryMask& m, float* dst) {
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) dst[static_cast<std::size_t>(y) * m.cols + x] = row[x] ? 1.0f : 0.0f;
  }
}

struct Batch {
  nn::Tensor x, s, e;
  std::vector<std::uint8_t> ignore;
};

Batch make_batch(const TrainingData& data, std::span<const int> idx) {
  Batch b;
  std::vector<Image> images;
  for (int i : idx) images.push_back(data.images[i]);
  b.x = nn::make_input_batch(images);
  const int n = static_cast<int>(idx.size());
  const int h = b.x.height();
  const int w = b.x.width();
  b.s = nn::Tensor(1, n, h, w);
  b.e = nn::Tensor(1, n, h, w);
  b.ignore.reserve(static_cast<std::size_t>(n) * h * w);
  for (int k = 0; k < n; ++k) {
    copy_mask(data.masks[idx[k]], b.s.image(0, k));
    copy_mask(data.edges[idx[k]], b.e.image(0, k));
    const auto ig = effective_ignore(data.ignore, data.masks[idx[k]]);
    b.ignore.insert(b.ignore.end(), ig.begin(), ig.end());
  }
  return b;
}

/// Shuffled cycling over [0, K): a fresh permutation every pass.
class BatchOrder {
 public:
  BatchOrder(int k, std::uint64_t seed) : rng_(seed), order_(k), pos_(order_.size()) {}

  std::vector<int> next(int batch) {
    std::vector<int> out;
    while (static_cast<int>(out.size()) < batch) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }

  std::mt19937_64 rng_;
  std::vector<int> order_;
  std::size_t pos_;
};

}  // namespace

double train_set_dice(nn::EUNet& net, const TrainingData& data, int batch_size) {
  if (data.K() == 0) throw Error(ErrorCode::ShapeError, "empty training set");
  double sum = 0.0;
  for (int start = 0; start < data.K(); start += batch_size) {
    std::vector<int> idx;
    for (int i = start; i < std::min(data.K(), start + batch_size); ++i) idx.push_back(i);
    const Batch b = make_batch(data, idx);
    const nn::ModelOutputs out = net.forward(b.x, false);
    const std::size_t plane = b.s.image_plane();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      std::size_t inter = 0, pred = 0, gt = 0;
      const float* p = out.s_hat.image(0, static_cast<int>(k));
      const float* g = b.s.image(0, static_cast<int>(k));
      const std::uint8_t* ig = b.ignore.data() + k * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (ig[i]) continue;
        const bool pp = p[i] >= 0.5f;
        const bool gg = g[i] > 0.5f;
        inter += pp && gg;
        pred += pp;
        gt += gg;
      }
      sum += pred + gt == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(pred + gt);
    }
  }
  return sum / data.K();
}

TrainResult train(const TrainingData& data, const nn::NetworkConfig& net_cfg, const loss::LossWeights& w,
                  const TrainConfig& cfg, const ProgressFn& progress) {
  validate(cfg);
  loss::validate(w);
  nn::validate(net_cfg);
  if (data.K() < cfg.batch_size) {
    throw Error(ErrorCode::InvalidConfig, fmt::format("K={} is smaller than batch_size={}", data.K(), cfg.batch_size));
  }

  TrainResult result{nn::EUNet(net_cfg), {}, {}, {}};
  nn::EUNet& net = result.net;
  nn::Rng init_rng(split_seed(cfg.rng_seed, 1));
  net.init(init_rng);
  BatchOrder order(data.K(), split_seed(cfg.rng_seed, 2));
  result.encoder_hash_start = nn::parameter_hash(net, nn::ParamGroup::Encoder);

  const int total = cfg.total_steps();
  int global = 0;
  for (int phase = 1; phase <= 2; ++phase) {
    const bool frozen = phase == 1;
    net.set_encoder_frozen(frozen);
    Adam adam(net.params(), cfg.beta1, cfg.beta2, cfg.adam_eps);
    const int steps = phase == 1 ? cfg.phase1_steps : cfg.phase2_steps;
    for (int step = 0; step < steps; ++step, ++global) {
      const Batch b = make_batch(data, order.next(cfg.batch_size));
      net.zero_grad();
      const nn::ModelOutputs out = net.forward(b.x, true);
      nn::OutputGrads grads;
      const loss::LossBreakdown lb = loss::total_loss(out, b.s, b.e, b.ignore, w, &grads);
      if (!std::isfinite(lb.total) || !std::isfinite(lb.seg) || !std::isfinite(lb.edge) || !std::isfinite(lb.consist)) {
        throw Error(ErrorCode::NonFiniteLoss, fmt::format("step {} (phase {}): seg={} edge={} consist={} total={}", global,
                                                          phase, lb.seg, lb.edge, lb.consist, lb.total));
      }
      net.backward(grads);
      const double lr = lr_at(step, phase, cfg);
      adam.step(lr, frozen ? std::optional(nn::ParamGroup::Encoder) : std::nullopt);

      HistoryRow row{global, phase, lr, lb.seg, lb.edge, lb.consist, lb.total, std::nullopt};
      if ((global + 1) % cfg.checkpoint_every == 0 || global + 1 == total) {
        row.train_dice = train_set_dice(net, data, cfg.batch_size);
      }
      result.history.rows.push_back(row);
      if (progress) progress(row, total);
    }
    if (phase == 1) result.encoder_hash_after_phase1 = nn::parameter_hash(net, nn::ParamGroup::Encoder);
  }
  net.set_encoder_frozen(false);
  return result;
}

TrainResult train(const render::DatasetManifest& manifest, const nn::NetworkConfig& net_cfg, const loss::LossWeights& w,
                  const TrainConfig& cfg, const fs::path& checkpoint_path, const ProgressFn& progress) {
  TrainResult result = train(load_training_data(manifest), net_cfg, w, cfg, progress);
  if (!checkpoint_path.empty()) {
    const auto dice = result.history.final_train_dice();
    const json meta{{"dataset_manifest_sha256", manifest.manifest_sha256},
                    {"image_id", manifest.image_id},
                    {"working_size", {manifest.config.out_size.height, manifest.config.out_size.width}},
                    {"steps", cfg.total_steps()},
                    {"final_loss", result.history.rows.back().total},
                    {"final_train_dice", dice ? json(*dice) : json(nullptr)}};
    nn::save_checkpoint(result.net, checkpoint_path, meta.dump());
  }
  return result;
}

}  // namespace yoho::train
