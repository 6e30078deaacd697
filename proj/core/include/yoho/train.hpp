#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "yoho/eunet.hpp"
#include "yoho/losses.hpp"
#include "yoho/render.hpp"

namespace yoho::train {

/// Two-phase schedule: phase 1 trains with the encoder frozen, phase 2 trains
/// everything. Each phase decays its own base rate stepwise.
struct TrainConfig {
  int phase1_steps = 1000;
  int phase2_steps = 1000;
  int batch_size = 32;
  double phase1_lr = 1.0e-3;
  double phase2_lr = 3.0e-4;
  double decay_factor = 0.9;
  int decay_every = 50;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t rng_seed = 20230501;
  /// Train-set Dice is measured every this many steps (and after the last).
  int checkpoint_every = 100;

  int total_steps() const { return phase1_steps + phase2_steps; }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void validate(const TrainConfig& cfg);

/// phase_base_lr * decay_factor^floor(step / decay_every), step counted from
/// the start of `phase` (1 or 2).
double lr_at(int step, int phase, const TrainConfig& cfg);

class Adam {
 public:
  Adam(nn::ParamList params, double beta1, double beta2, double eps);

  /// One update of every trainable parameter whose group is not `frozen`.
  void step(double lr, std::optional<nn::ParamGroup> frozen = std::nullopt);
  int steps_taken() const { return t_; }

 private:
  nn::ParamList params_;
  std::vector<std::vector<float>> m_, v_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
};

struct HistoryRow {
  int step = 0;  // global, 0-based
  int phase = 1;
  double lr = 0.0;
  double seg = 0.0;
  double edge = 0.0;
  double consist = 0.0;
  double total = 0.0;
  std::optional<double> train_dice;
};

struct TrainHistory {
  std::vector<HistoryRow> rows;

  /// Header: step,phase,lr,seg,edge,consist,total,train_dice
  std::string to_csv() const;
  /// Last recorded train-set Dice.
  std::optional<double> final_train_dice() const;
};

/// Decoded training triples plus the shared ignore raster.
struct TrainingData {
  std::vector<Image> images;
  std::vector<BinaryMask> masks;
  std::vector<BinaryMask> edges;
  BinaryMask ignore;  // empty: nothing ignored

  int K() const { return static_cast<int>(images.size()); }
};

TrainingData load_training_data(const render::DatasetManifest& manifest);
TrainingData from_generated(const render::GeneratedDataset& ds);

/// Per-sample loss exclusion: the ignore raster minus the sample's own mask.
std::vector<std::uint8_t> effective_ignore(const BinaryMask& ignore, const BinaryMask& mask);

/// Eval-mode mean Dice of (s_hat >= 0.5) against the sample masks over
/// non-ignored pixels.
double train_set_dice(nn::EUNet& net, const TrainingData& data, int batch_size);

using ProgressFn = std::function<void(const HistoryRow& row, int total_steps)>;

struct TrainResult {
  nn::EUNet net;
  TrainHistory history;
  std::string encoder_hash_start;
  std::string encoder_hash_after_phase1;
};

/// Runs both phases. Throws NonFiniteLoss (naming the step and the loss
/// breakdown) as soon as a loss is not finite.
TrainResult train(const TrainingData& data, const nn::NetworkConfig& net_cfg, const loss::LossWeights& w,
                  const TrainConfig& cfg, const ProgressFn& progress = {});

/// Manifest variant; also persists the final checkpoint when a path is given.
TrainResult train(const render::DatasetManifest& manifest, const nn::NetworkConfig& net_cfg,
                  const loss::LossWeights& w, const TrainConfig& cfg,
                  const std::filesystem::path& checkpoint_path = {}, const ProgressFn& progress = {});

}  // namespace yoho::train
