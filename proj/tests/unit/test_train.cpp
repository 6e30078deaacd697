#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include "phantom.hpp"
#include "yoho/config.hpp"
#include "yoho/error.hpp"
#include "yoho/render.hpp"
#include "yoho/train.hpp"

using namespace yoho;
using namespace yoho::train;
namespace fs = std::filesystem;

namespace {

struct Smoke {
  render::RenderConfig render;
  nn::NetworkConfig net;
  loss::LossWeights loss;
  TrainConfig train;
};

Smoke smoke() {
  const RunConfig rc = profile_config("smoke");
  return {rc.render, rc.net, rc.loss, rc.train};
}

const TrainingData& smoke_data() {
  static const TrainingData data = [] {
    const auto ph = yoho::testing::make_phantom(7, {128, 128});
    return from_generated(render::generate_in_memory(ph.annotation, smoke().render));
  }();
  return data;
}

}  // namespace

TEST(LearningRate, Examples) {
  const TrainConfig cfg;
  EXPECT_DOUBLE_EQ(lr_at(0, 1, cfg), 1.0e-3);
  EXPECT_DOUBLE_EQ(lr_at(49, 1, cfg), 1.0e-3);
  EXPECT_NEAR(lr_at(50, 1, cfg), 9.0e-4, 1e-18);
  EXPECT_DOUBLE_EQ(lr_at(0, 2, cfg), 3.0e-4);
  double expected = 3.0e-4;
  for (int i = 0; i < 19; ++i) expected *= 0.9;
  EXPECT_NEAR(lr_at(999, 2, cfg), expected, 1e-15 * expected);
}

TEST(LearningRate, MonotoneWithinEachPhase) {
  const TrainConfig cfg;
  for (int phase : {1, 2}) {
    for (int s = 1; s < 1000; ++s) EXPECT_LE(lr_at(s, phase, cfg), lr_at(s - 1, phase, cfg));
  }
  EXPECT_GT(lr_at(0, 2, cfg), lr_at(999, 1, cfg));
}

TEST(LearningRate, OutOfRange) {
  const TrainConfig cfg;
  for (auto [step, phase] : {std::pair{-1, 1}, std::pair{1000, 1}, std::pair{0, 3}, std::pair{1000, 2}}) {
    try {
      lr_at(step, phase, cfg);
      ADD_FAILURE() << step << "," << phase;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InvalidConfig);
    }
  }
}

TEST(TrainConfigValidation, RejectsBadValues) {
  EXPECT_NO_THROW(validate(TrainConfig{}));
  for (auto mutate : std::vector<void (*)(TrainConfig&)>{
           [](TrainConfig& c) { c.phase1_steps = 0; }, [](TrainConfig& c) { c.phase2_lr = 0; },
           [](TrainConfig& c) { c.batch_size = 0; }, [](TrainConfig& c) { c.beta2 = 1.0; },
           [](TrainConfig& c) { c.decay_every = 0; }, [](TrainConfig& c) { c.checkpoint_every = 0; }}) {
    TrainConfig c;
    mutate(c);
    EXPECT_THROW(validate(c), Error);
  }
}

TEST(AdamOptimizer, FirstStepMovesByLearningRate) {
  nn::Tensor value(1, 1, 1, 3), grad(1, 1, 1, 3);
  value.data()[0] = 1.0f, value.data()[1] = -2.0f, value.data()[2] = 0.5f;
  grad.data()[0] = 0.5f, grad.data()[1] = -3.0f, grad.data()[2] = 0.0f;
  nn::ParamList params{{"w", &value, &grad, nn::ParamGroup::Decoder}};
  Adam adam(params, 0.9, 0.999, 1e-8);
  adam.step(0.01);
  // Bias-corrected moments equal g and g^2 after one step: the update is lr * sign(g).
  EXPECT_NEAR(value.data()[0], 0.99f, 1e-6);
  EXPECT_NEAR(value.data()[1], -1.99f, 1e-6);
  EXPECT_EQ(value.data()[2], 0.5f);
  EXPECT_EQ(adam.steps_taken(), 1);
  // Second step with the same gradient, against the textbook recurrences.
  adam.step(0.01);
  const double m = 0.9 * 0.05 + 0.1 * 0.5, v = 0.999 * 0.00025 + 0.001 * 0.25;
  const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(value.data()[0], 0.99 - 0.01 * mhat / (std::sqrt(vhat) + 1e-8), 1e-6);
}

TEST(AdamOptimizer, FrozenGroupIsUntouched) {
  nn::Tensor a(1, 1, 1, 1, 1.f), ga(1, 1, 1, 1, 1.f), b(1, 1, 1, 1, 1.f), gb(1, 1, 1, 1, 1.f);
  nn::ParamList params{{"enc", &a, &ga, nn::ParamGroup::Encoder}, {"dec", &b, &gb, nn::ParamGroup::Decoder}};
  Adam adam(params, 0.9, 0.999, 1e-8);
  adam.step(0.1, nn::ParamGroup::Encoder);
  EXPECT_EQ(a.data()[0], 1.f);
  EXPECT_NE(b.data()[0], 1.f);
}

TEST(Data, EffectiveIgnoreRemovesOwnMask) {
  BinaryMask ignore(2, 3, CV_8UC1, cv::Scalar(0)), mask(2, 3, CV_8UC1, cv::Scalar(0));
  ignore.at<std::uint8_t>(0, 0) = ignore.at<std::uint8_t>(0, 1) = ignore.at<std::uint8_t>(1, 2) = 1;
  mask.at<std::uint8_t>(0, 1) = mask.at<std::uint8_t>(1, 1) = 1;
  EXPECT_EQ(effective_ignore(ignore, mask), (std::vector<std::uint8_t>{1, 0, 0, 0, 0, 1}));
  EXPECT_EQ(effective_ignore(BinaryMask(), mask), std::vector<std::uint8_t>(6, 0));
}

TEST(Data, DiskAndMemoryAgree) {
  const auto ph = yoho::testing::make_phantom(7, {128, 128});
  const fs::path dir = fs::temp_directory_path() / ("yoho_train_data_" + std::to_string(::getpid()));
  const auto manifest = render::generate_dataset(ph.annotation, smoke().render, dir);
  const TrainingData disk = load_training_data(manifest);
  const TrainingData& mem = smoke_data();
  ASSERT_EQ(disk.K(), mem.K());
  for (int i = 0; i < disk.K(); ++i) {
    EXPECT_EQ(cv::norm(disk.images[i], mem.images[i], cv::NORM_INF), 0.0);
    EXPECT_EQ(cv::norm(disk.masks[i], mem.masks[i], cv::NORM_INF), 0.0);
    EXPECT_EQ(cv::norm(disk.edges[i], mem.edges[i], cv::NORM_INF), 0.0);
  }
  EXPECT_EQ(cv::norm(disk.ignore, mem.ignore, cv::NORM_INF), 0.0);
  fs::remove_all(dir);
}

TEST(Train, SmokeRunBookkeeping) {
  const Smoke s = smoke();
  ASSERT_EQ(smoke_data().K(), 32);
  const TrainResult r = train::train(smoke_data(), s.net, s.loss, s.train);
  ASSERT_EQ(r.history.rows.size(), 40u);
  for (std::size_t i = 0; i < r.history.rows.size(); ++i) {
    const auto& row = r.history.rows[i];
    EXPECT_EQ(row.step, static_cast<int>(i));
    EXPECT_EQ(row.phase, i < 20 ? 1 : 2);
    EXPECT_DOUBLE_EQ(row.lr, lr_at(static_cast<int>(i % 20), row.phase, s.train));
    for (double v : {row.seg, row.edge, row.consist, row.total}) EXPECT_TRUE(std::isfinite(v));
    EXPECT_NEAR(row.total, s.loss.lambda1 * row.seg + s.loss.lambda2 * row.edge + s.loss.lambda3 * row.consist,
                1e-9 * std::max(1.0, row.total));
    EXPECT_EQ(row.train_dice.has_value(), (i + 1) % 10 == 0) << i;
    if (row.train_dice) {
      EXPECT_GE(*row.train_dice, 0.0);
      EXPECT_LE(*row.train_dice, 1.0);
    }
  }
  // Freeze contract: phase 1 leaves the encoder untouched, phase 2 moves it.
  EXPECT_EQ(r.encoder_hash_start, r.encoder_hash_after_phase1);
  nn::EUNet net = std::move(const_cast<TrainResult&>(r).net);
  EXPECT_NE(nn::parameter_hash(net, nn::ParamGroup::Encoder), r.encoder_hash_start);

  const std::string csv = r.history.to_csv();
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,phase,lr,seg,edge,consist,total,train_dice");
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 40);
  ASSERT_TRUE(r.history.final_train_dice().has_value());
  EXPECT_EQ(*r.history.final_train_dice(), *r.history.rows.back().train_dice);
}

TEST(Train, LossDecreasesOnSmoke) {
  Smoke s = smoke();
  s.train.phase1_steps = s.train.phase2_steps = 40;
  const TrainResult r = train::train(smoke_data(), s.net, s.loss, s.train);
  auto mean = [&](int lo, int hi) {
    double m = 0;
    for (int i = lo; i < hi; ++i) m += r.history.rows[i].total;
    return m / (hi - lo);
  };
  EXPECT_LT(mean(70, 80), mean(0, 10));
}

TEST(Train, DeterministicUnderFixedSeed) {
  const Smoke s = smoke();
  TrainResult a = train::train(smoke_data(), s.net, s.loss, s.train);
  TrainResult b = train::train(smoke_data(), s.net, s.loss, s.train);
  EXPECT_EQ(nn::parameter_hash(a.net), nn::parameter_hash(b.net));
  EXPECT_EQ(a.history.to_csv(), b.history.to_csv());
  TrainConfig other = s.train;
  other.rng_seed += 1;
  TrainResult c = train::train(smoke_data(), s.net, s.loss, other);
  EXPECT_NE(nn::parameter_hash(a.net), nn::parameter_hash(c.net));
}

TEST(Train, NonFiniteLossAborts) {
  Smoke s = smoke();
  const fs::path dir = fs::temp_directory_path() / ("yoho_train_nan_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  {
    nn::EUNet donor(s.net);
    nn::Rng rng(3);
    donor.init(rng);
    for (auto& p : donor.params())
      if (p.group == nn::ParamGroup::Encoder && p.trainable()) p.value->fill(std::numeric_limits<float>::quiet_NaN());
    nn::save_checkpoint(donor, dir / "nan.yoho");
  }
  s.net.use_pretrained_encoder = true;
  s.net.pretrained_path = (dir / "nan.yoho").string();
  s.train.phase1_steps = s.train.phase2_steps = 1;
  try {
    train::train(smoke_data(), s.net, s.loss, s.train);
    FAIL() << "training survived non-finite weights";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteLoss);
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Train, ManifestVariantPersistsCheckpoint) {
  const auto ph = yoho::testing::make_phantom(7, {128, 128});
  const fs::path dir = fs::temp_directory_path() / ("yoho_train_ckpt_" + std::to_string(::getpid()));
  Smoke s = smoke();
  s.train.phase1_steps = s.train.phase2_steps = 2;
  const auto manifest = render::generate_dataset(ph.annotation, s.render, dir / "dataset");
  TrainResult r = train::train(manifest, s.net, s.loss, s.train, dir / "ckpt.yoho");
  ASSERT_TRUE(fs::exists(dir / "ckpt.yoho"));
  nn::EUNet back = nn::load_checkpoint(dir / "ckpt.yoho");
  EXPECT_EQ(nn::parameter_hash(back), nn::parameter_hash(r.net));
  fs::remove_all(dir);
}

TEST(Train, BatchLargerThanDatasetIsRejected) {
  Smoke s = smoke();
  s.train.batch_size = 64;
  EXPECT_THROW(train::train(smoke_data(), s.net, s.loss, s.train), Error);
}
