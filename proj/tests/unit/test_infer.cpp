#include <random>

#include <gtest/gtest.h>

#include "yoho/config.hpp"
#include "yoho/error.hpp"
#include "yoho/infer.hpp"

namespace {

using namespace yoho;
using train::Gating;
using train::infer;
using train::InferOptions;
using train::Predictor;

constexpr Size2 kWorking{64, 64};

anno::AnnotatedImage rect_annotation(bool reverse, int rows = 90, int cols = 70) {
  anno::AnnotatedImage a;
  a.image = Image(rows, cols, CV_8UC3, cv::Scalar(40, 90, 160));
  a.rois.push_back({{{12, 20}, {50, 20}, {50, 61}, {12, 61}}});
  a.reverse = reverse;
  a.image_id = "rect";
  return a;
}

Predictor constant(float v) {
  return [v](const Image& w) { return ProbMap(w.rows, w.cols, CV_32FC1, cv::Scalar(v)); };
}

Predictor random_predictor(std::uint64_t seed) {
  return [seed](const Image& w) {
    ProbMap m(w.rows, w.cols, CV_32FC1);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (int y = 0; y < m.rows; ++y)
      for (int x = 0; x < m.cols; ++x) m.at<float>(y, x) = u(rng);
    return m;
  };
}

InferOptions ungated() {
  InferOptions o;
  o.roi_gating = false;
  return o;
}

double max_abs_diff(const cv::Mat& a, const cv::Mat& b) { return cv::norm(a, b, cv::NORM_INF); }

TEST(Infer, ConstantOneUngatedGivesFullMask) {
  const auto r = infer(rect_annotation(false), constant(1.0f), kWorking, ungated());
  EXPECT_EQ(r.binary_mask.rows, 90);
  EXPECT_EQ(r.binary_mask.cols, 70);
  EXPECT_EQ(popcount(r.binary_mask), 90u * 70u);
  EXPECT_EQ(r.gating, Gating::None);
}

TEST(Infer, ReverseConstantOneGivesEmptyMask) {
  EXPECT_EQ(popcount(infer(rect_annotation(true), constant(1.0f), kWorking, ungated()).binary_mask), 0u);
  const auto gated = infer(rect_annotation(true), constant(1.0f), kWorking);
  EXPECT_EQ(popcount(gated.binary_mask), 0u);
  EXPECT_EQ(gated.gating, Gating::OutsideRoi);
}

TEST(Infer, GatedForegroundLiesInsideRectangle) {
  const auto a = rect_annotation(false);
  const BinaryMask roi = anno::rasterize_roi(a, size_of(a.image));
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto r = infer(a, random_predictor(seed), kWorking);
    EXPECT_EQ(r.gating, Gating::InsideRoi);
    ASSERT_GT(popcount(r.binary_mask), 0u);
    for (int y = 0; y < roi.rows; ++y)
      for (int x = 0; x < roi.cols; ++x) {
        if (r.binary_mask.at<std::uint8_t>(y, x)) ASSERT_TRUE(roi.at<std::uint8_t>(y, x)) << y << "," << x;
        if (!roi.at<std::uint8_t>(y, x)) ASSERT_EQ(r.prob_map.at<float>(y, x), 0.0f);
        else ASSERT_EQ(r.prob_map.at<float>(y, x), r.raw_map.at<float>(y, x));
      }
  }
}

TEST(Infer, ReverseGatingKeepsOnlyOutsideSketch) {
  const auto a = rect_annotation(true);
  const BinaryMask roi = anno::rasterize_roi(a, size_of(a.image));
  const auto r = infer(a, constant(0.0f), kWorking);
  for (int y = 0; y < roi.rows; ++y)
    for (int x = 0; x < roi.cols; ++x) ASSERT_EQ(r.binary_mask.at<std::uint8_t>(y, x), roi.at<std::uint8_t>(y, x) ? 0 : 1);
}

TEST(Infer, ReverseRawMapIsComplement) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto fwd = infer(rect_annotation(false), random_predictor(seed), kWorking, ungated());
    const auto rev = infer(rect_annotation(true), random_predictor(seed), kWorking, ungated());
    EXPECT_LE(max_abs_diff(rev.raw_map, 1.0f - fwd.raw_map), 1e-6);
  }
}

TEST(Infer, DoubleInversionRecoversRawMask) {
  const auto base = random_predictor(3);
  const Predictor flipped = [&](const Image& w) { return ProbMap(1.0f - base(w)); };
  const auto fwd = infer(rect_annotation(false), base, kWorking, ungated());
  const auto twice = infer(rect_annotation(true), flipped, kWorking, ungated());
  EXPECT_LE(max_abs_diff(twice.raw_map, fwd.raw_map), 1e-6);
  EXPECT_EQ(cv::countNonZero(twice.binary_mask != fwd.binary_mask), 0);
}

TEST(Infer, ForcedConstantReverseEqualsGatedComplement) {
  for (float c : {0.0f, 0.2f, 0.5f, 0.7f, 1.0f}) {
    const auto fwd = infer(rect_annotation(false), constant(c), kWorking, ungated());
    const auto rev = infer(rect_annotation(true), constant(c), kWorking);
    const auto a = rect_annotation(true);
    const BinaryMask roi = anno::rasterize_roi(a, size_of(a.image));
    ProbMap expected = 1.0f - fwd.raw_map;
    expected.setTo(0.0f, roi != 0);
    EXPECT_LE(max_abs_diff(rev.prob_map, expected), 1e-6) << c;
  }
}

TEST(Infer, BinaryMaskIsThresholdedProbMap) {
  for (double t : {0.1, 0.5, 0.9}) {
    InferOptions o;
    o.threshold = t;
    const auto r = infer(rect_annotation(false), random_predictor(11), kWorking, o);
    EXPECT_EQ(r.threshold, t);
    for (int y = 0; y < r.prob_map.rows; ++y)
      for (int x = 0; x < r.prob_map.cols; ++x)
        ASSERT_EQ(r.binary_mask.at<std::uint8_t>(y, x), r.prob_map.at<float>(y, x) >= t ? 1 : 0);
  }
}

TEST(Infer, ProbMapStaysInUnitInterval) {
  const auto r = infer(rect_annotation(false, 37, 211), random_predictor(5), kWorking, ungated());
  double lo = 0, hi = 0;
  cv::minMaxLoc(r.raw_map, &lo, &hi);
  EXPECT_GE(lo, 0.0);
  EXPECT_LE(hi, 1.0);
  EXPECT_EQ(r.raw_map.rows, 37);
  EXPECT_EQ(r.raw_map.cols, 211);
}

TEST(Infer, RejectsBadInputs) {
  const Predictor wrong = [](const Image&) { return ProbMap(8, 8, CV_32FC1, cv::Scalar(0.5)); };
  try {
    infer(rect_annotation(false), wrong, kWorking);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeError);
  }
  anno::AnnotatedImage empty = rect_annotation(false);
  empty.image = Image();
  try {
    infer(empty, constant(0.5f), kWorking);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingImage);
  }
}

TEST(Infer, NetworkPredictorShape) {
  RunConfig cfg = profile_config("smoke");
  nn::EUNet net(cfg.net);
  nn::Rng rng(1);
  net.init(rng);
  const auto a = rect_annotation(false, 50, 80);
  const ProbMap s = train::network_predictor(net)(resize_image(a.image, kWorking));
  EXPECT_EQ(s.type(), CV_32FC1);
  EXPECT_EQ(size_of(s), kWorking);
  const auto r = infer(a, net, kWorking);
  EXPECT_EQ(r.binary_mask.rows, 50);
  EXPECT_EQ(r.binary_mask.cols, 80);
  const auto r2 = infer(a, net, kWorking);
  EXPECT_EQ(max_abs_diff(r.raw_map, r2.raw_map), 0.0);
}

}  // namespace
