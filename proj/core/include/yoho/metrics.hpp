#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "yoho/image.hpp"

namespace yoho::metrics {

// Soft maps S are CV_32FC1 or CV_64FC1 in [0,1]; ground truth G is a 0/1
// CV_8UC1 mask. Everything is accumulated in double precision.

struct RegionMetrics {
  double dice = 0.0;
  double iou = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  /// Set when G is empty and P is not (recall falls back to 1).
  bool empty_gt = false;
};

/// Empty-G conventions: P and G both empty -> all four are 1; only P
/// nonempty -> dice = iou = precision = 0, recall = 1.
RegionMetrics region_metrics(const BinaryMask& p, const BinaryMask& g);

double mae(const cv::Mat& s, const BinaryMask& g);

inline constexpr int kWfmKernel = 7;
inline constexpr double kWfmSigma = 5.0;

/// Weighted F-measure (Margolin et al.). Throws EmptyGroundTruth when G has
/// no foreground.
double weighted_fmeasure(const cv::Mat& s, const BinaryMask& g, double beta2 = 1.0);

/// Structure measure (Fan et al.). Degenerate G: empty -> 1 - mean(S),
/// full -> mean(S).
double s_measure(const cv::Mat& s, const BinaryMask& g, double alpha = 0.5);

inline constexpr int kEThresholds = 256;

/// Enhanced-alignment score of a binary map F against G.
double e_measure(const BinaryMask& f, const BinaryMask& g);
/// e_measure of (S >= k/255) for k = 0..255.
std::vector<double> e_measure_curve(const cv::Mat& s, const BinaryMask& g);
double e_measure_max(const cv::Mat& s, const BinaryMask& g);

/// Euclidean distance to, and flat index (row * cols + col) of, the nearest
/// nonzero pixel of `g`. Ties resolve to the smallest (col, row).
struct DistanceField {
  cv::Mat dist;   // CV_64FC1
  cv::Mat index;  // CV_32SC1
};
DistanceField nearest_foreground(const BinaryMask& g);

struct MetricsRow {
  std::string id;
  double dice = 0.0;
  double iou = 0.0;
  double wfm = 0.0;
  double s_alpha = 0.0;
  double e_phi_max = 0.0;
  double mae = 0.0;
  double recall = 0.0;
  double precision = 0.0;
};

struct EvalConfig {
  double alpha = 0.5;
  double beta2 = 1.0;
};

MetricsRow evaluate_pair(const std::string& id, const cv::Mat& s, const BinaryMask& g, const EvalConfig& cfg = {});

struct Failure {
  std::string id;
  std::string reason;
};

struct MetricsReport {
  EvalConfig config;
  std::vector<MetricsRow> rows;  // sorted by id
  MetricsRow mean;               // id "MEAN"
  std::vector<std::string> missing;
  std::vector<Failure> failures;

  bool complete() const { return missing.empty() && failures.empty(); }
  std::string to_csv() const;
  std::string summary() const;
};

MetricsReport aggregate(std::vector<MetricsRow> rows, const EvalConfig& cfg = {});

/// Pairs files by stem across the two directories. Predictions are 8-bit
/// images read as S = value / 255 for the soft measures and as value >= 128
/// for the region measures; ground truth foreground is value >= 128.
MetricsReport evaluate_run(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                           const EvalConfig& cfg = {});

/// Writes metrics.csv and summary.txt into `out_dir`.
void write_report(const MetricsReport& report, const std::filesystem::path& out_dir);

}  // namespace yoho::metrics
