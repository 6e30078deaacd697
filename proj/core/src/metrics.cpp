#include "yoho/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>

#include "yoho/error.hpp"

namespace yoho::metrics {

namespace fs = std::filesystem;

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

void check_gt(const BinaryMask& g) {
  if (g.empty() || g.type() != CV_8UC1) throw Error(ErrorCode::ShapeError, "ground truth must be a non-empty 8-bit mask");
}

/// Converts S to double and checks it against G.
cv::Mat as_double(const cv::Mat& s, const BinaryMask& g) {
  check_gt(g);
  if (s.size() != g.size()) {
    throw Error(ErrorCode::ShapeError, fmt::format("map is {}x{}, ground truth {}x{}", s.rows, s.cols, g.rows, g.cols));
  }
  cv::Mat d;
  switch (s.type()) {
    case CV_64FC1: d = s; break;
    case CV_32FC1: s.convertTo(d, CV_64F); break;
    default: throw Error(ErrorCode::ShapeError, "soft maps must be single-channel float");
  }
  return d;
}

std::vector<std::uint8_t> flat_mask(const BinaryMask& m) {
  std::vector<std::uint8_t> out(m.total());
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) out[static_cast<std::size_t>(y) * m.cols + x] = row[x] != 0;
  }
  return out;
}

std::vector<double> flat_map(const cv::Mat& d) {
  std::vector<double> out(d.total());
  for (int y = 0; y < d.rows; ++y) std::copy(d.ptr<double>(y), d.ptr<double>(y) + d.cols, out.begin() + static_cast<std::ptrdiff_t>(y) * d.cols);
  return out;
}

/// Exact rational p/q with q > 0.
struct Frac {
  std::int64_t num;
  std::int64_t den;
};

bool less(const Frac& a, std::int64_t x) { return a.num < x * a.den; }
bool less_eq(const Frac& a, const Frac& b) { return a.num * b.den <= b.num * a.den; }

}  // namespace

RegionMetrics region_metrics(const BinaryMask& p, const BinaryMask& g) {
  check_gt(g);
  if (p.size() != g.size() || p.type() != CV_8UC1) throw Error(ErrorCode::ShapeError, "prediction and ground truth differ in shape");
  std::size_t inter = 0, np = 0, ng = 0;
  for (int y = 0; y < g.rows; ++y) {
    const auto* pr = p.ptr<std::uint8_t>(y);
    const auto* gr = g.ptr<std::uint8_t>(y);
    for (int x = 0; x < g.cols; ++x) {
      const bool a = pr[x] != 0;
      const bool b = gr[x] != 0;
      inter += a && b;
      np += a;
      ng += b;
    }
  }
  RegionMetrics r;
  if (ng == 0) {
    r.empty_gt = np != 0;
    const double v = np == 0 ? 1.0 : 0.0;
    r.dice = r.iou = r.precision = v;
    r.recall = 1.0;
    return r;
  }
  const auto i = static_cast<double>(inter);
  r.dice = 2.0 * i / static_cast<double>(np + ng);
  r.iou = i / static_cast<double>(np + ng - inter);
  r.recall = i / static_cast<double>(ng);
  r.precision = np == 0 ? 0.0 : i / static_cast<double>(np);
  return r;
}

double mae(const cv::Mat& s, const BinaryMask& g) {
  const cv::Mat d = as_double(s, g);
  double sum = 0.0;
  for (int y = 0; y < g.rows; ++y) {
    const double* sr = d.ptr<double>(y);
    const auto* gr = g.ptr<std::uint8_t>(y);
    for (int x = 0; x < g.cols; ++x) sum += std::abs(sr[x] - (gr[x] ? 1.0 : 0.0));
  }
  return sum / static_cast<double>(g.total());
}

DistanceField nearest_foreground(const BinaryMask& g) {
  check_gt(g);
  const int rows = g.rows;
  const int cols = g.cols;
  constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max();

  // Column pass: nearest foreground row within each column, upper row on ties.
  std::vector<std::int64_t> f(static_cast<std::size_t>(rows) * cols, kInf);
  std::vector<int> near_row(f.size(), -1);
  for (int c = 0; c < cols; ++c) {
    int above = -1;
    for (int r = 0; r < rows; ++r) {
      if (g.at<std::uint8_t>(r, c)) above = r;
      near_row[static_cast<std::size_t>(r) * cols + c] = above;
    }
    int below = -1;
    for (int r = rows - 1; r >= 0; --r) {
      if (g.at<std::uint8_t>(r, c)) below = r;
      const std::size_t i = static_cast<std::size_t>(r) * cols + c;
      const int up = near_row[i];
      int best = up;
      if (below >= 0 && (up < 0 || below - r < r - up)) best = below;
      near_row[i] = best;
      if (best >= 0) f[i] = static_cast<std::int64_t>(r - best) * (r - best);
    }
  }

  // Row pass: lower envelope of parabolas, exact arithmetic; on ties the
  // smaller column is kept.
  DistanceField out{cv::Mat(rows, cols, CV_64FC1), cv::Mat(rows, cols, CV_32SC1)};
  bool any = false;
  std::vector<int> v(cols);
  std::vector<Frac> z(cols + 1);
  for (int r = 0; r < rows; ++r) {
    const std::int64_t* fr = f.data() + static_cast<std::size_t>(r) * cols;
    int k = -1;
    for (int q = 0; q < cols; ++q) {
      if (fr[q] == kInf) continue;
      Frac s{0, 1};
      while (k >= 0) {
        const int p = v[k];
        s = {(fr[q] + static_cast<std::int64_t>(q) * q) - (fr[p] + static_cast<std::int64_t>(p) * p), 2 * static_cast<std::int64_t>(q - p)};
        if (k > 0 && less_eq(s, z[k])) {
          --k;
        } else {
          break;
        }
      }
      ++k;
      v[k] = q;
      z[k] = s;
    }
    if (k < 0) {
      for (int x = 0; x < cols; ++x) {
        out.dist.at<double>(r, x) = std::numeric_limits<double>::infinity();
        out.index.at<int>(r, x) = -1;
      }
      continue;
    }
    any = true;
    const int last = k;
    k = 0;
    for (int x = 0; x < cols; ++x) {
      while (k < last && less(z[k + 1], x)) ++k;
      const int c = v[k];
      const std::int64_t d2 = static_cast<std::int64_t>(x - c) * (x - c) + fr[c];
      out.dist.at<double>(r, x) = std::sqrt(static_cast<double>(d2));
      out.index.at<int>(r, x) = near_row[static_cast<std::size_t>(r) * cols + c] * cols + c;
    }
  }
  if (!any) throw Error(ErrorCode::EmptyGroundTruth, "ground truth has no foreground");
  return out;
}

double weighted_fmeasure(const cv::Mat& s, const BinaryMask& g, double beta2) {
  const cv::Mat d = as_double(s, g);
  const int rows = g.rows;
  const int cols = g.cols;
  const auto gt = flat_mask(g);
  const auto sv = flat_map(d);
  const DistanceField df = nearest_foreground(g);
  const std::size_t n = gt.size();

  std::vector<double> e(n), et(n);
  for (std::size_t i = 0; i < n; ++i) e[i] = std::abs(sv[i] - gt[i]);
  for (std::size_t i = 0; i < n; ++i) et[i] = gt[i] ? e[i] : e[df.index.ptr<int>()[i]];

  // 7x7 Gaussian (sigma 5), normalised, zero padding; separable.
  constexpr int half = kWfmKernel / 2;
  double k1[kWfmKernel];
  double ksum = 0.0;
  for (int i = 0; i < kWfmKernel; ++i) ksum += k1[i] = std::exp(-double((i - half) * (i - half)) / (2.0 * kWfmSigma * kWfmSigma));
  for (double& kv : k1) kv /= ksum;
  std::vector<double> tmp(n, 0.0), ea(n, 0.0);
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      double acc = 0.0;
      for (int t = -half; t <= half; ++t) {
        const int xx = x + t;
        if (xx >= 0 && xx < cols) acc += k1[t + half] * et[static_cast<std::size_t>(y) * cols + xx];
      }
      tmp[static_cast<std::size_t>(y) * cols + x] = acc;
    }
  }
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      double acc = 0.0;
      for (int t = -half; t <= half; ++t) {
        const int yy = y + t;
        if (yy >= 0 && yy < rows) acc += k1[t + half] * tmp[static_cast<std::size_t>(yy) * cols + x];
      }
      ea[static_cast<std::size_t>(y) * cols + x] = acc;
    }
  }

  const double decay = std::log(0.5) / 5.0;
  double n_gt = 0.0, ew_gt = 0.0, ew_bg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (gt[i]) {
      n_gt += 1.0;
      ew_gt += std::min(e[i], ea[i]);
    } else {
      ew_bg += e[i] * (2.0 - std::exp(decay * df.dist.ptr<double>()[i]));
    }
  }
  const double tp = n_gt - ew_gt;
  const double r = 1.0 - ew_gt / n_gt;
  const double p = tp / (kEps + tp + ew_bg);
  return (1.0 + beta2) * r * p / (kEps + r + beta2 * p);
}

namespace {

double object_score(const std::vector<double>& vals) {
  if (vals.empty()) return 0.0;
  double mean = 0.0;
  for (double v : vals) mean += v;
  mean /= static_cast<double>(vals.size());
  double sd = 0.0;
  if (vals.size() > 1) {
    for (double v : vals) sd += (v - mean) * (v - mean);
    sd = std::sqrt(sd / static_cast<double>(vals.size() - 1));
  }
  return 2.0 * mean / (mean * mean + 1.0 + sd + kEps);
}

double ssim(const cv::Mat& s, const BinaryMask& g, cv::Rect roi) {
  if (roi.area() == 0) return 0.0;
  const double n = roi.area();
  double mx = 0.0, my = 0.0;
  for (int y = roi.y; y < roi.y + roi.height; ++y) {
    for (int x = roi.x; x < roi.x + roi.width; ++x) {
      mx += s.at<double>(y, x);
      my += g.at<std::uint8_t>(y, x) ? 1.0 : 0.0;
    }
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (int y = roi.y; y < roi.y + roi.height; ++y) {
    for (int x = roi.x; x < roi.x + roi.width; ++x) {
      const double a = s.at<double>(y, x) - mx;
      const double b = (g.at<std::uint8_t>(y, x) ? 1.0 : 0.0) - my;
      sxx += a * a;
      syy += b * b;
      sxy += a * b;
    }
  }
  const double denom = n - 1.0 + kEps;
  sxx /= denom;
  syy /= denom;
  sxy /= denom;
  const double alpha = 4.0 * mx * my * sxy;
  const double beta = (mx * mx + my * my) * (sxx + syy);
  if (alpha != 0.0) return alpha / (beta + kEps);
  return beta == 0.0 ? 1.0 : 0.0;
}

}  // namespace

double s_measure(const cv::Mat& s, const BinaryMask& g, double alpha) {
  const cv::Mat d = as_double(s, g);
  const int rows = g.rows;
  const int cols = g.cols;
  const auto n = static_cast<double>(g.total());
  std::size_t ng = 0;
  double sum_s = 0.0, sum_x = 0.0, sum_y = 0.0;
  std::vector<double> fg, bg;
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      const double v = d.at<double>(y, x);
      sum_s += v;
      if (g.at<std::uint8_t>(y, x)) {
        ++ng;
        sum_x += x + 1;
        sum_y += y + 1;
        fg.push_back(v);
      } else {
        bg.push_back(1.0 - v);
      }
    }
  }
  if (ng == 0) return 1.0 - sum_s / n;
  if (ng == g.total()) return sum_s / n;

  const double u = static_cast<double>(ng) / n;
  const double object = u * object_score(fg) + (1.0 - u) * object_score(bg);

  // Centroid in 1-based coordinates, rounded half away from zero; it is also
  // the number of leading columns/rows of the left/top quadrants.
  const int cx = static_cast<int>(std::round(sum_x / static_cast<double>(ng)));
  const int cy = static_cast<int>(std::round(sum_y / static_cast<double>(ng)));
  const double area = n;
  const double w1 = static_cast<double>(cx) * cy / area;
  const double w2 = static_cast<double>(cols - cx) * cy / area;
  const double w3 = static_cast<double>(cx) * (rows - cy) / area;
  const double w4 = 1.0 - w1 - w2 - w3;
  const double region = w1 * ssim(d, g, {0, 0, cx, cy}) + w2 * ssim(d, g, {cx, 0, cols - cx, cy}) +
                        w3 * ssim(d, g, {0, cy, cx, rows - cy}) + w4 * ssim(d, g, {cx, cy, cols - cx, rows - cy});
  return std::max(0.0, alpha * object + (1.0 - alpha) * region);
}

double e_measure(const BinaryMask& f, const BinaryMask& g) {
  check_gt(g);
  if (f.size() != g.size() || f.type() != CV_8UC1) throw Error(ErrorCode::ShapeError, "map and ground truth differ in shape");
  // Both maps are binary, so the alignment matrix takes one value per
  // (f, g) combination; accumulate counts instead of pixels.
  std::size_t c[2][2] = {{0, 0}, {0, 0}};
  for (int y = 0; y < g.rows; ++y) {
    const auto* fr = f.ptr<std::uint8_t>(y);
    const auto* gr = g.ptr<std::uint8_t>(y);
    for (int x = 0; x < g.cols; ++x) ++c[fr[x] != 0][gr[x] != 0];
  }
  const auto n = static_cast<double>(g.total());
  const double nf = static_cast<double>(c[1][0] + c[1][1]);
  const double ngt = static_cast<double>(c[0][1] + c[1][1]);
  double sum = 0.0;
  if (ngt == 0.0) {
    sum = n - nf;
  } else if (ngt == n) {
    sum = nf;
  } else {
    const double mf = nf / n;
    const double mg = ngt / n;
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        const double af = a - mf;
        const double ag = b - mg;
        const double align = 2.0 * ag * af / (ag * ag + af * af + kEps);
        sum += static_cast<double>(c[a][b]) * (align + 1.0) * (align + 1.0) / 4.0;
      }
    }
  }
  return sum / n;
}

std::vector<double> e_measure_curve(const cv::Mat& s, const BinaryMask& g) {
  const cv::Mat d = as_double(s, g);
  std::vector<double> curve(kEThresholds);
  BinaryMask f(g.size(), CV_8UC1);
  for (int k = 0; k < kEThresholds; ++k) {
    const double t = k / 255.0;
    for (int y = 0; y < g.rows; ++y) {
      const double* sr = d.ptr<double>(y);
      auto* fr = f.ptr<std::uint8_t>(y);
      for (int x = 0; x < g.cols; ++x) fr[x] = sr[x] >= t ? 1 : 0;
    }
    curve[k] = e_measure(f, g);
  }
  return curve;
}

double e_measure_max(const cv::Mat& s, const BinaryMask& g) {
  const auto curve = e_measure_curve(s, g);
  return *std::max_element(curve.begin(), curve.end());
}

MetricsRow evaluate_pair(const std::string& id, const cv::Mat& s, const BinaryMask& g, const EvalConfig& cfg) {
  const cv::Mat d = as_double(s, g);
  BinaryMask p(g.size(), CV_8UC1);
  for (int y = 0; y < g.rows; ++y) {
    for (int x = 0; x < g.cols; ++x) p.at<std::uint8_t>(y, x) = d.at<double>(y, x) >= 0.5 ? 1 : 0;
  }
  const RegionMetrics r = region_metrics(p, g);
  MetricsRow row;
  row.id = id;
  row.dice = r.dice;
  row.iou = r.iou;
  row.recall = r.recall;
  row.precision = r.precision;
  row.mae = mae(d, g);
  row.wfm = weighted_fmeasure(d, g, cfg.beta2);
  row.s_alpha = s_measure(d, g, cfg.alpha);
  row.e_phi_max = e_measure_max(d, g);
  return row;
}

MetricsReport aggregate(std::vector<MetricsRow> rows, const EvalConfig& cfg) {
  MetricsReport rep;
  rep.config = cfg;
  std::sort(rows.begin(), rows.end(), [](const MetricsRow& a, const MetricsRow& b) { return a.id < b.id; });
  rep.rows = std::move(rows);
  rep.mean.id = "MEAN";
  if (rep.rows.empty()) return rep;
  for (const auto& r : rep.rows) {
    rep.mean.dice += r.dice;
    rep.mean.iou += r.iou;
    rep.mean.wfm += r.wfm;
    rep.mean.s_alpha += r.s_alpha;
    rep.mean.e_phi_max += r.e_phi_max;
    rep.mean.mae += r.mae;
    rep.mean.recall += r.recall;
    rep.mean.precision += r.precision;
  }
  const auto n = static_cast<double>(rep.rows.size());
  for (double* v : {&rep.mean.dice, &rep.mean.iou, &rep.mean.wfm, &rep.mean.s_alpha, &rep.mean.e_phi_max, &rep.mean.mae,
                    &rep.mean.recall, &rep.mean.precision}) {
    *v /= n;
  }
  return rep;
}

namespace {

std::string csv_row(const MetricsRow& r) {
  return fmt::format("{},{:.9f},{:.9f},{:.9f},{:.9f},{:.9f},{:.9f},{:.9f},{:.9f}\n", r.id, r.dice, r.iou, r.wfm, r.s_alpha,
                     r.e_phi_max, r.mae, r.recall, r.precision);
}

std::map<std::string, fs::path> list_images(const fs::path& dir) {
  static const std::set<std::string> kExts{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IoFailure, "not a directory: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (kExts.count(ext)) out.emplace(entry.path().stem().string(), entry.path());
  }
  return out;
}

}  // namespace

std::string MetricsReport::to_csv() const {
  std::string out = "id,dice,iou,wfm,s_alpha,e_phi_max,mae,recall,precision\n";
  for (const auto& r : rows) out += csv_row(r);
  out += csv_row(mean);
  return out;
}

std::string MetricsReport::summary() const {
  std::ostringstream s;
  s << fmt::format("images evaluated: {}\n", rows.size());
  s << fmt::format("mDice {:.4f}  mIoU {:.4f}  wFm {:.4f}  S_alpha {:.4f}  E_max {:.4f}  MAE {:.4f}  recall {:.4f}  precision {:.4f}\n",
                   mean.dice, mean.iou, mean.wfm, mean.s_alpha, mean.e_phi_max, mean.mae, mean.recall, mean.precision);
  s << fmt::format("settings: alpha={} beta2={} wfm_kernel={} wfm_sigma={} e_thresholds={}\n", config.alpha, config.beta2,
                   kWfmKernel, kWfmSigma, kEThresholds);
  if (complete()) {
    s << "complete: yes\n";
  } else {
    s << fmt::format("complete: no ({} missing, {} failed)\n", missing.size(), failures.size());
    for (const auto& id : missing) s << "  missing pair: " << id << '\n';
    for (const auto& f : failures) s << "  failed: " << f.id << ": " << f.reason << '\n';
  }
  return s.str();
}

MetricsReport evaluate_run(const fs::path& pred_dir, const fs::path& gt_dir, const EvalConfig& cfg) {
  const auto preds = list_images(pred_dir);
  const auto gts = list_images(gt_dir);
  std::vector<std::string> ids;
  std::vector<std::string> missing;
  for (const auto& [id, _] : gts) (preds.count(id) ? ids : missing).push_back(id);
  for (const auto& [id, _] : preds) {
    if (!gts.count(id)) missing.push_back(id);
  }
  std::sort(missing.begin(), missing.end());

  std::vector<std::optional<MetricsRow>> rows(ids.size());
  std::vector<std::string> errors(ids.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < ids.size(); ++i) {
    try {
      const cv::Mat raw = cv::imread(preds.at(ids[i]).string(), cv::IMREAD_GRAYSCALE);
      if (raw.empty()) throw Error(ErrorCode::IoFailure, "cannot decode prediction");
      cv::Mat s;
      raw.convertTo(s, CV_64F, 1.0 / 255.0);
      const BinaryMask g = read_binary_mask(gts.at(ids[i]));
      rows[i] = evaluate_pair(ids[i], s, g, cfg);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  std::vector<MetricsRow> ok;
  std::vector<Failure> failures;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (rows[i]) {
      ok.push_back(*rows[i]);
    } else {
      failures.push_back({ids[i], errors[i]});
    }
  }
  MetricsReport rep = aggregate(std::move(ok), cfg);
  rep.missing = std::move(missing);
  rep.failures = std::move(failures);
  return rep;
}

void write_report(const MetricsReport& report, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const std::string csv = report.to_csv();
  const std::string summary = report.summary();
  write_file_atomic(out_dir / "metrics.csv", std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
  write_file_atomic(out_dir / "summary.txt", std::span(reinterpret_cast<const std::uint8_t*>(summary.data()), summary.size()));
}

}  // namespace yoho::metrics
