#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace yoho::oracle {

namespace {

constexpr double eps = 2.220446049250313e-16;

double mean2(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

/// MATLAB std: normalised by n-1, zero for a single element.
double matlab_std(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  const double m = mean2(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

/// MATLAB round: half away from zero.
double matlab_round(double x) { return x < 0 ? -std::floor(-x + 0.5) : std::floor(x + 0.5); }

double clampp(double p) { return std::min(std::max(p, 1e-7), 1.0 - 1e-7); }

}  // namespace

Region region(const Grid& p, const Grid& g) {
  double tp = 0, fp = 0, fn = 0;
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) {
      const bool a = p(r, c) > 0.5;
      const bool b = g(r, c) > 0.5;
      if (a && b) tp += 1;
      if (a && !b) fp += 1;
      if (!a && b) fn += 1;
    }
  }
  Region out{};
  out.dice = 2 * tp / (2 * tp + fp + fn);
  out.iou = tp / (tp + fp + fn);
  out.recall = tp / (tp + fn);
  out.precision = tp + fp == 0 ? 0.0 : tp / (tp + fp);
  return out;
}

double mae(const Grid& s, const Grid& g) {
  double acc = 0;
  for (std::size_t i = 0; i < s.v.size(); ++i) acc += std::fabs(s.v[i] - g.v[i]);
  return acc / static_cast<double>(s.v.size());
}

double wfm(const Grid& fg, const Grid& gt, double beta2) {
  const int rows = gt.rows;
  const int cols = gt.cols;
  // E = abs(FG - dGT)
  Grid e(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) e(r, c) = std::fabs(fg(r, c) - gt(r, c));

  // [Dst, IDXT] = bwdist(dGT): brute force, scanning GT pixels in
  // column-major order and keeping the first strictly-closer hit.
  Grid dst(rows, cols);
  std::vector<int> idxr(static_cast<std::size_t>(rows) * cols), idxc(idxr.size());
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double best = std::numeric_limits<double>::infinity();
      int br = -1, bc = -1;
      for (int cc = 0; cc < cols; ++cc) {
        for (int rr = 0; rr < rows; ++rr) {
          if (gt(rr, cc) < 0.5) continue;
          const double d2 = double(rr - r) * (rr - r) + double(cc - c) * (cc - c);
          if (d2 < best) {
            best = d2;
            br = rr;
            bc = cc;
          }
        }
      }
      dst(r, c) = std::sqrt(best);
      idxr[static_cast<std::size_t>(r) * cols + c] = br;
      idxc[static_cast<std::size_t>(r) * cols + c] = bc;
    }
  }

  // Et = E; Et(~GT) = Et(IDXT(~GT))
  Grid et = e;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (gt(r, c) < 0.5) et(r, c) = e(idxr[static_cast<std::size_t>(r) * cols + c], idxc[static_cast<std::size_t>(r) * cols + c]);
    }
  }

  // K = fspecial('gaussian', 7, 5)
  const double sigma = 5.0;
  double k[7][7];
  double ksum = 0;
  for (int i = 0; i < 7; ++i) {
    for (int j = 0; j < 7; ++j) {
      const double x = j - 3, y = i - 3;
      k[i][j] = std::exp(-(x * x + y * y) / (2 * sigma * sigma));
      ksum += k[i][j];
    }
  }
  for (auto& row : k)
    for (double& v : row) v /= ksum;

  // EA = imfilter(Et, K): correlation, zero padding, same size.
  Grid ea(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double acc = 0;
      for (int i = 0; i < 7; ++i) {
        for (int j = 0; j < 7; ++j) {
          const int rr = r + i - 3, cc = c + j - 3;
          if (rr >= 0 && rr < rows && cc >= 0 && cc < cols) acc += k[i][j] * et(rr, cc);
        }
      }
      ea(r, c) = acc;
    }
  }

  // MIN_E_EA = E; MIN_E_EA(GT & EA<E) = EA(GT & EA<E)
  Grid min_e_ea = e;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if (gt(r, c) > 0.5 && ea(r, c) < e(r, c)) min_e_ea(r, c) = ea(r, c);

  // B = ones; B(~GT) = 2 - 1*exp(log(1-0.5)/5 .* Dst(~GT))
  Grid b(rows, cols, 1.0);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if (gt(r, c) < 0.5) b(r, c) = 2 - 1 * std::exp(std::log(1 - 0.5) / 5 * dst(r, c));

  // Ew = MIN_E_EA .* B
  double sum_gt = 0, ew_gt = 0, ew_bg = 0, n_gt = 0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double ew = min_e_ea(r, c) * b(r, c);
      if (gt(r, c) > 0.5) {
        sum_gt += gt(r, c);
        ew_gt += ew;
        n_gt += 1;
      } else {
        ew_bg += ew;
      }
    }
  }
  const double tpw = sum_gt - ew_gt;
  const double fpw = ew_bg;
  const double rr = 1 - ew_gt / n_gt;  // 1 - mean2(Ew(GT))
  const double pp = tpw / (eps + tpw + fpw);
  return (1 + beta2) * (rr * pp) / (eps + rr + (beta2 * pp));
}

namespace {

double object(const std::vector<double>& pred_in_gt) {
  if (pred_in_gt.empty()) return 0.0;
  const double x = mean2(pred_in_gt);
  const double sigma_x = matlab_std(pred_in_gt);
  return 2.0 * x / (x * x + 1.0 + sigma_x + eps);
}

double s_object(const Grid& pred, const Grid& gt) {
  std::vector<double> fg, bg;
  double u = 0;
  for (int r = 0; r < gt.rows; ++r) {
    for (int c = 0; c < gt.cols; ++c) {
      if (gt(r, c) > 0.5) {
        fg.push_back(pred(r, c));
        u += 1;
      } else {
        bg.push_back(1.0 - pred(r, c));
      }
    }
  }
  u /= gt.rows * gt.cols;
  return u * object(fg) + (1 - u) * object(bg);
}

Grid crop(const Grid& g, int r0, int r1, int c0, int c1) {  // inclusive 1-based ranges
  if (r1 < r0 || c1 < c0) return Grid(0, 0);
  Grid out(r1 - r0 + 1, c1 - c0 + 1);
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) out(r - r0, c - c0) = g(r - 1, c - 1);
  return out;
}

double ssim(const Grid& pred, const Grid& gt) {
  const double n = pred.rows * pred.cols;
  if (n == 0) return 0.0;
  const double x = mean2(pred.v);
  const double y = mean2(gt.v);
  double sx = 0, sy = 0, sxy = 0;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    sx += (pred.v[i] - x) * (pred.v[i] - x);
    sy += (gt.v[i] - y) * (gt.v[i] - y);
    sxy += (pred.v[i] - x) * (gt.v[i] - y);
  }
  const double sigma_x2 = sx / (n - 1 + eps);
  const double sigma_y2 = sy / (n - 1 + eps);
  const double sigma_xy = sxy / (n - 1 + eps);
  const double alpha = 4 * x * y * sigma_xy;
  const double beta = (x * x + y * y) * (sigma_x2 + sigma_y2);
  if (alpha != 0) return alpha / (beta + eps);
  if (alpha == 0 && beta == 0) return 1.0;
  return 0.0;
}

double s_region(const Grid& pred, const Grid& gt) {
  const int rows = gt.rows, cols = gt.cols;
  double total = 0, sx = 0, sy = 0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      total += gt(r, c);
      sx += gt(r, c) * (c + 1);
      sy += gt(r, c) * (r + 1);
    }
  }
  int X, Y;
  if (total == 0) {
    X = static_cast<int>(matlab_round(cols / 2.0));
    Y = static_cast<int>(matlab_round(rows / 2.0));
  } else {
    X = static_cast<int>(matlab_round(sx / total));
    Y = static_cast<int>(matlab_round(sy / total));
  }
  const double area = double(cols) * rows;
  const double w1 = double(X) * Y / area;
  const double w2 = double(cols - X) * Y / area;
  const double w3 = double(X) * (rows - Y) / area;
  const double w4 = 1.0 - w1 - w2 - w3;
  const double q1 = ssim(crop(pred, 1, Y, 1, X), crop(gt, 1, Y, 1, X));
  const double q2 = ssim(crop(pred, 1, Y, X + 1, cols), crop(gt, 1, Y, X + 1, cols));
  const double q3 = ssim(crop(pred, Y + 1, rows, 1, X), crop(gt, Y + 1, rows, 1, X));
  const double q4 = ssim(crop(pred, Y + 1, rows, X + 1, cols), crop(gt, Y + 1, rows, X + 1, cols));
  return w1 * q1 + w2 * q2 + w3 * q3 + w4 * q4;
}

}  // namespace

double s_measure(const Grid& pred, const Grid& gt, double alpha) {
  const double y = mean2(gt.v);
  if (y == 0) return 1.0 - mean2(pred.v);
  if (y == 1) return mean2(pred.v);
  double q = alpha * s_object(pred, gt) + (1 - alpha) * s_region(pred, gt);
  if (q < 0) q = 0;
  return q;
}

double e_measure_reference(const Grid& fm, const Grid& gt) {
  const int n = gt.rows * gt.cols;
  double sum_gt = 0, sum_not_gt = 0;
  for (int i = 0; i < n; ++i) {
    sum_gt += gt.v[i];
    sum_not_gt += 1 - gt.v[i];
  }
  std::vector<double> enhanced(n);
  if (sum_gt == 0) {
    for (int i = 0; i < n; ++i) enhanced[i] = 1.0 - fm.v[i];
  } else if (sum_not_gt == 0) {
    for (int i = 0; i < n; ++i) enhanced[i] = fm.v[i];
  } else {
    const double mu_fm = mean2(fm.v);
    const double mu_gt = mean2(gt.v);
    for (int i = 0; i < n; ++i) {
      const double align_fm = fm.v[i] - mu_fm;
      const double align_gt = gt.v[i] - mu_gt;
      const double align = 2. * (align_gt * align_fm) / (align_gt * align_gt + align_fm * align_fm + eps);
      enhanced[i] = ((align + 1) * (align + 1)) / 4;
    }
  }
  double s = 0;
  for (double v : enhanced) s += v;
  return s / (n - 1 + eps);
}

double e_measure_max(const Grid& s, const Grid& g) {
  const double n = s.rows * s.cols;
  double best = -1;
  for (int k = 0; k <= 255; ++k) {
    const double t = k / 255.0;
    Grid fm(s.rows, s.cols);
    for (std::size_t i = 0; i < s.v.size(); ++i) fm.v[i] = s.v[i] >= t ? 1.0 : 0.0;
    best = std::max(best, e_measure_reference(fm, g) * (n - 1 + eps) / n);
  }
  return best;
}

double bce(const std::vector<double>& p, const std::vector<double>& t, const std::vector<std::uint8_t>& ignore) {
  double s = 0, n = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!ignore.empty() && ignore[i]) continue;
    const double q = clampp(p[i]);
    s += -(t[i] * std::log(q) + (1 - t[i]) * std::log(1 - q));
    n += 1;
  }
  return s / n;
}

double dice_loss(const std::vector<double>& p, const std::vector<double>& t, const std::vector<std::uint8_t>& ignore) {
  double inter = 0, sp = 0, st = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!ignore.empty() && ignore[i]) continue;
    const double q = clampp(p[i]);
    inter += q * t[i];
    sp += q;
    st += t[i];
  }
  return 1 - 2 * inter / (sp + st + 1e-7);
}

double wce(const std::vector<double>& p, const std::vector<double>& t, const std::vector<std::uint8_t>& ignore) {
  double npos = 0, nneg = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!ignore.empty() && ignore[i]) continue;
    (t[i] > 0.5 ? npos : nneg) += 1;
  }
  const double n = npos + nneg;
  double wp = nneg / n, wn = npos / n;
  if (npos == 0 || nneg == 0) wp = wn = 1;
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!ignore.empty() && ignore[i]) continue;
    const double q = clampp(p[i]);
    s += -(wp * t[i] * std::log(q) + wn * (1 - t[i]) * std::log(1 - q));
  }
  return s / n;
}

}  // namespace yoho::oracle
