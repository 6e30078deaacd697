#pragma once

#include <cstdint>
#include <random>

#include <opencv2/core.hpp>

#include "oracles.hpp"
#include "yoho/image.hpp"

namespace yoho::testing {

inline oracle::Grid to_grid(const cv::Mat& m) {
  cv::Mat d;
  m.convertTo(d, CV_64F);
  oracle::Grid g(d.rows, d.cols);
  for (int r = 0; r < d.rows; ++r)
    for (int c = 0; c < d.cols; ++c) g(r, c) = d.at<double>(r, c);
  return g;
}

/// Random blob-ish binary mask: a few random rectangles and discs.
inline BinaryMask random_mask(std::mt19937_64& rng, int rows, int cols, bool allow_empty = false) {
  std::uniform_int_distribution<int> count(allow_empty ? 0 : 1, 4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  BinaryMask m(rows, cols, CV_8UC1, cv::Scalar(0));
  const int n = count(rng);
  for (int k = 0; k < n; ++k) {
    const int cx = static_cast<int>(u(rng) * cols);
    const int cy = static_cast<int>(u(rng) * rows);
    const int rr = 1 + static_cast<int>(u(rng) * rows / 4.0);
    const bool disc = u(rng) < 0.5;
    for (int y = 0; y < rows; ++y)
      for (int x = 0; x < cols; ++x) {
        const bool in = disc ? (x - cx) * (x - cx) + (y - cy) * (y - cy) <= rr * rr
                             : std::abs(x - cx) <= rr && std::abs(y - cy) <= rr / 2 + 1;
        if (in) m.at<std::uint8_t>(y, x) = 1;
      }
  }
  return m;
}

/// Soft map correlated with `g`: blurred-ish truth plus uniform noise, and
/// some pixels quantised to the 8-bit grid.
inline cv::Mat random_soft_map(std::mt19937_64& rng, const BinaryMask& g) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  cv::Mat s(g.rows, g.cols, CV_64FC1);
  const double mix = u(rng);
  for (int y = 0; y < g.rows; ++y)
    for (int x = 0; x < g.cols; ++x) {
      double v = mix * g.at<std::uint8_t>(y, x) + (1 - mix) * u(rng);
      if (u(rng) < 0.3) v = std::round(v * 255.0) / 255.0;
      s.at<double>(y, x) = v;
    }
  return s;
}

}  // namespace yoho::testing
