#pragma once

// Independent reference implementations used to check the library. They are
// deliberately literal: per-pixel loops over plain vectors, following the
// published MATLAB constructions step by step.

#include <cstdint>
#include <vector>

namespace yoho::oracle {

/// Row-major grid of doubles.
struct Grid {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Grid() = default;
  Grid(int r, int c, double fill = 0.0) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, fill) {}
  double& operator()(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
};

struct Region {
  double dice, iou, recall, precision;
};

Region region(const Grid& p, const Grid& g);
double mae(const Grid& s, const Grid& g);
double wfm(const Grid& s, const Grid& g, double beta2 = 1.0);
double s_measure(const Grid& s, const Grid& g, double alpha = 0.5);
/// Enhanced-alignment score of binary fm against gt exactly as released
/// (normalised by w*h - 1 + eps).
double e_measure_reference(const Grid& fm, const Grid& gt);
/// Max over thresholds k/255 of the reference score rescaled to a mean over
/// N pixels.
double e_measure_max(const Grid& s, const Grid& g);

// Loss oracles over flat vectors; ignore[i] != 0 excludes pixel i.
double bce(const std::vector<double>& p, const std::vector<double>& t, const std::vector<std::uint8_t>& ignore);
double dice_loss(const std::vector<double>& p, const std::vector<double>& t, const std::vector<std::uint8_t>& ignore);
double wce(const std::vector<double>& p, const std::vector<double>& t, const std::vector<std::uint8_t>& ignore);

}  // namespace yoho::oracle
