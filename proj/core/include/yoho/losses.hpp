#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <vector>

#include "yoho/error.hpp"
#include "yoho/eunet.hpp"

namespace yoho::loss {

/// Weights of the three loss terms plus the binarisation threshold used to
/// turn the fused edge map into the consistency target.
struct LossWeights {
  double mu1 = 1.0;      // BCE share of the segmentation loss
  double mu2 = 1.0;      // Dice share of the segmentation loss
  double lambda1 = 1.0;  // segmentation
  double lambda2 = 1.0;  // edge
  double lambda3 = 0.5;  // edge consistency
  double tau = 0.5;

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

void validate(const LossWeights& w);

inline constexpr double kProbEps = 1e-7;

struct LossBreakdown {
  double seg = 0.0;
  double edge = 0.0;
  double consist = 0.0;
  double total = 0.0;
  /// Set when a weighted-cross-entropy target had a single class and the
  /// unweighted fallback was used.
  bool edge_fallback = false;
  bool consist_fallback = false;
};

/// Class weights of the balanced cross entropy over non-ignored pixels.
struct EdgeWeights {
  double w_pos = 0.0;  // |Y-| / |Y|
  double w_neg = 0.0;  // |Y+| / |Y|
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  bool degenerate = false;  // target is single-class: unweighted fallback
};

// Per-image kernels. `ignore` is empty or holds one byte per pixel (nonzero =
// excluded). When `grad` is non-empty, scale * dL/d(prediction) is added to
// it; the probability clamp passes gradients straight through.

namespace detail {

template <std::floating_point T>
T clamp_prob(T p) {
  return std::clamp(p, static_cast<T>(kProbEps), static_cast<T>(1.0 - kProbEps));
}

inline bool kept(std::span<const std::uint8_t> ignore, std::size_t i) { return ignore.empty() || ignore[i] == 0; }

template <std::floating_point T>
std::size_t count_kept(std::size_t n, std::span<const std::uint8_t> ignore) {
  if (ignore.empty()) return n;
  return static_cast<std::size_t>(std::count(ignore.begin(), ignore.end(), std::uint8_t{0}));
}

template <std::floating_point T>
void check_sizes(std::span<const T> a, std::span<const T> b, std::span<const std::uint8_t> ignore, std::span<T> grad) {
  if (a.size() != b.size() || (!ignore.empty() && ignore.size() != a.size()) || (!grad.empty() && grad.size() != a.size())) {
    throw Error(ErrorCode::ShapeError, "loss inputs differ in size");
  }
}

}  // namespace detail

template <std::floating_point T>
double bce_loss(std::span<const T> pred, std::span<const T> target, std::span<const std::uint8_t> ignore,
                std::span<T> grad = {}, double scale = 1.0) {
  detail::check_sizes(pred, target, ignore, grad);
  const std::size_t kept = detail::count_kept<T>(pred.size(), ignore);
  if (kept == 0) throw Error(ErrorCode::AllIgnored, "every pixel is ignored");
  const double inv = 1.0 / static_cast<double>(kept);
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!detail::kept(ignore, i)) continue;
    const double p = detail::clamp_prob(pred[i]);
    const double t = target[i];
    sum -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    if (!grad.empty()) grad[i] += static_cast<T>(scale * inv * (-(t / p) + (1.0 - t) / (1.0 - p)));
  }
  return sum * inv;
}

template <std::floating_point T>
double dice_loss(std::span<const T> pred, std::span<const T> target, std::span<const std::uint8_t> ignore,
                 std::span<T> grad = {}, double scale = 1.0) {
  detail::check_sizes(pred, target, ignore, grad);
  if (detail::count_kept<T>(pred.size(), ignore) == 0) throw Error(ErrorCode::AllIgnored, "every pixel is ignored");
  double inter = 0.0;
  double denom = kProbEps;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!detail::kept(ignore, i)) continue;
    const double p = detail::clamp_prob(pred[i]);
    inter += p * target[i];
    denom += p + target[i];
  }
  if (!grad.empty()) {
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (!detail::kept(ignore, i)) continue;
      const double d = -2.0 * target[i] / denom + 2.0 * inter / (denom * denom);
      grad[i] += static_cast<T>(scale * d);
    }
  }
  return 1.0 - 2.0 * inter / denom;
}

template <std::floating_point T>
double seg_loss(std::span<const T> s_hat, std::span<const T> s, std::span<const std::uint8_t> ignore, double mu1,
                double mu2, std::span<T> grad = {}, double scale = 1.0) {
  double total = 0.0;
  // Zero weights skip their term entirely so each component can be isolated.
  if (mu1 != 0.0) total += mu1 * bce_loss(s_hat, s, ignore, grad, scale * mu1);
  if (mu2 != 0.0) total += mu2 * dice_loss(s_hat, s, ignore, grad, scale * mu2);
  if (mu1 == 0.0 && mu2 == 0.0) detail::check_sizes(s_hat, s, ignore, grad);
  return total;
}

template <std::floating_point T>
EdgeWeights edge_class_weights(std::span<const T> target, std::span<const std::uint8_t> ignore) {
  EdgeWeights w;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (!detail::kept(ignore, i)) continue;
    if (target[i] > T(0.5)) {
      ++w.n_pos;
    } else {
      ++w.n_neg;
    }
  }
  const std::size_t total = w.n_pos + w.n_neg;
  if (total == 0) throw Error(ErrorCode::AllIgnored, "every pixel is ignored");
  w.degenerate = w.n_pos == 0 || w.n_neg == 0;
  if (w.degenerate) {
    w.w_pos = w.w_neg = 1.0;
  } else {
    w.w_pos = static_cast<double>(w.n_neg) / static_cast<double>(total);
    w.w_neg = static_cast<double>(w.n_pos) / static_cast<double>(total);
  }
  return w;
}

/// Class-balanced cross entropy; a single-class target falls back to plain
/// BCE and reports it through `fallback`.
template <std::floating_point T>
double edge_loss(std::span<const T> e_hat, std::span<const T> e, std::span<const std::uint8_t> ignore,
                 std::span<T> grad = {}, double scale = 1.0, bool* fallback = nullptr) {
  detail::check_sizes(e_hat, e, ignore, grad);
  const EdgeWeights w = edge_class_weights(e, ignore);
  if (fallback) *fallback = w.degenerate;
  const double inv = 1.0 / static_cast<double>(w.n_pos + w.n_neg);
  double sum = 0.0;
  for (std::size_t i = 0; i < e_hat.size(); ++i) {
    if (!detail::kept(ignore, i)) continue;
    const double p = detail::clamp_prob(e_hat[i]);
    const double t = e[i];
    sum -= w.w_pos * t * std::log(p) + w.w_neg * (1.0 - t) * std::log(1.0 - p);
    if (!grad.empty()) grad[i] += static_cast<T>(scale * inv * (-w.w_pos * t / p + w.w_neg * (1.0 - t) / (1.0 - p)));
  }
  return sum * inv;
}

/// Edge loss of the boundary map against the binarised fused edge map. The
/// binarised target is a constant: no gradient reaches e_hat.
template <std::floating_point T>
double consistency_loss(std::span<const T> e_hat_prime, std::span<const T> e_hat, double tau,
                        std::span<const std::uint8_t> ignore, std::span<T> grad = {}, double scale = 1.0,
                        bool* fallback = nullptr) {
  std::vector<T> target(e_hat.size());
  for (std::size_t i = 0; i < e_hat.size(); ++i) target[i] = e_hat[i] >= static_cast<T>(tau) ? T(1) : T(0);
  return edge_loss<T>(e_hat_prime, target, ignore, grad, scale, fallback);
}

/// Gradient buffers for one image; any may be left empty.
template <std::floating_point T>
struct ImageGrads {
  std::span<T> s_hat;
  std::span<T> e_hat;
  std::span<T> e_hat_prime;
};

template <std::floating_point T>
LossBreakdown total_loss_image(std::span<const T> s_hat, std::span<const T> e_hat, std::span<const T> e_hat_prime,
                               std::span<const T> s, std::span<const T> e, std::span<const std::uint8_t> ignore,
                               const LossWeights& w, ImageGrads<T> grads = {}, double scale = 1.0) {
  LossBreakdown out;
  out.seg = seg_loss<T>(s_hat, s, ignore, w.mu1, w.mu2, grads.s_hat, scale * w.lambda1);
  if (w.lambda2 != 0.0) out.edge = edge_loss<T>(e_hat, e, ignore, grads.e_hat, scale * w.lambda2, &out.edge_fallback);
  if (w.lambda3 != 0.0) {
    out.consist = consistency_loss<T>(e_hat_prime, e_hat, w.tau, ignore, grads.e_hat_prime, scale * w.lambda3,
                                      &out.consist_fallback);
  }
  out.total = w.lambda1 * out.seg + w.lambda2 * out.edge + w.lambda3 * out.consist;
  return out;
}

/// Batch loss: the mean of per-image losses. Targets are (1, N, H, W) tensors
/// of 0/1; `ignore` is empty or one byte per target element. When `grads` is
/// given its three tensors are (re)filled with dL/d(output).
LossBreakdown total_loss(const nn::ModelOutputs& out, const nn::Tensor& s, const nn::Tensor& e,
                         std::span<const std::uint8_t> ignore, const LossWeights& w, nn::OutputGrads* grads = nullptr);

}  // namespace yoho::loss
