#include "yoho/losses.hpp"

#include <cmath>

namespace yoho::loss {

void validate(const LossWeights& w) {
  for (double v : {w.mu1, w.mu2, w.lambda1, w.lambda2, w.lambda3}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorCode::InvalidConfig, "loss weights must be finite and nonnegative");
  }
  if (!(w.lambda1 > 0.0)) throw Error(ErrorCode::InvalidConfig, "lambda1 must be positive");
  if (!(w.tau > 0.0 && w.tau < 1.0)) throw Error(ErrorCode::InvalidConfig, "tau must lie in (0,1)");
}

LossBreakdown total_loss(const nn::ModelOutputs& out, const nn::Tensor& s, const nn::Tensor& e,
                         std::span<const std::uint8_t> ignore, const LossWeights& w, nn::OutputGrads* grads) {
  if (!out.s_hat.same_shape(s) || !out.e_hat.same_shape(e) || !out.e_hat_prime.same_shape(s) || s.channels() != 1) {
    throw Error(ErrorCode::ShapeError, "loss targets must match the (1,N,H,W) outputs");
  }
  if (!ignore.empty() && ignore.size() != s.size()) throw Error(ErrorCode::ShapeError, "ignore mask size mismatch");
  const int batch = s.batch();
  const std::size_t plane = s.image_plane();
  if (grads) {
    grads->d_s_hat = nn::Tensor::like(out.s_hat);
    grads->d_e_hat = nn::Tensor::like(out.e_hat);
    grads->d_e_hat_prime = nn::Tensor::like(out.e_hat_prime);
  }
  const double scale = 1.0 / batch;
  LossBreakdown mean;
  for (int n = 0; n < batch; ++n) {
    auto view = [&](const nn::Tensor& t) { return std::span<const float>(t.image(0, n), plane); };
    auto gview = [&](nn::Tensor& t) { return std::span<float>(t.image(0, n), plane); };
    const auto ign = ignore.empty() ? std::span<const std::uint8_t>() : ignore.subspan(static_cast<std::size_t>(n) * plane, plane);
    ImageGrads<float> g;
    if (grads) g = {gview(grads->d_s_hat), gview(grads->d_e_hat), gview(grads->d_e_hat_prime)};
    const LossBreakdown b =
        total_loss_image<float>(view(out.s_hat), view(out.e_hat), view(out.e_hat_prime), view(s), view(e), ign, w, g, scale);
    mean.seg += b.seg * scale;
    mean.edge += b.edge * scale;
    mean.consist += b.consist * scale;
    mean.edge_fallback = mean.edge_fallback || b.edge_fallback;
    mean.consist_fallback = mean.consist_fallback || b.consist_fallback;
  }
  mean.total = w.lambda1 * mean.seg + w.lambda2 * mean.edge + w.lambda3 * mean.consist;
  return mean;
}

}  // namespace yoho::loss
