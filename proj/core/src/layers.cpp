#include "yoho/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include <Eigen/Core>

#include "yoho/error.hpp"

namespace yoho::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

int conv_out(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

void im2col(const Tensor& x, int k, int s, int p, int ho, int wo, float* col) {
  const int channels = x.channels();
  const int batch = x.batch();
  const int h = x.height();
  const int w = x.width();
  const std::size_t cols = static_cast<std::size_t>(batch) * ho * wo;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* dst = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * cols;
        // Valid output columns for this kernel tap: 0 <= ox*s - p + kx < w.
        const int ox_lo = std::max(0, floor_div(p - kx + s - 1, s));
        const int ox_hi = std::min(wo, floor_div(w - 1 + p - kx, s) + 1);
        for (int n = 0; n < batch; ++n) {
          const float* src = x.image(c, n);
          for (int oy = 0; oy < ho; ++oy) {
            float* d = dst + (static_cast<std::size_t>(n) * ho + oy) * wo;
            const int iy = oy * s - p + ky;
            if (iy < 0 || iy >= h || ox_lo >= ox_hi) {
              std::memset(d, 0, sizeof(float) * static_cast<std::size_t>(wo));
              continue;
            }
            const float* srow = src + static_cast<std::size_t>(iy) * w;
            for (int ox = 0; ox < ox_lo; ++ox) d[ox] = 0.0f;
            if (s == 1) {
              std::memcpy(d + ox_lo, srow + (ox_lo - p + kx), sizeof(float) * static_cast<std::size_t>(ox_hi - ox_lo));
            } else {
              for (int ox = ox_lo; ox < ox_hi; ++ox) d[ox] = srow[ox * s - p + kx];
            }
            for (int ox = ox_hi; ox < wo; ++ox) d[ox] = 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const float* col, int k, int s, int p, int ho, int wo, Tensor& dx) {
  const int channels = dx.channels();
  const int batch = dx.batch();
  const int h = dx.height();
  const int w = dx.width();
  const std::size_t cols = static_cast<std::size_t>(batch) * ho * wo;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* src = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * cols;
        const int ox_lo = std::max(0, floor_div(p - kx + s - 1, s));
        const int ox_hi = std::min(wo, floor_div(w - 1 + p - kx, s) + 1);
        for (int n = 0; n < batch; ++n) {
          float* dst = dx.image(c, n);
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * s - p + ky;
            if (iy < 0 || iy >= h) continue;
            const float* srow = src + (static_cast<std::size_t>(n) * ho + oy) * wo;
            float* drow = dst + static_cast<std::size_t>(iy) * w;
            for (int ox = ox_lo; ox < ox_hi; ++ox) drow[ox * s - p + kx] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor concat_channels(std::initializer_list<const Tensor*> parts) {
  int channels = 0;
  const Tensor* first = *parts.begin();
  for (const Tensor* t : parts) {
    if (t->batch() != first->batch() || t->height() != first->height() || t->width() != first->width()) {
      throw Error(ErrorCode::ShapeError, "concat_channels: spatial/batch mismatch");
    }
    channels += t->channels();
  }
  Tensor out(channels, first->batch(), first->height(), first->width());
  float* dst = out.data();
  for (const Tensor* t : parts) {
    std::copy(t->data(), t->data() + t->size(), dst);
    dst += t->size();
  }
  return out;
}

Tensor slice_channels(const Tensor& t, int first, int count) {
  Tensor out(count, t.batch(), t.height(), t.width());
  std::copy(t.channel(first), t.channel(first) + out.size(), out.data());
  return out;
}

// ---------------------------------------------------------------------------

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias)
    : weight(out_channels, 1, 1, in_channels * kernel * kernel),
      weight_grad(out_channels, 1, 1, in_channels * kernel * kernel),
      cin_(in_channels),
      cout_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(padding),
      has_bias_(bias) {
  if (bias) {
    this->bias = Tensor(out_channels, 1, 1, 1);
    bias_grad = Tensor(out_channels, 1, 1, 1);
  }
}

void Conv2d::init(Rng& rng, float gain) {
  const float fan_in = static_cast<float>(cin_ * k_ * k_);
  std::normal_distribution<float> dist(0.0f, std::sqrt(gain / fan_in));
  for (float& v : weight.span()) v = dist(rng);
  if (has_bias_) bias.fill(0.0f);
}

Tensor Conv2d::forward(const Tensor& x) {
  if (x.channels() != cin_) {
    throw Error(ErrorCode::ShapeError, "conv expects " + std::to_string(cin_) + " channels, got " + std::to_string(x.channels()));
  }
  const int ho = conv_out(x.height(), k_, stride_, pad_);
  const int wo = conv_out(x.width(), k_, stride_, pad_);
  input_ = x;
  Tensor y(cout_, x.batch(), ho, wo);
  const auto cols = static_cast<Eigen::Index>(y.plane());
  const Eigen::Index rows = static_cast<Eigen::Index>(cin_) * k_ * k_;
  ConstMapMat w(weight.data(), cout_, rows);
  MapMat out(y.data(), cout_, cols);
  if (k_ == 1 && stride_ == 1 && pad_ == 0) {
    out.noalias() = w * ConstMapMat(x.data(), rows, cols);
  } else {
    FloatBuffer col(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
    im2col(x, k_, stride_, pad_, ho, wo, col.data());
    out.noalias() = w * ConstMapMat(col.data(), rows, cols);
  }
  if (has_bias_) {
    for (int c = 0; c < cout_; ++c) out.row(c).array() += bias.data()[c];
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& dy, bool need_input_grad) {
  const Tensor& x = input_;
  const int ho = dy.height();
  const int wo = dy.width();
  const auto cols = static_cast<Eigen::Index>(dy.plane());
  const Eigen::Index rows = static_cast<Eigen::Index>(cin_) * k_ * k_;
  ConstMapMat g(dy.data(), cout_, cols);
  MapMat dw(weight_grad.data(), cout_, rows);
  ConstMapMat w(weight.data(), cout_, rows);

  if (has_bias_) {
    for (int c = 0; c < cout_; ++c) bias_grad.data()[c] += g.row(c).sum();
  }

  Tensor dx;
  if (k_ == 1 && stride_ == 1 && pad_ == 0) {
    ConstMapMat col(x.data(), rows, cols);
    dw.noalias() += g * col.transpose();
    if (need_input_grad) {
      dx = Tensor::like(x);
      MapMat(dx.data(), rows, cols).noalias() = w.transpose() * g;
    }
    return dx;
  }

  FloatBuffer col(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
  im2col(x, k_, stride_, pad_, ho, wo, col.data());
  dw.noalias() += g * ConstMapMat(col.data(), rows, cols).transpose();
  if (need_input_grad) {
    MapMat(col.data(), rows, cols).noalias() = w.transpose() * g;
    dx = Tensor::like(x);
    col2im(col.data(), k_, stride_, pad_, ho, wo, dx);
  }
  return dx;
}

void Conv2d::register_params(const std::string& prefix, ParamGroup group, ParamList& out) {
  out.push_back({prefix + ".weight", &weight, &weight_grad, group});
  if (has_bias_) out.push_back({prefix + ".bias", &bias, &bias_grad, group});
}

// ---------------------------------------------------------------------------

BatchNorm2d::BatchNorm2d(int channels, float momentum, float eps)
    : gamma(channels, 1, 1, 1, 1.0f),
      gamma_grad(channels, 1, 1, 1),
      beta(channels, 1, 1, 1),
      beta_grad(channels, 1, 1, 1),
      running_mean(channels, 1, 1, 1),
      running_var(channels, 1, 1, 1, 1.0f),
      c_(channels),
      momentum_(momentum),
      eps_(eps) {}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  if (x.channels() != c_) throw Error(ErrorCode::ShapeError, "batch norm channel mismatch");
  last_training_ = training;
  Tensor y = Tensor::like(x);
  xhat_ = Tensor::like(x);
  inv_std_.assign(static_cast<std::size_t>(c_), 0.0f);
  const std::size_t m = x.plane();
  for (int c = 0; c < c_; ++c) {
    const float* in = x.channel(c);
    float mean = 0.0f;
    float var = 0.0f;
    if (training) {
      double sum = 0.0;
      for (std::size_t i = 0; i < m; ++i) sum += in[i];
      const double mu = sum / static_cast<double>(m);
      double sq = 0.0;
      for (std::size_t i = 0; i < m; ++i) sq += (in[i] - mu) * (in[i] - mu);
      const double biased = sq / static_cast<double>(m);
      mean = static_cast<float>(mu);
      var = static_cast<float>(biased);
      const double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : biased;
      running_mean.data()[c] = (1.0f - momentum_) * running_mean.data()[c] + momentum_ * mean;
      running_var.data()[c] = (1.0f - momentum_) * running_var.data()[c] + momentum_ * static_cast<float>(unbiased);
    } else {
      mean = running_mean.data()[c];
      var = running_var.data()[c];
    }
    const float inv = 1.0f / std::sqrt(var + eps_);
    inv_std_[static_cast<std::size_t>(c)] = inv;
    const float g = gamma.data()[c];
    const float b = beta.data()[c];
    float* xh = xhat_.channel(c);
    float* out = y.channel(c);
    for (std::size_t i = 0; i < m; ++i) {
      xh[i] = (in[i] - mean) * inv;
      out[i] = g * xh[i] + b;
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
  Tensor dx = Tensor::like(dy);
  const std::size_t m = dy.plane();
  for (int c = 0; c < c_; ++c) {
    const float* g = dy.channel(c);
    const float* xh = xhat_.channel(c);
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      sum_g += g[i];
      sum_gx += static_cast<double>(g[i]) * xh[i];
    }
    gamma_grad.data()[c] += static_cast<float>(sum_gx);
    beta_grad.data()[c] += static_cast<float>(sum_g);
    const float scale = gamma.data()[c] * inv_std_[static_cast<std::size_t>(c)];
    float* out = dx.channel(c);
    if (last_training_) {
      const auto mean_g = static_cast<float>(sum_g / static_cast<double>(m));
      const auto mean_gx = static_cast<float>(sum_gx / static_cast<double>(m));
      for (std::size_t i = 0; i < m; ++i) out[i] = scale * (g[i] - mean_g - xh[i] * mean_gx);
    } else {
      for (std::size_t i = 0; i < m; ++i) out[i] = scale * g[i];
    }
  }
  return dx;
}

void BatchNorm2d::register_params(const std::string& prefix, ParamGroup group, ParamList& out) {
  out.push_back({prefix + ".weight", &gamma, &gamma_grad, group});
  out.push_back({prefix + ".bias", &beta, &beta_grad, group});
  out.push_back({prefix + ".running_mean", &running_mean, nullptr, group});
  out.push_back({prefix + ".running_var", &running_var, nullptr, group});
}

// ---------------------------------------------------------------------------

Tensor MaxPool3x3s2::forward(const Tensor& x) {
  in_h_ = x.height();
  in_w_ = x.width();
  const int ho = (in_h_ - 1) / 2 + 1;
  const int wo = (in_w_ - 1) / 2 + 1;
  Tensor y(x.channels(), x.batch(), ho, wo);
  argmax_.assign(y.size(), 0);
  std::size_t o = 0;
  for (int c = 0; c < x.channels(); ++c) {
    for (int n = 0; n < x.batch(); ++n) {
      const float* src = x.image(c, n);
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox, ++o) {
          float best = -std::numeric_limits<float>::infinity();
          int arg = 0;
          for (int ky = -1; ky <= 1; ++ky) {
            const int iy = oy * 2 + ky;
            if (iy < 0 || iy >= in_h_) continue;
            for (int kx = -1; kx <= 1; ++kx) {
              const int ix = ox * 2 + kx;
              if (ix < 0 || ix >= in_w_) continue;
              const float v = src[iy * in_w_ + ix];
              if (v > best) {
                best = v;
                arg = iy * in_w_ + ix;
              }
            }
          }
          y.data()[o] = best;
          argmax_[o] = arg;
        }
      }
    }
  }
  return y;
}

Tensor MaxPool3x3s2::backward(const Tensor& dy) {
  Tensor dx(dy.channels(), dy.batch(), in_h_, in_w_);
  const std::size_t per = dy.image_plane();
  std::size_t o = 0;
  for (int c = 0; c < dy.channels(); ++c) {
    for (int n = 0; n < dy.batch(); ++n) {
      float* dst = dx.image(c, n);
      for (std::size_t i = 0; i < per; ++i, ++o) dst[argmax_[o]] += dy.data()[o];
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

void relu_inplace(Tensor& x) {
  for (float& v : x.span()) v = v < 0.0f ? 0.0f : v;
}

void relu_backward_inplace(Tensor& dy, const Tensor& y) {
  float* g = dy.data();
  const float* out = y.data();
  for (std::size_t i = 0; i < dy.size(); ++i) {
    if (!(out[i] > 0.0f)) g[i] = 0.0f;
  }
}

Tensor sigmoid(const Tensor& logits) {
  Tensor y = Tensor::like(logits);
  const float* z = logits.data();
  float* out = y.data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (z[i] >= 0) {
      out[i] = 1.0f / (1.0f + std::exp(-z[i]));
    } else {
      const float e = std::exp(z[i]);
      out[i] = e / (1.0f + e);
    }
  }
  return y;
}

Tensor sigmoid_backward(const Tensor& dy, const Tensor& logits) {
  Tensor dz = Tensor::like(dy);
  const float* z = logits.data();
  for (std::size_t i = 0; i < dz.size(); ++i) {
    const float e = std::exp(-std::abs(z[i]));
    const float denom = 1.0f + e;
    dz.data()[i] = dy.data()[i] * e / (denom * denom);
  }
  return dz;
}

Tensor upsample_nearest2x(const Tensor& x) {
  Tensor y(x.channels(), x.batch(), x.height() * 2, x.width() * 2);
  const int w = x.width();
  const int wo = y.width();
  for (int c = 0; c < x.channels(); ++c) {
    for (int n = 0; n < x.batch(); ++n) {
      const float* src = x.image(c, n);
      float* dst = y.image(c, n);
      for (int oy = 0; oy < y.height(); ++oy) {
        const float* srow = src + static_cast<std::size_t>(oy / 2) * w;
        float* drow = dst + static_cast<std::size_t>(oy) * wo;
        for (int ox = 0; ox < wo; ++ox) drow[ox] = srow[ox / 2];
      }
    }
  }
  return y;
}

Tensor upsample_nearest2x_backward(const Tensor& dy) {
  Tensor dx(dy.channels(), dy.batch(), dy.height() / 2, dy.width() / 2);
  const int w = dx.width();
  const int wo = dy.width();
  for (int c = 0; c < dy.channels(); ++c) {
    for (int n = 0; n < dy.batch(); ++n) {
      const float* src = dy.image(c, n);
      float* dst = dx.image(c, n);
      for (int oy = 0; oy < dy.height(); ++oy) {
        const float* srow = src + static_cast<std::size_t>(oy) * wo;
        float* drow = dst + static_cast<std::size_t>(oy / 2) * w;
        for (int ox = 0; ox < wo; ++ox) drow[ox / 2] += srow[ox];
      }
    }
  }
  return dx;
}

namespace {

struct Axis {
  std::vector<int> lo, hi;
  std::vector<float> frac;
};

Axis bilinear_axis(int in, int out) {
  Axis a;
  a.lo.resize(static_cast<std::size_t>(out));
  a.hi.resize(static_cast<std::size_t>(out));
  a.frac.resize(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double src = std::max(0.0, (o + 0.5) * scale - 0.5);
    const int i0 = std::min(static_cast<int>(src), in - 1);
    a.lo[static_cast<std::size_t>(o)] = i0;
    a.hi[static_cast<std::size_t>(o)] = std::min(i0 + 1, in - 1);
    a.frac[static_cast<std::size_t>(o)] = static_cast<float>(src - i0);
  }
  return a;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
  const Axis ay = bilinear_axis(x.height(), out_h);
  const Axis ax = bilinear_axis(x.width(), out_w);
  Tensor y(x.channels(), x.batch(), out_h, out_w);
  const int w = x.width();
  for (int c = 0; c < x.channels(); ++c) {
    for (int n = 0; n < x.batch(); ++n) {
      const float* src = x.image(c, n);
      float* dst = y.image(c, n);
      for (int oy = 0; oy < out_h; ++oy) {
        const float* r0 = src + static_cast<std::size_t>(ay.lo[oy]) * w;
        const float* r1 = src + static_cast<std::size_t>(ay.hi[oy]) * w;
        const float fy = ay.frac[oy];
        float* drow = dst + static_cast<std::size_t>(oy) * out_w;
        for (int ox = 0; ox < out_w; ++ox) {
          const float fx = ax.frac[ox];
          const float top = r0[ax.lo[ox]] * (1.0f - fx) + r0[ax.hi[ox]] * fx;
          const float bottom = r1[ax.lo[ox]] * (1.0f - fx) + r1[ax.hi[ox]] * fx;
          drow[ox] = top * (1.0f - fy) + bottom * fy;
        }
      }
    }
  }
  return y;
}

Tensor resize_bilinear_backward(const Tensor& dy, int in_h, int in_w) {
  const Axis ay = bilinear_axis(in_h, dy.height());
  const Axis ax = bilinear_axis(in_w, dy.width());
  Tensor dx(dy.channels(), dy.batch(), in_h, in_w);
  const int out_w = dy.width();
  for (int c = 0; c < dy.channels(); ++c) {
    for (int n = 0; n < dy.batch(); ++n) {
      const float* src = dy.image(c, n);
      float* dst = dx.image(c, n);
      for (int oy = 0; oy < dy.height(); ++oy) {
        float* r0 = dst + static_cast<std::size_t>(ay.lo[oy]) * in_w;
        float* r1 = dst + static_cast<std::size_t>(ay.hi[oy]) * in_w;
        const float fy = ay.frac[oy];
        const float* grow = src + static_cast<std::size_t>(oy) * out_w;
        for (int ox = 0; ox < out_w; ++ox) {
          const float g = grow[ox];
          const float fx = ax.frac[ox];
          r0[ax.lo[ox]] += g * (1.0f - fy) * (1.0f - fx);
          r0[ax.hi[ox]] += g * (1.0f - fy) * fx;
          r1[ax.lo[ox]] += g * fy * (1.0f - fx);
          r1[ax.hi[ox]] += g * fy * fx;
        }
      }
    }
  }
  return dx;
}

}  // namespace yoho::nn
