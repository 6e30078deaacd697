#pragma once

#include <cassert>
#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <vector>

namespace yoho::nn {

/// Allocator with a fixed 64-byte alignment.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

/// Dense float activations stored channel-major: [C][N][H][W]. Keeping each
/// channel's batch contiguous turns convolutions into one GEMM per layer and
/// makes channel concatenation a plain append.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int channels, int batch, int height, int width, float fill = 0.0f)
      : c_(channels), n_(batch), h_(height), w_(width),
        data_(static_cast<std::size_t>(channels) * batch * height * width, fill) {}

  static Tensor like(const Tensor& t, float fill = 0.0f) { return Tensor(t.c_, t.n_, t.h_, t.w_, fill); }

  int channels() const { return c_; }
  int batch() const { return n_; }
  int height() const { return h_; }
  int width() const { return w_; }
  bool empty() const { return data_.empty(); }
  std::size_t size() const { return data_.size(); }
  /// Elements per channel (N*H*W).
  std::size_t plane() const { return static_cast<std::size_t>(n_) * h_ * w_; }
  std::size_t image_plane() const { return static_cast<std::size_t>(h_) * w_; }

  bool same_shape(const Tensor& o) const { return c_ == o.c_ && n_ == o.n_ && h_ == o.h_ && w_ == o.w_; }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> span() { return data_; }
  std::span<const float> span() const { return data_; }

  float* channel(int c) { return data_.data() + static_cast<std::size_t>(c) * plane(); }
  const float* channel(int c) const { return data_.data() + static_cast<std::size_t>(c) * plane(); }

  float* image(int c, int n) { return channel(c) + static_cast<std::size_t>(n) * image_plane(); }
  const float* image(int c, int n) const { return channel(c) + static_cast<std::size_t>(n) * image_plane(); }

  float& at(int c, int n, int y, int x) { return image(c, n)[static_cast<std::size_t>(y) * w_ + x]; }
  float at(int c, int n, int y, int x) const { return image(c, n)[static_cast<std::size_t>(y) * w_ + x]; }

  void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    assert(same_shape(o));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.same_shape(b) && a.data_ == b.data_; }

 private:
  int c_ = 0;
  int n_ = 0;
  int h_ = 0;
  int w_ = 0;
  FloatBuffer data_;
};

/// Stacks tensors along the channel axis; all must share N, H, W.
Tensor concat_channels(std::initializer_list<const Tensor*> parts);

/// Copies channels [first, first + count) into a new tensor.
Tensor slice_channels(const Tensor& t, int first, int count);

}  // namespace yoho::nn
