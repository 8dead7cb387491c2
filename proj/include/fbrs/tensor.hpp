#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fbrs {

/// Raised when a caller violates an operation's input contract
/// (shape mismatch, out-of-range click, non-finite parameters, ...).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a requested operation is not supported by the configuration.
class CapabilityError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// 64-byte aligned storage. Vectorized kernels pick code paths by pointer
/// alignment, so unaligned buffers would make results depend on the heap.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

/// Dense channel-major (C x H x W) array.
template <typename T>
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T, AlignedAllocator<T>> data;

  Tensor() = default;
  Tensor(int c, int h, int w, T fill = T{})
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  bool empty() const { return data.empty(); }

  T& operator()(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  const T& operator()(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  std::span<T> plane(int c) {
    return {data.data() + static_cast<std::size_t>(c) * plane_size(), plane_size()};
  }
  std::span<const T> plane(int c) const {
    return {data.data() + static_cast<std::size_t>(c) * plane_size(), plane_size()};
  }

  bool same_shape(const Tensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  Tensor<To> out;
  out.channels = t.channels;
  out.height = t.height;
  out.width = t.width;
  out.data.assign(t.data.begin(), t.data.end());
  return out;
}

/// Row-major H x W binary mask, one byte per pixel (0 or 1).
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  BinaryMask() = default;
  BinaryMask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& operator()(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t operator()(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data) n += v != 0;
    return n;
  }
  bool any() const { return count() > 0; }
  bool same_shape(const BinaryMask& o) const { return height == o.height && width == o.width; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// RGB image with values in [0,1].
struct ImageTensor {
  Tensor<float> data;

  ImageTensor() = default;
  explicit ImageTensor(Tensor<float> t);

  int height() const { return data.height; }
  int width() const { return data.width; }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;
};

/// Throws ContractError unless the image is 3 x H x W with H, W >= 32,
/// finite and in [0,1].
void validate_image(const Tensor<float>& t);

inline ImageTensor::ImageTensor(Tensor<float> t) : data(std::move(t)) { validate_image(data); }

/// Per-label Euclidean distance to the nearest click, clamped at `truncation`.
struct DistanceMaps {
  Tensor<float> pos;  // 1 x H x W
  Tensor<float> neg;  // 1 x H x W
  float truncation = 255.0f;

  int height() const { return pos.height; }
  int width() const { return pos.width; }

  friend bool operator==(const DistanceMaps&, const DistanceMaps&) = default;
};

/// Pre-sigmoid single-channel score map.
struct Logits {
  Tensor<float> data;  // 1 x H x W

  int height() const { return data.height; }
  int width() const { return data.width; }
  Tensor<float> prob() const;
  BinaryMask mask(float threshold = 0.5f) const;

  friend bool operator==(const Logits&, const Logits&) = default;
};

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace fbrs
