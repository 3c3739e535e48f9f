#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace lowlight {

/// Cache-line aligned storage. Vectorized reductions pick their split point
/// from the buffer address, so a fixed alignment keeps results reproducible
/// across runs and resumes.
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

/// Dense row-major float tensor. Images and feature maps use the planar
/// channel-height-width layout (rank 3); convolution weights are rank 4.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, float fill = 0.0f);
  Tensor(std::vector<int> shape, std::vector<float> values);

  static Tensor chw(int channels, int height, int width, float fill = 0.0f) {
    return Tensor({channels, height, width}, fill);
  }

  const std::vector<int>& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Rank-3 accessors.
  int channels() const { return dim(0); }
  int height() const { return dim(1); }
  int width() const { return dim(2); }
  std::size_t plane() const { return static_cast<std::size_t>(height()) * width(); }

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  const float& operator[](std::size_t i) const { return data_[i]; }

  float& at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  const float& at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  bool operator==(const Tensor& other) const = default;

  void fill(float v);
  /// Copy of one channel as a 1×H×W tensor.
  Tensor channel(int c) const;
  Tensor reshaped(std::vector<int> shape) const;

  float min() const;
  float max() const;
  double mean() const;
  bool all_finite() const;

 private:
  std::vector<int> shape_;
  std::vector<float, AlignedAllocator<float>> data_;
};

std::string shape_string(const std::vector<int>& shape);

/// Throws ShapeError unless both tensors share a shape.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

/// Elementwise clamp to [lo, hi].
Tensor clamped(const Tensor& t, float lo = 0.0f, float hi = 1.0f);

}  // namespace lowlight
