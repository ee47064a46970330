#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace ldfuse {

// Channel-major (C, H, W) extent. Vectors are stored as (n, 1, 1) and
// scalars as (1, 1, 1); convolution kernels use (out, in, k*k).
struct Shape {
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
           static_cast<std::size_t>(w);
  }
  std::size_t plane() const {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& shape);

// Cache-line aligned allocation. Vectorized kernels peel a scalar head up to
// the first aligned element, so a fixed base alignment keeps the summation
// order, and therefore every result bit, independent of heap layout.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using AlignedBuffer = std::vector<double, AlignedAllocator<double>>;

// Dense 64-bit tensor. All learned and numeric code runs on this type.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1, 1, 1}, v); }
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const { return shape_; }
  int channels() const { return shape_.c; }
  int height() const { return shape_.h; }
  int width() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double> to_vector() const { return {data_.begin(), data_.end()}; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * shape_.h + y) * shape_.w + x];
  }
  double operator()(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_.h + y) * shape_.w + x];
  }

  std::span<double> channel(int c) {
    return std::span<double>(data_).subspan(c * shape_.plane(), shape_.plane());
  }
  std::span<const double> channel(int c) const {
    return std::span<const double>(data_).subspan(c * shape_.plane(), shape_.plane());
  }

  Tensor channel_slice(int first, int count) const;
  void fill(double v);

  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  Shape shape_;
  AlignedBuffer data_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

// Concatenate along channels; all parts must share H and W.
Tensor concat_channels(std::span<const Tensor> parts);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace ldfuse
