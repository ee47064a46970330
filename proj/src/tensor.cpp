#include "ldfuse/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "ldfuse/errors.hpp"

namespace ldfuse {

std::string to_string(const Shape& shape) {
  return std::to_string(shape.c) + "x" + std::to_string(shape.h) + "x" +
         std::to_string(shape.w);
}

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kFormat: return "format_error";
    case ErrorKind::kIo: return "io_error";
    case ErrorKind::kShape: return "shape_error";
    case ErrorKind::kParameter: return "parameter_error";
    case ErrorKind::kDomain: return "domain_error";
    case ErrorKind::kIndex: return "index_error";
    case ErrorKind::kSize: return "size_error";
    case ErrorKind::kState: return "state_error";
    case ErrorKind::kConfig: return "config_error";
    case ErrorKind::kUsage: return "usage_error";
  }
  return "error";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.size(), fill) {
  if (shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative tensor extent " + to_string(shape));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(shape), data_(values.begin(), values.end()) {
  if (data_.size() != shape_.size()) {
    throw ShapeError("tensor storage of " + std::to_string(data_.size()) +
                     " values does not match shape " + to_string(shape_));
  }
}

Tensor Tensor::vector(std::vector<double> values) {
  const int n = static_cast<int>(values.size());
  return Tensor({n, 1, 1}, std::move(values));
}

Tensor Tensor::channel_slice(int first, int count) const {
  if (first < 0 || count < 0 || first + count > shape_.c) {
    throw ShapeError("channel slice [" + std::to_string(first) + ", " +
                     std::to_string(first + count) + ") out of range for " +
                     to_string(shape_));
  }
  Tensor out({count, shape_.h, shape_.w});
  std::copy_n(data_.begin() + first * shape_.plane(), out.size(), out.data());
  return out;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "tensor +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) +
                     " vs " + to_string(b.shape()));
  }
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const int h = parts.front().height();
  const int w = parts.front().width();
  int c = 0;
  for (const Tensor& p : parts) {
    if (p.height() != h || p.width() != w) {
      throw ShapeError("concat spatial mismatch " + to_string(parts.front().shape()) +
                       " vs " + to_string(p.shape()));
    }
    c += p.channels();
  }
  Tensor out({c, h, w});
  double* dst = out.data();
  for (const Tensor& p : parts) dst = std::copy(p.data(), p.data() + p.size(), dst);
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace ldfuse
