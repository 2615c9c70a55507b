#include "atseg/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "atseg/errors.hpp"

namespace atseg {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_str(shape_) + " holds " + std::to_string(shape_numel(shape_)) +
                     " elements but " + std::to_string(data_.size()) + " values were given");
  }
}

float& Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

float Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

float Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::check_finite(std::string_view what) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw std::domain_error(std::string(what) + ": non-finite value " + std::to_string(data_[i]) +
                              " at flat index " + std::to_string(i));
    }
  }
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

void accumulate(Tensor& into, const Tensor& from) {
  if (into.shape() != from.shape()) {
    throw ShapeError("accumulate: " + shape_str(into.shape()) + " vs " + shape_str(from.shape()));
  }
  auto dst = into.data();
  auto src = from.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

std::pair<Tensor, Tensor> split_channels(const Tensor& x, std::size_t channels) {
  if (x.rank() != 4 || channels > x.dim(1)) {
    throw ShapeError("split_channels: cannot take " + std::to_string(channels) + " channels from " +
                     shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor a({n, channels, x.dim(2), x.dim(3)});
  Tensor b({n, c - channels, x.dim(2), x.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    const float* src = x.data().data() + i * c * plane;
    std::copy(src, src + channels * plane, a.data().data() + i * channels * plane);
    std::copy(src + channels * plane, src + c * plane, b.data().data() + i * (c - channels) * plane);
  }
  return {std::move(a), std::move(b)};
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("stack: no tensors");
  Shape shape = items.front().shape();
  std::vector<float> data;
  data.reserve(items.size() * items.front().numel());
  for (const Tensor& t : items) {
    if (t.shape() != shape) {
      throw ShapeError("stack: " + shape_str(t.shape()) + " vs " + shape_str(shape));
    }
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  shape.insert(shape.begin(), items.size());
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace atseg
