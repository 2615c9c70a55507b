#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace atseg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major float32 array with shape metadata.
///
/// Zero extents are allowed (an empty channel block is a valid concat operand),
/// but the element count always equals the product of the extents.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor scalar(float value) { return Tensor({1}, value); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  const std::vector<float>& storage() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  /// Element of a rank-4 tensor (N, C, H, W).
  float& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
  float at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  /// The single value of a one-element tensor.
  float item() const;

  /// Same data, new extents. Throws ShapeError if the element count differs.
  Tensor reshaped(Shape shape) const;

  void fill(float value);

  bool all_finite() const;
  /// Throws std::domain_error naming `what` if any element is NaN or infinite.
  void check_finite(std::string_view what) const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Shapes equal and every element bit-identical (NaN payloads included).
bool bitwise_equal(const Tensor& a, const Tensor& b);

/// Elementwise a += b; shapes must match.
void accumulate(Tensor& into, const Tensor& from);

/// Inverse of channel concatenation: first `channels` channels, then the rest.
std::pair<Tensor, Tensor> split_channels(const Tensor& x, std::size_t channels);

/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);

}  // namespace atseg
