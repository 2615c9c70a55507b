#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "atseg/tensor.hpp"

namespace atseg {

/// 1 where value ≥ 0.5, else 0.
Tensor fixed_threshold(const Tensor& prob);

/// Summed-area tables of an image and of its squares, accumulated in double.
/// Accepts (H, W) or any shape whose leading extents are all 1.
class IntegralImage {
 public:
  explicit IntegralImage(const Tensor& image);

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }

  /// Σ image[0..row, 0..col], inclusive.
  double sum_at(std::size_t row, std::size_t col) const { return sum_[(row + 1) * (w_ + 1) + col + 1]; }
  double sq_sum_at(std::size_t row, std::size_t col) const { return sq_[(row + 1) * (w_ + 1) + col + 1]; }

  /// Sums over rows [r0, r1] and columns [c0, c1], inclusive, in four lookups.
  double window_sum(std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1) const;
  double window_sq_sum(std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1) const;

 private:
  std::size_t h_ = 0, w_ = 0;
  std::vector<double> sum_;
  std::vector<double> sq_;
};

/// The inclusive prefix-sum table S[i, j] as an (H, W) grid of doubles.
std::vector<double> integral_image(const Tensor& image);

enum class LocalMethod { Mean, Niblack, Sauvola };

struct LocalStatConfig {
  /// Odd side of the square window; windows are clipped at the image border.
  std::size_t window = 15;
  LocalMethod method = LocalMethod::Mean;
  /// Niblack defaults to −0.2, Sauvola to 0.5.
  std::optional<double> k;
  /// Sauvola dynamic range of the standard deviation.
  double r = 0.5;

  double effective_k() const;
};

/// Per-pixel local threshold from the window mean m and population deviation s:
///   mean:    t = m
///   niblack: t = m + k·s
///   sauvola: t = m·(1 + k·(s/r − 1))
/// and pixel = 1 iff value ≥ t. O(H·W) regardless of window size.
/// Throws ContractError for an even window or one larger than the image.
Tensor local_stat_threshold(const Tensor& image, const LocalStatConfig& config);

}  // namespace atseg
