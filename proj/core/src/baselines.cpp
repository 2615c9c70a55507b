#include "atseg/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "atseg/errors.hpp"

namespace atseg {
namespace {

std::pair<std::size_t, std::size_t> spatial_extent(const Tensor& image, const char* op) {
  std::size_t leading = 1;
  for (std::size_t axis = 0; axis + 2 < image.rank(); ++axis) leading *= image.dim(axis);
  if (image.rank() < 2 || leading != 1) {
    throw ShapeError(std::string(op) + ": expected a single 2-D image, got " + shape_str(image.shape()));
  }
  return {image.dim(image.rank() - 2), image.dim(image.rank() - 1)};
}

}  // namespace

Tensor fixed_threshold(const Tensor& prob) {
  Tensor out(prob.shape());
  for (std::size_t i = 0; i < prob.numel(); ++i) out[i] = prob[i] >= 0.5f ? 1.0f : 0.0f;
  return out;
}

IntegralImage::IntegralImage(const Tensor& image) {
  std::tie(h_, w_) = spatial_extent(image, "IntegralImage");
  const std::size_t stride = w_ + 1;
  sum_.assign((h_ + 1) * stride, 0.0);
  sq_.assign((h_ + 1) * stride, 0.0);
  for (std::size_t i = 0; i < h_; ++i) {
    double row = 0.0, row_sq = 0.0;
    for (std::size_t j = 0; j < w_; ++j) {
      const double v = image[i * w_ + j];
      row += v;
      row_sq += v * v;
      sum_[(i + 1) * stride + j + 1] = sum_[i * stride + j + 1] + row;
      sq_[(i + 1) * stride + j + 1] = sq_[i * stride + j + 1] + row_sq;
    }
  }
}

double IntegralImage::window_sum(std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1) const {
  const std::size_t s = w_ + 1;
  return sum_[(r1 + 1) * s + c1 + 1] - sum_[r0 * s + c1 + 1] - sum_[(r1 + 1) * s + c0] + sum_[r0 * s + c0];
}

double IntegralImage::window_sq_sum(std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1) const {
  const std::size_t s = w_ + 1;
  return sq_[(r1 + 1) * s + c1 + 1] - sq_[r0 * s + c1 + 1] - sq_[(r1 + 1) * s + c0] + sq_[r0 * s + c0];
}

std::vector<double> integral_image(const Tensor& image) {
  IntegralImage table(image);
  std::vector<double> out(table.height() * table.width());
  for (std::size_t i = 0; i < table.height(); ++i) {
    for (std::size_t j = 0; j < table.width(); ++j) out[i * table.width() + j] = table.sum_at(i, j);
  }
  return out;
}

double LocalStatConfig::effective_k() const {
  if (k) return *k;
  switch (method) {
    case LocalMethod::Niblack:
      return -0.2;
    case LocalMethod::Sauvola:
      return 0.5;
    case LocalMethod::Mean:
      break;
  }
  return 0.0;
}

Tensor local_stat_threshold(const Tensor& image, const LocalStatConfig& config) {
  const auto [h, w] = spatial_extent(image, "local_stat_threshold");
  if (config.window == 0 || config.window % 2 == 0) {
    throw ContractError("local_stat_threshold: window " + std::to_string(config.window) + " must be odd");
  }
  if (config.window > std::min(h, w)) {
    throw ContractError("local_stat_threshold: window " + std::to_string(config.window) + " exceeds the " +
                        std::to_string(h) + "x" + std::to_string(w) + " image");
  }
  if (config.method == LocalMethod::Sauvola && !(config.r > 0.0)) {
    throw ContractError("local_stat_threshold: Sauvola r must be positive");
  }
  const IntegralImage table(image);
  const std::size_t half = config.window / 2;
  const double k = config.effective_k();
  Tensor out(image.shape());
  for (std::size_t i = 0; i < h; ++i) {
    const std::size_t r0 = i >= half ? i - half : 0, r1 = std::min(h - 1, i + half);
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t c0 = j >= half ? j - half : 0, c1 = std::min(w - 1, j + half);
      const double count = static_cast<double>((r1 - r0 + 1) * (c1 - c0 + 1));
      const double m = table.window_sum(r0, c0, r1, c1) / count;
      const double var = table.window_sq_sum(r0, c0, r1, c1) / count - m * m;
      const double s = std::sqrt(std::max(0.0, var));
      double t = m;
      if (config.method == LocalMethod::Niblack) t = m + k * s;
      if (config.method == LocalMethod::Sauvola) t = m * (1.0 + k * (s / config.r - 1.0));
      out[i * w + j] = static_cast<double>(image[i * w + j]) >= t ? 1.0f : 0.0f;
    }
  }
  return out;
}

}  // namespace atseg
