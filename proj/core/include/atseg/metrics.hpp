#pragma once

#include <cstdint>
#include <span>

#include "atseg/tensor.hpp"

namespace atseg {

/// Pixel confusion counts and the overlap scores derived from them.
struct MetricsRecord {
  double dice = 1.0;
  double iou = 1.0;
  double pixel_accuracy = 1.0;
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t pixels() const { return tp + fp + fn + tn; }

  /// Dice and IoU are 1 when both masks are empty; accuracy is 1 for zero pixels.
  static MetricsRecord from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn, std::uint64_t tn);
};

/// Pixelwise comparison of two binary masks of equal shape.
/// Throws ContractError on non-binary input, ShapeError on mismatched shapes.
MetricsRecord compute_metrics(const Tensor& pred_mask, const Tensor& target);

/// Pools the counts of every record, then recomputes the scores.
MetricsRecord micro_average(std::span<const MetricsRecord> records);

}  // namespace atseg
