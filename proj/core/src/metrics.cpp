#include "atseg/metrics.hpp"

#include "atseg/errors.hpp"
#include "atseg/losses.hpp"

namespace atseg {

MetricsRecord MetricsRecord::from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn, std::uint64_t tn) {
  MetricsRecord r;
  r.tp = tp;
  r.fp = fp;
  r.fn = fn;
  r.tn = tn;
  const double overlap = static_cast<double>(tp);
  const double errors = static_cast<double>(fp + fn);
  r.dice = (tp + fp + fn == 0) ? 1.0 : 2.0 * overlap / (2.0 * overlap + errors);
  r.iou = (tp + fp + fn == 0) ? 1.0 : overlap / (overlap + errors);
  const std::uint64_t total = tp + fp + fn + tn;
  r.pixel_accuracy = total == 0 ? 1.0 : static_cast<double>(tp + tn) / static_cast<double>(total);
  return r;
}

MetricsRecord compute_metrics(const Tensor& pred_mask, const Tensor& target) {
  if (pred_mask.shape() != target.shape()) {
    throw ShapeError("compute_metrics: prediction " + shape_str(pred_mask.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  require_binary(pred_mask, "compute_metrics prediction");
  require_binary(target, "compute_metrics target");
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < target.numel(); ++i) {
    const bool p = pred_mask[i] == 1.0f;
    const bool t = target[i] == 1.0f;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
    tn += !p && !t;
  }
  return MetricsRecord::from_counts(tp, fp, fn, tn);
}

MetricsRecord micro_average(std::span<const MetricsRecord> records) {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (const MetricsRecord& r : records) {
    tp += r.tp;
    fp += r.fp;
    fn += r.fn;
    tn += r.tn;
  }
  return MetricsRecord::from_counts(tp, fp, fn, tn);
}

}  // namespace atseg
