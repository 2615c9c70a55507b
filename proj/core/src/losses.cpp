#include "atseg/losses.hpp"

#include <string>

#include "atseg/errors.hpp"
#include "atseg/ops.hpp"
#include "atseg/segnet.hpp"

namespace atseg {

void LossConfig::validate() const {
  if (!(epsilon > 0.0)) throw ContractError("LossConfig: epsilon must be positive");
  if (!(lambda_mse >= 0.0)) throw ContractError("LossConfig: lambda_mse must be non-negative");
  if (!(tau > 0.0)) throw ContractError("LossConfig: tau must be positive");
}

void require_binary(const Tensor& t, const char* what) {
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (t[i] != 0.0f && t[i] != 1.0f) {
      throw ContractError(std::string(what) + " is not binary: value " + std::to_string(t[i]) + " at flat index " +
                          std::to_string(i));
    }
  }
}

Var dice_loss(Var pred, const Tensor& target, double epsilon) {
  const Tensor& p = pred.value();
  if (p.shape() != target.shape()) {
    throw ShapeError("dice_loss: prediction " + shape_str(p.shape()) + " vs target " + shape_str(target.shape()));
  }
  require_binary(target, "dice_loss target");
  double overlap = 0.0, pred_sq = 0.0, target_sq = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    overlap += static_cast<double>(p[i]) * target[i];
    pred_sq += static_cast<double>(p[i]) * p[i];
    target_sq += static_cast<double>(target[i]) * target[i];
  }
  const double denom = pred_sq + target_sq + epsilon;
  const double loss = 1.0 - 2.0 * overlap / denom;
  return pred.tape().record(
      "dice_loss", Tensor::scalar(static_cast<float>(loss)), {pred},
      [p, target, overlap, denom](const Tensor& gy, std::span<Tensor* const> gin) {
        const double g = gy[0];
        const double a = 4.0 * overlap / (denom * denom);
        const double b = 2.0 / denom;
        for (std::size_t i = 0; i < p.numel(); ++i) {
          (*gin[0])[i] += static_cast<float>(g * (a * p[i] - b * target[i]));
        }
      });
}

Var mse_loss(Var pred, Var target) {
  const Tensor& a = pred.value();
  const Tensor& b = target.value();
  if (a.shape() != b.shape()) {
    throw ShapeError("mse_loss: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  if (a.numel() == 0) throw ShapeError("mse_loss: empty tensors");
  Tensor diff(a.shape());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    diff[i] = a[i] - b[i];
    acc += static_cast<double>(diff[i]) * diff[i];
  }
  const double n = static_cast<double>(a.numel());
  return pred.tape().record("mse_loss", Tensor::scalar(static_cast<float>(acc / n)), {pred, target},
                            [diff = std::move(diff), n](const Tensor& gy, std::span<Tensor* const> gin) {
                              const double g = 2.0 * gy[0] / n;
                              for (std::size_t i = 0; i < diff.numel(); ++i) {
                                const float d = static_cast<float>(g * diff[i]);
                                if (gin[0]) (*gin[0])[i] += d;
                                if (gin[1]) (*gin[1])[i] -= d;
                              }
                            });
}

Var mse_loss(Var pred, const Tensor& target) { return mse_loss(pred, pred.tape().constant(target)); }

LossTerms combined_loss(Var prob, Var threshold, const Tensor& target, const LossConfig& config) {
  config.validate();
  LossTerms terms;
  terms.dice = dice_loss(prob, target, config.epsilon);
  if (config.lambda_mse == 0.0) {
    terms.total = terms.dice;
    return terms;
  }
  Var soft = soft_binarize(prob, threshold, static_cast<float>(config.tau));
  terms.mse = mse_loss(soft, target);
  terms.total = add(terms.dice, scale(*terms.mse, static_cast<float>(config.lambda_mse)));
  return terms;
}

}  // namespace atseg
