#pragma once

#include <optional>

#include "atseg/autodiff.hpp"

namespace atseg {

struct LossConfig {
  /// Added to the Dice denominator only.
  double epsilon = 1e-6;
  /// Weight of the threshold-branch MSE term.
  double lambda_mse = 1.0;
  /// Temperature of the soft binarization the MSE term sees.
  double tau = 0.1;

  void validate() const;
};

/// 1 − 2·Σ(pred·target) / (Σpred² + Σtarget² + epsilon), summed over every element.
/// `target` must be binary and shaped like `pred`.
Var dice_loss(Var pred, const Tensor& target, double epsilon);

/// Mean squared difference over every element. Symmetric in its arguments, bit for bit.
Var mse_loss(Var pred, Var target);
Var mse_loss(Var pred, const Tensor& target);

struct LossTerms {
  Var total;
  Var dice;
  /// Absent when lambda_mse is zero: the threshold branch is not evaluated at all.
  std::optional<Var> mse;
};

/// dice_loss(prob, target) + lambda_mse · mse_loss(soft_binarize(prob, threshold, tau), target).
LossTerms combined_loss(Var prob, Var threshold, const Tensor& target, const LossConfig& config);

/// Throws ContractError unless every element is exactly 0 or 1.
void require_binary(const Tensor& t, const char* what);

}  // namespace atseg
