#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "atseg/autodiff.hpp"

namespace atseg {

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// First and second moment estimates, one tensor per parameter, plus the step count.
/// Empty moments mean a fresh state; they are allocated on the first step.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update of every parameter from its accumulated grad:
///   m ← β1·m + (1−β1)·g,  v ← β2·v + (1−β2)·g²,
///   θ ← θ − lr · m̂ / (√v̂ + eps)  with  m̂ = m/(1−β1ᵗ), v̂ = v/(1−β2ᵗ).
/// Arithmetic is carried out in double and stored as float.
void adam_step(std::span<Parameter> params, AdamState& state, const AdamConfig& config);

}  // namespace atseg
