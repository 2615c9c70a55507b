#pragma once

#include <cstddef>

#include "atseg/autodiff.hpp"
#include "atseg/rng.hpp"

namespace atseg {

enum class Activation { ReLU, Sigmoid };

/// Cross-correlation of an (N, Cin, H, W) batch with (Cout, Cin, kh, kw) kernels.
/// Kernel extents must be odd and the strided output extent must be integral.
Var conv2d(Var input, Var weight, Var bias, std::size_t stride = 1, std::size_t padding = 0);

/// Output extent of a convolution along one axis; throws ShapeError when the
/// window does not fit or the stride does not divide evenly.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

/// 2×2 max pooling, stride 2. Ties go to the first element in row-major window order.
Var max_pool2d(Var input);

/// Mean over windows [floor(i·H/out_h), floor((i+1)·H/out_h)) per output row, and
/// likewise for columns.
Var adaptive_avg_pool2d(Var input, std::size_t out_h, std::size_t out_w);

/// Nearest-neighbour ×2 upsampling.
Var upsample_nearest2d(Var input);

/// (N, Din) · (Dout, Din)ᵀ + (Dout).
Var linear(Var input, Var weight, Var bias);

Var relu(Var input);
/// Logistic function. Outputs are clamped into the open interval (0, 1).
Var sigmoid(Var input);
Var activation(Var input, Activation kind);

/// Channel-wise concatenation of two (N, C, H, W) tensors: channels of `a`, then `b`.
Var concat_channels(Var a, Var b);

/// Inverted dropout. Identity when `training` is false or `rate` is zero.
Var dropout(Var input, double rate, Rng& rng, bool training);

Var reshape(Var input, Shape shape);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var input, float factor);
Var sum(Var input);
Var mean(Var input);
/// Same value, recorded as a constant: no gradient flows through.
Var detach(Var input);

}  // namespace atseg
