#include "atseg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "atseg/errors.hpp"

namespace atseg {
namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, stride, pad, oh, ow;
  std::size_t patch() const { return cin * kh * kw; }
  std::size_t out_plane() const { return oh * ow; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// Unfolds one sample into a (cin·kh·kw) × (oh·ow) row-major matrix.
void im2col(const ConvGeometry& g, const float* x, float* col) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    const float* plane = x + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        float* row = col + ((c * g.kh + ki) * g.kw + kj) * g.out_plane();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          float* out = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(out, out + g.ow, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0f : src[ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters column gradients back into the input gradient.
void col2im_add(const ConvGeometry& g, const float* col, float* dx) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    float* plane = dx + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const float* row = col + ((c * g.kh + ki) * g.kw + kj) * g.out_plane();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          float* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const float* src = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

float stable_sigmoid(float x) {
  constexpr float lo = std::numeric_limits<float>::min();
  constexpr float hi = 1.0f - 0x1.0p-24f;
  float s;
  if (x >= 0.0f) {
    s = 1.0f / (1.0f + std::exp(-x));
  } else {
    const float e = std::exp(x);
    s = e / (1.0f + e);
  }
  return std::clamp(s, lo, hi);
}

template <typename F>
Var unary_map(const char* kind, Var input, F&& forward, Tape::BackwardFn fn) {
  const Tensor& x = input.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = forward(x[i]);
  return input.tape().record(kind, std::move(y), {input}, std::move(fn));
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (kernel % 2 == 0) throw ShapeError("conv2d: kernel extent " + std::to_string(kernel) + " is not odd");
  const std::size_t padded = in + 2 * padding;
  if (padded < kernel) {
    throw ShapeError("conv2d: kernel extent " + std::to_string(kernel) + " exceeds padded input extent " +
                     std::to_string(padded));
  }
  if ((padded - kernel) % stride != 0) {
    throw ShapeError("conv2d: (" + std::to_string(padded) + " - " + std::to_string(kernel) +
                     ") is not divisible by stride " + std::to_string(stride) + "; output extent is not an integer");
  }
  return (padded - kernel) / stride + 1;
}

Var conv2d(Var input, Var weight, Var bias, std::size_t stride, std::size_t padding) {
  const Tensor& x = input.value();
  const Tensor& wt = weight.value();
  const Tensor& b = bias.value();
  require_rank(x, 4, "conv2d", "input");
  require_rank(wt, 4, "conv2d", "weight");
  if (wt.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: weight " + shape_str(wt.shape()) + " expects " + std::to_string(wt.dim(1)) +
                     " input channels, input " + shape_str(x.shape()) + " has " + std::to_string(x.dim(1)));
  }
  if (b.shape() != Shape{wt.dim(0)}) {
    throw ShapeError("conv2d: bias " + shape_str(b.shape()) + " does not match " + std::to_string(wt.dim(0)) +
                     " output channels");
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), wt.dim(0), wt.dim(2), wt.dim(3), stride, padding, 0, 0};
  g.oh = conv_output_extent(g.h, g.kh, stride, padding);
  g.ow = conv_output_extent(g.w, g.kw, stride, padding);

  const std::size_t patch = g.patch(), plane = g.out_plane();
  const bool keep_cols = input.tape().grad_enabled() && !g.pointwise() &&
                         (input.requires_grad() || weight.requires_grad() || bias.requires_grad());
  auto cols = std::make_shared<std::vector<float>>();
  if (keep_cols) cols->resize(g.n * patch * plane);
  std::vector<float> scratch(g.pointwise() || keep_cols ? 0 : patch * plane);

  Tensor y({g.n, g.cout, g.oh, g.ow});
  ConstMap wmat(wt.data().data(), g.cout, patch);
  for (std::size_t n = 0; n < g.n; ++n) {
    const float* xn = x.data().data() + n * g.cin * g.h * g.w;
    const float* col = xn;
    if (!g.pointwise()) {
      float* dst = keep_cols ? cols->data() + n * patch * plane : scratch.data();
      im2col(g, xn, dst);
      col = dst;
    }
    MutMap ymat(y.data().data() + n * g.cout * plane, g.cout, plane);
    ymat.noalias() = wmat * ConstMap(col, patch, plane);
    for (std::size_t co = 0; co < g.cout; ++co) ymat.row(co).array() += b[co];
  }

  Tensor x_saved = g.pointwise() ? x : Tensor();
  Tensor w_saved = wt;
  return input.tape().record(
      "conv2d", std::move(y), {input, weight, bias},
      [g, cols, x_saved = std::move(x_saved), w_saved = std::move(w_saved)](const Tensor& gy,
                                                                               std::span<Tensor* const> gin) {
        const std::size_t patch = g.patch(), plane = g.out_plane();
        ConstMap wmat(w_saved.data().data(), g.cout, patch);
        std::vector<float> dcol(gin[0] && !g.pointwise() ? patch * plane : 0);
        for (std::size_t n = 0; n < g.n; ++n) {
          ConstMap gmat(gy.data().data() + n * g.cout * plane, g.cout, plane);
          const float* col =
              g.pointwise() ? x_saved.data().data() + n * g.cin * g.h * g.w : cols->data() + n * patch * plane;
          if (gin[1]) {
            MutMap gw(gin[1]->data().data(), g.cout, patch);
            gw.noalias() += gmat * ConstMap(col, patch, plane).transpose();
          }
          if (gin[2]) {
            // Sequential sum: Eigen's vectorised reduction peels by address, so results would vary run to run.
            const float* row = gy.data().data() + n * g.cout * plane;
            for (std::size_t co = 0; co < g.cout; ++co, row += plane) {
              float acc = 0.0f;
              for (std::size_t i = 0; i < plane; ++i) acc += row[i];
              (*gin[2])[co] += acc;
            }
          }
          if (gin[0]) {
            float* dx = gin[0]->data().data() + n * g.cin * g.h * g.w;
            if (g.pointwise()) {
              MutMap gx(dx, g.cin, plane);
              gx.noalias() += wmat.transpose() * gmat;
            } else {
              MutMap dcm(dcol.data(), patch, plane);
              dcm.noalias() = wmat.transpose() * gmat;
              col2im_add(g, dcol.data(), dx);
            }
          }
        }
      });
}

Var max_pool2d(Var input) {
  const Tensor& x = input.value();
  require_rank(x, 4, "max_pool2d", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("max_pool2d: spatial extents must be even, got " + shape_str(x.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor y({n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(y.numel());
  std::size_t o = 0;
  for (std::size_t p = 0; p < n * c; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = base + (2 * oy) * w + 2 * ox;
        const std::size_t candidates[3] = {best + 1, best + w, best + w + 1};
        for (std::size_t idx : candidates) {
          if (x[idx] > x[best]) best = idx;
        }
        y[o] = x[best];
        (*argmax)[o] = best;
      }
    }
  }
  return input.tape().record("max_pool2d", std::move(y), {input},
                             [argmax](const Tensor& gy, std::span<Tensor* const> gin) {
                               for (std::size_t i = 0; i < gy.numel(); ++i) (*gin[0])[(*argmax)[i]] += gy[i];
                             });
}

Var adaptive_avg_pool2d(Var input, std::size_t out_h, std::size_t out_w) {
  const Tensor& x = input.value();
  require_rank(x, 4, "adaptive_avg_pool2d", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_h == 0 || out_w == 0 || out_h > h || out_w > w) {
    throw ShapeError("adaptive_avg_pool2d: cannot pool " + shape_str(x.shape()) + " to " + std::to_string(out_h) +
                     "x" + std::to_string(out_w));
  }
  auto row_lo = [=](std::size_t i) { return i * h / out_h; };
  auto col_lo = [=](std::size_t j) { return j * w / out_w; };
  Tensor y({n, c, out_h, out_w});
  for (std::size_t p = 0; p < n * c; ++p) {
    const float* plane = x.data().data() + p * h * w;
    for (std::size_t i = 0; i < out_h; ++i) {
      for (std::size_t j = 0; j < out_w; ++j) {
        double acc = 0.0;
        for (std::size_t r = row_lo(i); r < row_lo(i + 1); ++r) {
          for (std::size_t q = col_lo(j); q < col_lo(j + 1); ++q) acc += plane[r * w + q];
        }
        const double count = static_cast<double>((row_lo(i + 1) - row_lo(i)) * (col_lo(j + 1) - col_lo(j)));
        y[(p * out_h + i) * out_w + j] = static_cast<float>(acc / count);
      }
    }
  }
  return input.tape().record(
      "adaptive_avg_pool2d", std::move(y), {input},
      [=](const Tensor& gy, std::span<Tensor* const> gin) {
        for (std::size_t p = 0; p < n * c; ++p) {
          float* plane = gin[0]->data().data() + p * h * w;
          for (std::size_t i = 0; i < out_h; ++i) {
            for (std::size_t j = 0; j < out_w; ++j) {
              const std::size_t count = (row_lo(i + 1) - row_lo(i)) * (col_lo(j + 1) - col_lo(j));
              const float share = gy[(p * out_h + i) * out_w + j] / static_cast<float>(count);
              for (std::size_t r = row_lo(i); r < row_lo(i + 1); ++r) {
                for (std::size_t q = col_lo(j); q < col_lo(j + 1); ++q) plane[r * w + q] += share;
              }
            }
          }
        }
      });
}

Var upsample_nearest2d(Var input) {
  const Tensor& x = input.value();
  require_rank(x, 4, "upsample_nearest2d", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({n, c, 2 * h, 2 * w});
  for (std::size_t p = 0; p < n * c; ++p) {
    const float* src = x.data().data() + p * h * w;
    float* dst = y.data().data() + p * 4 * h * w;
    for (std::size_t r = 0; r < 2 * h; ++r) {
      for (std::size_t q = 0; q < 2 * w; ++q) dst[r * 2 * w + q] = src[(r / 2) * w + q / 2];
    }
  }
  return input.tape().record("upsample_nearest2d", std::move(y), {input},
                             [=](const Tensor& gy, std::span<Tensor* const> gin) {
                               for (std::size_t p = 0; p < n * c; ++p) {
                                 const float* src = gy.data().data() + p * 4 * h * w;
                                 float* dst = gin[0]->data().data() + p * h * w;
                                 for (std::size_t r = 0; r < 2 * h; ++r) {
                                   for (std::size_t q = 0; q < 2 * w; ++q) {
                                     dst[(r / 2) * w + q / 2] += src[r * 2 * w + q];
                                   }
                                 }
                               }
                             });
}

Var linear(Var input, Var weight, Var bias) {
  const Tensor& x = input.value();
  const Tensor& wt = weight.value();
  const Tensor& b = bias.value();
  require_rank(x, 2, "linear", "input");
  require_rank(wt, 2, "linear", "weight");
  const std::size_t n = x.dim(0), din = x.dim(1), dout = wt.dim(0);
  if (wt.dim(1) != din) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(wt.shape()));
  }
  if (b.shape() != Shape{dout}) {
    throw ShapeError("linear: bias " + shape_str(b.shape()) + " does not match weight " + shape_str(wt.shape()));
  }
  // Plain loops keep every row's accumulation order independent of the batch size.
  Tensor y({n, dout});
  for (std::size_t i = 0; i < n; ++i) {
    const float* xi = x.data().data() + i * din;
    for (std::size_t o = 0; o < dout; ++o) {
      const float* wo = wt.data().data() + o * din;
      float acc = 0.0f;
      for (std::size_t k = 0; k < din; ++k) acc += xi[k] * wo[k];
      y[i * dout + o] = acc + b[o];
    }
  }
  return input.tape().record(
      "linear", std::move(y), {input, weight, bias},
      [x, wt, n, din, dout](const Tensor& gy, std::span<Tensor* const> gin) {
        for (std::size_t i = 0; i < n; ++i) {
          const float* gi = gy.data().data() + i * dout;
          const float* xi = x.data().data() + i * din;
          for (std::size_t o = 0; o < dout; ++o) {
            const float g = gi[o];
            if (gin[0]) {
              float* dx = gin[0]->data().data() + i * din;
              const float* wo = wt.data().data() + o * din;
              for (std::size_t k = 0; k < din; ++k) dx[k] += g * wo[k];
            }
            if (gin[1]) {
              float* dw = gin[1]->data().data() + o * din;
              for (std::size_t k = 0; k < din; ++k) dw[k] += g * xi[k];
            }
            if (gin[2]) (*gin[2])[o] += g;
          }
        }
      });
}

Var relu(Var input) {
  Tensor x = input.value();
  return unary_map("relu", input, [](float v) { return v > 0.0f ? v : 0.0f; },
                   [x = std::move(x)](const Tensor& gy, std::span<Tensor* const> gin) {
                     for (std::size_t i = 0; i < gy.numel(); ++i) {
                       if (x[i] > 0.0f) (*gin[0])[i] += gy[i];
                     }
                   });
}

Var sigmoid(Var input) {
  const Tensor& x = input.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = stable_sigmoid(x[i]);
  Tensor saved = y;
  return input.tape().record("sigmoid", std::move(y), {input},
                             [s = std::move(saved)](const Tensor& gy, std::span<Tensor* const> gin) {
                               for (std::size_t i = 0; i < gy.numel(); ++i) {
                                 (*gin[0])[i] += gy[i] * s[i] * (1.0f - s[i]);
                               }
                             });
}

Var activation(Var input, Activation kind) {
  return kind == Activation::ReLU ? relu(input) : sigmoid(input);
}

Var concat_channels(Var a, Var b) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  require_rank(ta, 4, "concat_channels", "first operand");
  require_rank(tb, 4, "concat_channels", "second operand");
  if (ta.dim(0) != tb.dim(0) || ta.dim(2) != tb.dim(2) || ta.dim(3) != tb.dim(3)) {
    throw ShapeError("concat_channels: " + shape_str(ta.shape()) + " and " + shape_str(tb.shape()) +
                     " differ outside the channel axis");
  }
  const std::size_t n = ta.dim(0), ca = ta.dim(1), cb = tb.dim(1), plane = ta.dim(2) * ta.dim(3);
  Tensor y({n, ca + cb, ta.dim(2), ta.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    float* dst = y.data().data() + i * (ca + cb) * plane;
    const float* sa = ta.data().data() + i * ca * plane;
    const float* sb = tb.data().data() + i * cb * plane;
    std::copy(sa, sa + ca * plane, dst);
    std::copy(sb, sb + cb * plane, dst + ca * plane);
  }
  return a.tape().record("concat_channels", std::move(y), {a, b},
                         [=](const Tensor& gy, std::span<Tensor* const> gin) {
                           for (std::size_t i = 0; i < n; ++i) {
                             const float* src = gy.data().data() + i * (ca + cb) * plane;
                             if (gin[0]) {
                               float* da = gin[0]->data().data() + i * ca * plane;
                               for (std::size_t k = 0; k < ca * plane; ++k) da[k] += src[k];
                             }
                             if (gin[1]) {
                               float* db = gin[1]->data().data() + i * cb * plane;
                               for (std::size_t k = 0; k < cb * plane; ++k) db[k] += src[ca * plane + k];
                             }
                           }
                         });
}

Var dropout(Var input, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return input;
  const Tensor& x = input.value();
  const float keep_scale = static_cast<float>(1.0 / (1.0 - rate));
  Tensor mask(x.shape());
  for (std::size_t i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() >= rate ? keep_scale : 0.0f;
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] * mask[i];
  return input.tape().record("dropout", std::move(y), {input},
                             [mask = std::move(mask)](const Tensor& gy, std::span<Tensor* const> gin) {
                               for (std::size_t i = 0; i < gy.numel(); ++i) (*gin[0])[i] += gy[i] * mask[i];
                             });
}

Var reshape(Var input, Shape shape) {
  Tensor y = input.value().reshaped(std::move(shape));
  return input.tape().record("reshape", std::move(y), {input}, [](const Tensor& gy, std::span<Tensor* const> gin) {
    auto dst = gin[0]->data();
    auto src = gy.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  accumulate(y, b.value());
  return a.tape().record("add", std::move(y), {a, b}, [](const Tensor& gy, std::span<Tensor* const> gin) {
    for (Tensor* g : gin) {
      if (g) accumulate(*g, gy);
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  Tensor y(ta.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = ta[i] - tb[i];
  return a.tape().record("sub", std::move(y), {a, b}, [](const Tensor& gy, std::span<Tensor* const> gin) {
    if (gin[0]) accumulate(*gin[0], gy);
    if (gin[1]) {
      for (std::size_t i = 0; i < gy.numel(); ++i) (*gin[1])[i] -= gy[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor ta = a.value();
  Tensor tb = b.value();
  Tensor y(ta.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = ta[i] * tb[i];
  return a.tape().record("mul", std::move(y), {a, b},
                         [ta = std::move(ta), tb = std::move(tb)](const Tensor& gy, std::span<Tensor* const> gin) {
                           for (std::size_t i = 0; i < gy.numel(); ++i) {
                             if (gin[0]) (*gin[0])[i] += gy[i] * tb[i];
                             if (gin[1]) (*gin[1])[i] += gy[i] * ta[i];
                           }
                         });
}

Var scale(Var input, float factor) {
  return unary_map("scale", input, [factor](float v) { return v * factor; },
                   [factor](const Tensor& gy, std::span<Tensor* const> gin) {
                     for (std::size_t i = 0; i < gy.numel(); ++i) (*gin[0])[i] += gy[i] * factor;
                   });
}

Var sum(Var input) {
  double acc = 0.0;
  for (float v : input.value().data()) acc += v;
  return input.tape().record("sum", Tensor::scalar(static_cast<float>(acc)), {input},
                             [](const Tensor& gy, std::span<Tensor* const> gin) {
                               const float g = gy[0];
                               for (float& d : gin[0]->data()) d += g;
                             });
}

Var mean(Var input) {
  const std::size_t count = input.value().numel();
  if (count == 0) throw ShapeError("mean: empty tensor");
  double acc = 0.0;
  for (float v : input.value().data()) acc += v;
  return input.tape().record("mean", Tensor::scalar(static_cast<float>(acc / static_cast<double>(count))), {input},
                             [count](const Tensor& gy, std::span<Tensor* const> gin) {
                               const float g = static_cast<float>(gy[0] / static_cast<double>(count));
                               for (float& d : gin[0]->data()) d += g;
                             });
}

Var detach(Var input) { return input.tape().constant(input.value()); }

}  // namespace atseg
