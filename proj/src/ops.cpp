#include "noisyforge/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gemm.hpp"
#include "noisyforge/error.hpp"

namespace noisyforge::ops {
namespace {

bool wants_grad(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (tape == nullptr) return false;
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                         ", got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

void check_finite(const Tensor& t, const char* op) {
  for (float v : t.data()) {
    if (!std::isfinite(v)) throw InputError(std::string(op) + ": produced a non-finite value");
  }
}

void accumulate(Tensor t, std::span<const double> g) {
  auto dst = t.grad_buffer();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += static_cast<float>(g[i]);
}

void accumulate(Tensor t, std::span<const float> g) {
  auto dst = t.grad_buffer();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

struct ConvGeometry {
  std::size_t n, c, h, w, f, kh, kw, stride, pad, oh, ow;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t positions() const { return oh * ow; }
};

// cols[(c, i, j) x (y, x)] for one sample.
// Output columns [x0, x1) read inside the image for kernel column kj.
std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t kj) {
  const auto lo = static_cast<std::ptrdiff_t>(g.pad) - static_cast<std::ptrdiff_t>(kj);
  const auto hi = static_cast<std::ptrdiff_t>(g.w + g.pad) - static_cast<std::ptrdiff_t>(kj);  // ix < w
  const auto s = static_cast<std::ptrdiff_t>(g.stride);
  const std::ptrdiff_t x0 = lo <= 0 ? 0 : (lo + s - 1) / s;
  const std::ptrdiff_t x1 = hi <= 0 ? 0 : std::min<std::ptrdiff_t>((hi + s - 1) / s, static_cast<std::ptrdiff_t>(g.ow));
  return {static_cast<std::size_t>(x0), static_cast<std::size_t>(std::max(x0, x1))};
}

void im2col(const ConvGeometry& g, const float* img, float* cols) {
  const std::size_t p = g.positions();
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        float* row = cols + ((ch * g.kh + ki) * g.kw + kj) * p;
        const auto [x0, x1] = valid_columns(g, kj);
        for (std::size_t y = 0; y < g.oh; ++y) {
          float* dst = row + y * g.ow;
          const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) || x0 == x1) {
            std::fill(dst, dst + g.ow, 0.0f);
            continue;
          }
          std::fill(dst, dst + x0, 0.0f);
          std::fill(dst + x1, dst + g.ow, 0.0f);
          const float* src = img + (ch * g.h + static_cast<std::size_t>(iy)) * g.w + (x0 * g.stride + kj - g.pad);
          if (g.stride == 1) {
            std::copy(src, src + (x1 - x0), dst + x0);
          } else {
            for (std::size_t x = x0; x < x1; ++x) dst[x] = src[(x - x0) * g.stride];
          }
        }
      }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* img) {
  const std::size_t p = g.positions();
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + ((ch * g.kh + ki) * g.kw + kj) * p;
        const auto [x0, x1] = valid_columns(g, kj);
        if (x0 == x1) continue;
        for (std::size_t y = 0; y < g.oh; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          const double* src = row + y * g.ow;
          double* dst = img + (ch * g.h + static_cast<std::size_t>(iy)) * g.w + (x0 * g.stride + kj - g.pad);
          for (std::size_t x = x0; x < x1; ++x) dst[(x - x0) * g.stride] += src[x];
        }
      }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
  require_rank(a, 2, "matmul", "lhs");
  require_rank(b, 2, "matmul", "rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  Tensor out({m, n});
  detail::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.mutable_data().data());
  check_finite(out, "matmul");
  if (wants_grad(tape, {&a, &b})) {
    tape->record("matmul", {a, b}, out, [a, b, out, m, k, n]() mutable {
      const float* dc = out.grad().data();
      if (a.requires_grad()) {
        std::vector<double> da(m * k, 0.0);
        detail::gemm_nt_acc(m, n, k, dc, b.data().data(), da.data());
        accumulate(a, da);
      }
      if (b.requires_grad()) {
        std::vector<double> db(k * n, 0.0);
        detail::gemm_tn_acc(k, m, n, a.data().data(), dc, db.data());
        accumulate(b, db);
      }
    });
  }
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding,
              Tape* tape) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  if (stride == 0) throw DimensionError("conv2d: stride must be at least 1");
  ConvGeometry g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.f = kernel.dim(0);
  g.kh = kernel.dim(2);
  g.kw = kernel.dim(3);
  g.stride = stride;
  g.pad = padding;
  if (kernel.dim(1) != g.c) {
    throw DimensionError("conv2d: kernel " + shape_string(kernel.shape()) + " does not match input channels of " +
                         shape_string(input.shape()));
  }
  if (g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_string(kernel.shape()) + " larger than padded input " +
                         shape_string(input.shape()));
  }
  g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
  g.ow = (g.w + 2 * padding - g.kw) / stride + 1;

  const std::size_t patch = g.patch(), pos = g.positions();
  Tensor out({g.n, g.f, g.oh, g.ow});
  std::vector<float> cols(patch * pos);
  const float* x = input.data().data();
  const float* kw = kernel.data().data();
  float* y = out.mutable_data().data();
  for (std::size_t s = 0; s < g.n; ++s) {
    im2col(g, x + s * g.c * g.h * g.w, cols.data());
    detail::gemm_nn(g.f, patch, pos, kw, cols.data(), y + s * g.f * pos);
  }
  check_finite(out, "conv2d");
  if (wants_grad(tape, {&input, &kernel})) {
    // Patch matrices are rebuilt per sample rather than kept from the
    // forward pass.
    tape->record("conv2d", {input, kernel}, out, [input, kernel, out, g]() mutable {
      const std::size_t patch = g.patch(), pos = g.positions();
      const float* dy = out.grad().data();
      if (kernel.requires_grad()) {
        std::vector<double> dk(g.f * patch, 0.0);
        std::vector<float> cols(patch * pos);
        for (std::size_t s = 0; s < g.n; ++s) {
          im2col(g, input.data().data() + s * g.c * g.h * g.w, cols.data());
          detail::gemm_nt_acc(g.f, pos, patch, dy + s * g.f * pos, cols.data(), dk.data());
        }
        accumulate(kernel, dk);
      }
      if (input.requires_grad()) {
        std::vector<double> dx(input.numel(), 0.0);
        std::vector<double> dcols(patch * pos);
        for (std::size_t s = 0; s < g.n; ++s) {
          std::fill(dcols.begin(), dcols.end(), 0.0);
          detail::gemm_tn_acc(patch, g.f, pos, kernel.data().data(), dy + s * g.f * pos, dcols.data());
          col2im_add(g, dcols.data(), dx.data() + s * g.c * g.h * g.w);
        }
        accumulate(input, dx);
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x, Tape* tape) {
  Tensor out(x.shape());
  auto src = x.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0f ? src[i] : 0.0f;
  if (wants_grad(tape, {&x})) {
    // The mask is taken from the input so later in-place edits of the output
    // cannot change the gradient.
    tape->record("relu", {x}, out, [x, out]() mutable {
      auto g = out.grad();
      auto in = x.data();
      auto dst = x.grad_buffer();
      for (std::size_t i = 0; i < dst.size(); ++i)
        if (in[i] > 0.0f) dst[i] += g[i];
    });
  }
  return out;
}

Tensor max_pool2d(const Tensor& input, std::size_t window, std::size_t stride, Tape* tape) {
  require_rank(input, 4, "max_pool2d", "input");
  if (window == 0 || stride == 0) throw DimensionError("max_pool2d: window and stride must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (window > h || window > w) {
    throw DimensionError("max_pool2d: window " + std::to_string(window) + " larger than input " +
                         shape_string(input.shape()));
  }
  const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  Tensor out({n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  auto src = input.data();
  auto dst = out.mutable_data();
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x, ++o) {
        std::size_t best = base + (y * stride) * w + x * stride;
        for (std::size_t i = 0; i < window; ++i)
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = base + (y * stride + i) * w + x * stride + j;
            if (src[idx] > src[best]) best = idx;
          }
        dst[o] = src[best];
        (*argmax)[o] = best;
      }
  }
  if (wants_grad(tape, {&input})) {
    tape->record("max_pool2d", {input}, out, [input, out, argmax]() mutable {
      auto g = out.grad();
      auto dx = input.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) dx[(*argmax)[i]] += g[i];
    });
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Tape* tape) {
  require_rank(logits, 2, "softmax_cross_entropy", "logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_string(logits.shape()));
  }
  auto z = logits.data();
  auto probs = std::make_shared<std::vector<double>>(n * k);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw InputError("softmax_cross_entropy: label " + std::to_string(label) + " at row " + std::to_string(i) +
                       " outside [0, " + std::to_string(k) + ")");
    }
    const float* row = z.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
    const double log_denom = std::log(denom);
    for (std::size_t j = 0; j < k; ++j) (*probs)[i * k + j] = std::exp(static_cast<double>(row[j]) - mx - log_denom);
    total += log_denom - (static_cast<double>(row[label]) - mx);
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / static_cast<double>(n)));
  check_finite(out, "softmax_cross_entropy");
  if (wants_grad(tape, {&logits})) {
    std::vector<int> owned(labels.begin(), labels.end());
    tape->record("softmax_cross_entropy", {logits}, out,
                 [logits, out, probs, owned = std::move(owned), n, k]() mutable {
                   const double g = out.grad()[0] / static_cast<double>(n);
                   auto dz = logits.grad_buffer();
                   for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t j = 0; j < k; ++j) {
                       const double onehot = static_cast<int>(j) == owned[i] ? 1.0 : 0.0;
                       dz[i * k + j] += static_cast<float>(g * ((*probs)[i * k + j] - onehot));
                     }
                 });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias, Tape* tape) {
  require_rank(x, 2, "add_bias", "input");
  require_rank(bias, 1, "add_bias", "bias");
  const std::size_t n = x.dim(0), m = x.dim(1);
  if (bias.dim(0) != m) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match " +
                         shape_string(x.shape()));
  }
  Tensor out(x.shape());
  auto src = x.data();
  auto b = bias.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) dst[i * m + j] = src[i * m + j] + b[j];
  check_finite(out, "add_bias");
  if (wants_grad(tape, {&x, &bias})) {
    tape->record("add_bias", {x, bias}, out, [x, bias, out, n, m]() mutable {
      auto g = out.grad();
      if (x.requires_grad()) accumulate(x, g);
      if (bias.requires_grad()) {
        std::vector<double> db(m, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) db[j] += g[i * m + j];
        accumulate(bias, db);
      }
    });
  }
  return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias, Tape* tape) {
  if (x.rank() < 2) throw DimensionError("add_channel_bias: input " + shape_string(x.shape()) + " has no channel axis");
  require_rank(bias, 1, "add_channel_bias", "bias");
  const std::size_t n = x.dim(0), c = x.dim(1), inner = x.numel() / (n * c);
  if (bias.dim(0) != c) {
    throw DimensionError("add_channel_bias: bias " + shape_string(bias.shape()) + " does not match " +
                         shape_string(x.shape()));
  }
  Tensor out(x.shape());
  auto src = x.data();
  auto b = bias.data();
  auto dst = out.mutable_data();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (s * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[base + i] = src[base + i] + b[ch];
    }
  check_finite(out, "add_channel_bias");
  if (wants_grad(tape, {&x, &bias})) {
    tape->record("add_channel_bias", {x, bias}, out, [x, bias, out, n, c, inner]() mutable {
      auto g = out.grad();
      if (x.requires_grad()) accumulate(x, g);
      if (bias.requires_grad()) {
        std::vector<double> db(c, 0.0);
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (s * c + ch) * inner;
            for (std::size_t i = 0; i < inner; ++i) db[ch] += g[base + i];
          }
        accumulate(bias, db);
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = x[i] + y[i];
  check_finite(out, "add");
  if (wants_grad(tape, {&a, &b})) {
    tape->record("add", {a, b}, out, [a, b, out]() mutable {
      if (a.requires_grad()) accumulate(a, out.grad());
      if (b.requires_grad()) accumulate(b, out.grad());
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = x[i] * y[i];
  check_finite(out, "mul");
  if (wants_grad(tape, {&a, &b})) {
    tape->record("mul", {a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      // Both products are formed before either buffer is touched so that
      // mul(x, x) sees unmodified operands.
      std::vector<float> ga(g.size()), gb(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] = g[i] * b.data()[i];
        gb[i] = g[i] * a.data()[i];
      }
      if (a.requires_grad()) accumulate(a, ga);
      if (b.requires_grad()) accumulate(b, gb);
    });
  }
  return out;
}

Tensor scale(const Tensor& a, float factor, Tape* tape) {
  Tensor out(a.shape());
  auto x = a.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = x[i] * factor;
  check_finite(out, "scale");
  if (wants_grad(tape, {&a})) {
    tape->record("scale", {a}, out, [a, out, factor]() mutable {
      auto g = out.grad();
      auto dst = a.grad_buffer();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * factor;
    });
  }
  return out;
}

Tensor sum(const Tensor& a, Tape* tape) {
  double total = 0.0;
  for (float v : a.data()) total += v;
  Tensor out = Tensor::scalar(static_cast<float>(total));
  check_finite(out, "sum");
  if (wants_grad(tape, {&a})) {
    tape->record("sum", {a}, out, [a, out]() mutable {
      const float g = out.grad()[0];
      for (auto& d : a.grad_buffer()) d += g;
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape, Tape* tape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  Tensor out(std::move(shape), std::vector<float>(a.data().begin(), a.data().end()));
  if (wants_grad(tape, {&a})) {
    tape->record("reshape", {a}, out, [a, out]() mutable { accumulate(a, out.grad()); });
  }
  return out;
}

}  // namespace noisyforge::ops
