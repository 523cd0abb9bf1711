#include "gaze/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gaze/errors.hpp"
#include "gaze/kernels/kernels.hpp"
#include "gaze/parallel.hpp"

namespace gaze::ops {
namespace {

using kernels::Trans;

template <typename T>
using Node = detail::Node<T>;

template <typename T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* op) {
  if (!t.defined()) throw ValidationError(std::string(op) + ": undefined tensor");
  if (t.shape().rank() != rank) {
    throw ValidationError(std::string(op) + ": expected rank " + std::to_string(rank) +
                          ", got shape " + t.shape().str());
  }
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ValidationError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                          b.shape().str());
  }
}

template <typename T>
std::vector<T> copy_values(const BasicTensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

// Geometry of one conv2d call.
struct ConvGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t out_channels, kernel, dilation, stride, pad;
  std::size_t out_height, out_width;

  std::size_t patch() const { return in_channels * kernel * kernel; }
  std::size_t out_pixels() const { return out_height * out_width; }
  std::size_t in_pixels() const { return height * width; }
  bool pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

// Output columns [lo, hi) whose input column ox * stride + off lies inside [0, width).
inline std::pair<std::size_t, std::size_t> valid_columns(std::ptrdiff_t off, const ConvGeometry& g) {
  const auto s = static_cast<std::ptrdiff_t>(g.stride);
  const auto w = static_cast<std::ptrdiff_t>(g.width);
  const auto ow = static_cast<std::ptrdiff_t>(g.out_width);
  std::ptrdiff_t lo = off >= 0 ? 0 : (-off + s - 1) / s;
  std::ptrdiff_t hi = w - off <= 0 ? 0 : (w - off + s - 1) / s;
  lo = std::min(lo, ow);
  hi = std::clamp(hi, lo, ow);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Decomposes a patch row index into (channel, ky, kx) and the input offsets
// of that kernel tap.
struct Tap {
  std::size_t channel;
  std::ptrdiff_t off_y, off_x;
};

inline Tap tap_of(std::size_t row, const ConvGeometry& g) {
  const std::size_t kk = g.kernel * g.kernel;
  const std::size_t ky = (row % kk) / g.kernel, kx = row % g.kernel;
  return {row / kk, static_cast<std::ptrdiff_t>(ky * g.dilation) - static_cast<std::ptrdiff_t>(g.pad),
          static_cast<std::ptrdiff_t>(kx * g.dilation) - static_cast<std::ptrdiff_t>(g.pad)};
}

// Writes the values of one tap for output pixels [pix, pix + count) to dst
// with the given stride: dst[i * step] = x[c, iy, ix] or 0 outside the image.
template <typename T>
void gather_tap(const T* x, const ConvGeometry& g, const Tap& t, std::size_t pix, std::size_t count,
                T* dst, std::size_t step) {
  const T* plane = x + t.channel * g.in_pixels();
  const auto [lo, hi] = valid_columns(t.off_x, g);
  std::size_t i = 0;
  while (i < count) {
    const std::size_t oy = pix / g.out_width, ox = pix % g.out_width;
    const std::size_t len = std::min(count - i, g.out_width - ox);
    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride) + t.off_y;
    T* d = dst + i * step;
    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
      for (std::size_t q = 0; q < len; ++q) d[q * step] = T(0);
    } else {
      // Output columns [ox, ox + len) split into zero padding, the in-image
      // run [a, b) and trailing padding.
      const T* src = plane + static_cast<std::size_t>(iy) * g.width;
      const std::size_t a = std::clamp(lo, ox, ox + len), b = std::clamp(hi, a, ox + len);
      std::size_t q = 0;
      for (; q < a - ox; ++q) d[q * step] = T(0);
      const T* s = src + (static_cast<std::ptrdiff_t>(a * g.stride) + t.off_x);
      if (step == 1 && g.stride == 1) {
        std::copy(s, s + (b - a), d + q);
        q += b - a;
      } else {
        for (std::size_t o = a; o < b; ++o, ++q, s += g.stride) d[q * step] = *s;
      }
      for (; q < len; ++q) d[q * step] = T(0);
    }
    i += len;
    pix += len;
  }
}

// Packs a block of the patch matrix (rows: taps, columns: output pixels)
// straight from the image, never materializing the full im2col buffer.
template <typename T>
kernels::PackB<T> patch_packer(const T* x, const ConvGeometry& g) {
  return [x, g](std::size_t row0, std::size_t col0, std::size_t kc, std::size_t nc, T* out) {
    for (std::size_t jr = 0; jr < nc; jr += kernels::kGemmNr) {
      const std::size_t nr = std::min(kernels::kGemmNr, nc - jr);
      for (std::size_t p = 0; p < kc; ++p) {
        T* dst = out + p * kernels::kGemmNr;
        gather_tap(x, g, tap_of(row0 + p, g), col0 + jr, nr, dst, 1);
        std::fill(dst + nr, dst + kernels::kGemmNr, T(0));
      }
      out += kc * kernels::kGemmNr;
    }
  };
}

// Same for the transposed patch matrix (rows: output pixels, columns: taps),
// the B operand of the weight gradient.
template <typename T>
kernels::PackB<T> patch_packer_transposed(const T* x, const ConvGeometry& g) {
  return [x, g](std::size_t row0, std::size_t col0, std::size_t kc, std::size_t nc, T* out) {
    for (std::size_t jr = 0; jr < nc; jr += kernels::kGemmNr) {
      const std::size_t nr = std::min(kernels::kGemmNr, nc - jr);
      for (std::size_t j = 0; j < nr; ++j)
        gather_tap(x, g, tap_of(col0 + jr + j, g), row0, kc, out + j, kernels::kGemmNr);
      for (std::size_t j = nr; j < kernels::kGemmNr; ++j)
        for (std::size_t p = 0; p < kc; ++p) out[p * kernels::kGemmNr + j] = T(0);
      out += kc * kernels::kGemmNr;
    }
  };
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
  const std::size_t n = g.out_pixels();
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    T* plane = dx + c * g.in_pixels();
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const T* row = col + ((c * g.kernel + ky) * g.kernel + kx) * n;
        const std::ptrdiff_t off_y = static_cast<std::ptrdiff_t>(ky * g.dilation) -
                                     static_cast<std::ptrdiff_t>(g.pad);
        const std::ptrdiff_t off_x = static_cast<std::ptrdiff_t>(kx * g.dilation) -
                                     static_cast<std::ptrdiff_t>(g.pad);
        const auto [lo, hi] = valid_columns(off_x, g);
        for (std::size_t oy = 0; oy < g.out_height; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride) + off_y;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * g.width;
          const T* src = row + oy * g.out_width;
          if (g.stride == 1) {
            T* shifted = dst + (static_cast<std::ptrdiff_t>(lo) + off_x);
            for (std::size_t ox = lo; ox < hi; ++ox) *shifted++ += src[ox];
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox)
              dst[static_cast<std::ptrdiff_t>(ox * g.stride) + off_x] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ValidationError("matmul: inner extents disagree " + a.shape().str() + " x " +
                          b.shape().str());
  }
  std::vector<T> out(m * n);
  kernels::gemm(Trans::no, Trans::no, m, n, k, T(1), a.data().data(), k, b.data().data(), n, T(0),
                out.data(), n);
  return BasicTensor<T>::make_result("matmul", Shape{m, n}, std::move(out), {a, b},
                                     [m, n, k](Node<T>& o) {
    Node<T>& A = *o.inputs[0];
    Node<T>& B = *o.inputs[1];
    if (A.requires_grad) {
      kernels::gemm(Trans::no, Trans::yes, m, k, n, T(1), o.grad.data(), n, B.value.data(), n,
                    T(1), A.grad_buffer().data(), k);
    }
    if (B.requires_grad) {
      kernels::gemm(Trans::yes, Trans::no, k, n, m, T(1), A.value.data(), k, o.grad.data(), n,
                    T(1), B.grad_buffer().data(), n);
    }
  });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  const auto x = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return BasicTensor<T>::make_result("transpose", Shape{n, m}, std::move(out), {a},
                                     [m, n](Node<T>& o) {
    Node<T>& A = *o.inputs[0];
    auto& ga = A.grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += o.grad[j * m + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise and reductions

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out = copy_values(a);
  kernels::axpy(out.size(), T(1), b.data().data(), out.data());
  return BasicTensor<T>::make_result("add", a.shape(), std::move(out), {a, b}, [](Node<T>& o) {
    for (std::size_t i = 0; i < 2; ++i) {
      Node<T>& in = *o.inputs[i];
      if (in.requires_grad) kernels::axpy(o.grad.size(), T(1), o.grad.data(), in.grad_buffer().data());
    }
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out = copy_values(a);
  kernels::axpy(out.size(), T(-1), b.data().data(), out.data());
  return BasicTensor<T>::make_result("sub", a.shape(), std::move(out), {a, b}, [](Node<T>& o) {
    Node<T>& A = *o.inputs[0];
    Node<T>& B = *o.inputs[1];
    if (A.requires_grad) kernels::axpy(o.grad.size(), T(1), o.grad.data(), A.grad_buffer().data());
    if (B.requires_grad) kernels::axpy(o.grad.size(), T(-1), o.grad.data(), B.grad_buffer().data());
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return BasicTensor<T>::make_result("mul", a.shape(), std::move(out), {a, b}, [](Node<T>& o) {
    Node<T>& A = *o.inputs[0];
    Node<T>& B = *o.inputs[1];
    if (A.requires_grad) {
      auto& ga = A.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      auto& gb = B.grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += o.grad[i] * A.value[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return BasicTensor<T>::make_result("scale", a.shape(), std::move(out), {a},
                                     [factor](Node<T>& o) {
    kernels::axpy(o.grad.size(), factor, o.grad.data(), o.inputs[0]->grad_buffer().data());
  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  double total = 0.0;
  for (T v : a.data()) total += v;
  return BasicTensor<T>::make_result("sum", Shape{}, {static_cast<T>(total)}, {a},
                                     [](Node<T>& o) {
    for (T& g : o.inputs[0]->grad_buffer()) g += o.grad[0];
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  double total = 0.0;
  for (T v : a.data()) total += v;
  const double n = static_cast<double>(a.numel());
  return BasicTensor<T>::make_result("mean", Shape{}, {static_cast<T>(total / n)}, {a},
                                     [n](Node<T>& o) {
    const T g = static_cast<T>(o.grad[0] / n);
    for (T& gi : o.inputs[0]->grad_buffer()) gi += g;
  });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  std::vector<T> out(x.numel());
  kernels::relu(out.size(), x.data().data(), out.data());
  return BasicTensor<T>::make_result("relu", x.shape(), std::move(out), {x}, [](Node<T>& o) {
    kernels::relu_backward(o.value.size(), o.value.data(), o.grad.data(),
                           o.inputs[0]->grad_buffer().data());
  });
}

template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  require_rank(x, 2, "add_bias");
  require_rank(bias, 1, "add_bias");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (bias.dim(0) != cols) {
    throw ValidationError("add_bias: bias " + bias.shape().str() + " does not match " +
                          x.shape().str());
  }
  std::vector<T> out = copy_values(x);
  for (std::size_t r = 0; r < rows; ++r)
    kernels::axpy(cols, T(1), bias.data().data(), out.data() + r * cols);
  return BasicTensor<T>::make_result("add_bias", x.shape(), std::move(out), {x, bias},
                                     [rows, cols](Node<T>& o) {
    Node<T>& X = *o.inputs[0];
    Node<T>& Bn = *o.inputs[1];
    if (X.requires_grad) kernels::axpy(o.grad.size(), T(1), o.grad.data(), X.grad_buffer().data());
    if (Bn.requires_grad) {
      auto& gb = Bn.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        kernels::axpy(cols, T(1), o.grad.data() + r * cols, gb.data());
    }
  });
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
  return add_bias(matmul(x, weight), bias);
}

// ---------------------------------------------------------------------------
// Convolution and pooling

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, const Conv2dOptions& options) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  require_rank(bias, 1, "conv2d");
  const std::size_t k = weight.dim(2);
  if (weight.dim(3) != k) throw ValidationError("conv2d: kernel must be square");
  if (k % 2 == 0) throw ValidationError("conv2d: kernel extent must be odd");
  if (weight.dim(1) != x.dim(1)) {
    throw ValidationError("conv2d: weight " + weight.shape().str() + " does not match input " +
                          x.shape().str());
  }
  if (bias.dim(0) != weight.dim(0)) throw ValidationError("conv2d: bias/weight channel mismatch");
  if (options.dilation == 0 || options.stride == 0)
    throw ValidationError("conv2d: dilation and stride must be positive");

  ConvGeometry g{};
  g.batch = x.dim(0);
  g.in_channels = x.dim(1);
  g.height = x.dim(2);
  g.width = x.dim(3);
  g.out_channels = weight.dim(0);
  g.kernel = k;
  g.dilation = options.dilation;
  g.stride = options.stride;
  const std::size_t k_eff = effective_kernel_extent(k, options.dilation);
  if (options.padding) {
    g.pad = *options.padding;
  } else {
    if (options.stride != 1) throw ValidationError("conv2d: \"same\" padding requires stride 1");
    g.pad = (k_eff - 1) / 2;
  }
  if (g.height + 2 * g.pad < k_eff || g.width + 2 * g.pad < k_eff) {
    throw ValidationError("conv2d: effective kernel " + std::to_string(k_eff) +
                          " larger than padded input " + x.shape().str());
  }
  g.out_height = (g.height + 2 * g.pad - k_eff) / g.stride + 1;
  g.out_width = (g.width + 2 * g.pad - k_eff) / g.stride + 1;

  const std::size_t K = g.patch(), N = g.out_pixels(), C = g.out_channels;
  std::vector<T> out(g.batch * C * N);
  const T* xv = x.data().data();
  const T* wv = weight.data().data();
  const T* bv = bias.data().data();
  parallel_for(g.batch, [&](std::size_t b) {
    const T* xb = xv + b * g.in_channels * g.in_pixels();
    T* ob = out.data() + b * C * N;
    if (g.pointwise()) {
      kernels::gemm(Trans::no, Trans::no, C, N, K, T(1), wv, K, xb, N, T(0), ob, N);
    } else {
      kernels::gemm_packed_b(Trans::no, C, N, K, T(1), wv, K, patch_packer(xb, g), T(0), ob, N);
    }
    for (std::size_t c = 0; c < C; ++c) {
      T* plane = ob + c * N;
      const T bc = bv[c];
      for (std::size_t i = 0; i < N; ++i) plane[i] += bc;
    }
  });

  return BasicTensor<T>::make_result(
      "conv2d", Shape{g.batch, C, g.out_height, g.out_width}, std::move(out), {x, weight, bias},
      [g](Node<T>& o) {
        Node<T>& X = *o.inputs[0];
        Node<T>& W = *o.inputs[1];
        Node<T>& Bn = *o.inputs[2];
        const std::size_t K = g.patch(), N = g.out_pixels(), C = g.out_channels;
        const bool need_w = W.requires_grad, need_b = Bn.requires_grad, need_x = X.requires_grad;
        // Per-image partial sums, reduced afterwards in image order so the
        // result does not depend on the worker count.
        std::vector<T> dw_parts(need_w ? g.batch * C * K : 0);
        std::vector<T> db_parts(need_b ? g.batch * C : 0);
        T* dx = need_x ? X.grad_buffer().data() : nullptr;
        parallel_for(g.batch, [&](std::size_t b) {
          const T* gb = o.grad.data() + b * C * N;
          const T* xb = X.value.data() + b * g.in_channels * g.in_pixels();
          thread_local std::vector<T> dcol_scratch;
          if (need_b) {
            for (std::size_t c = 0; c < C; ++c) {
              T s = 0;
              for (std::size_t i = 0; i < N; ++i) s += gb[c * N + i];
              db_parts[b * C + c] = s;
            }
          }
          if (need_w) {
            T* dwb = dw_parts.data() + b * C * K;
            if (g.pointwise()) {
              kernels::gemm(Trans::no, Trans::yes, C, K, N, T(1), gb, N, xb, N, T(0), dwb, K);
            } else {
              kernels::gemm_packed_b(Trans::no, C, K, N, T(1), gb, N, patch_packer_transposed(xb, g),
                                     T(0), dwb, K);
            }
          }
          if (need_x) {
            T* dxb = dx + b * g.in_channels * g.in_pixels();
            if (g.pointwise()) {
              kernels::gemm(Trans::yes, Trans::no, K, N, C, T(1), W.value.data(), K, gb, N, T(1),
                            dxb, N);
            } else {
              dcol_scratch.resize(K * N);
              kernels::gemm(Trans::yes, Trans::no, K, N, C, T(1), W.value.data(), K, gb, N, T(0),
                            dcol_scratch.data(), N);
              col2im_add(dcol_scratch.data(), g, dxb);
            }
          }
        });
        if (need_w) {
          auto& gw = W.grad_buffer();
          for (std::size_t b = 0; b < g.batch; ++b)
            kernels::axpy(C * K, T(1), dw_parts.data() + b * C * K, gw.data());
        }
        if (need_b) {
          auto& gbias = Bn.grad_buffer();
          for (std::size_t b = 0; b < g.batch; ++b)
            for (std::size_t c = 0; c < C; ++c) gbias[c] += db_parts[b * C + c];
        }
      });
}

template <typename T>
BasicTensor<T> avg_pool2d(const BasicTensor<T>& x, std::size_t window) {
  require_rank(x, 4, "avg_pool2d");
  if (window == 0) throw ValidationError("avg_pool2d: window must be positive");
  const std::size_t planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H < window || W < window) throw ValidationError("avg_pool2d: window larger than input");
  const std::size_t Ho = H / window, Wo = W / window;
  const T inv = T(1) / static_cast<T>(window * window);
  std::vector<T> out(planes * Ho * Wo);
  const auto xv = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        T s = 0;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx)
            s += xv[(p * H + oy * window + dy) * W + ox * window + dx];
        out[(p * Ho + oy) * Wo + ox] = s * inv;
      }
    }
  }
  return BasicTensor<T>::make_result(
      "avg_pool2d", Shape{x.dim(0), x.dim(1), Ho, Wo}, std::move(out), {x},
      [planes, H, W, Ho, Wo, window, inv](Node<T>& o) {
        auto& gx = o.inputs[0]->grad_buffer();
        for (std::size_t p = 0; p < planes; ++p)
          for (std::size_t oy = 0; oy < Ho; ++oy)
            for (std::size_t ox = 0; ox < Wo; ++ox) {
              const T g = o.grad[(p * Ho + oy) * Wo + ox] * inv;
              for (std::size_t dy = 0; dy < window; ++dy)
                for (std::size_t dx = 0; dx < window; ++dx)
                  gx[(p * H + oy * window + dy) * W + ox * window + dx] += g;
            }
      });
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::size_t B = x.dim(0), C = x.dim(1), N = x.dim(2) * x.dim(3);
  std::vector<T> out(B * C);
  const auto xv = x.data();
  for (std::size_t p = 0; p < B * C; ++p) {
    double s = 0;
    for (std::size_t i = 0; i < N; ++i) s += xv[p * N + i];
    out[p] = static_cast<T>(s / static_cast<double>(N));
  }
  return BasicTensor<T>::make_result("global_avg_pool", Shape{B, C}, std::move(out), {x},
                                     [N](Node<T>& o) {
    auto& gx = o.inputs[0]->grad_buffer();
    const T inv = T(1) / static_cast<T>(N);
    for (std::size_t p = 0; p < o.grad.size(); ++p) {
      const T g = o.grad[p] * inv;
      for (std::size_t i = 0; i < N; ++i) gx[p * N + i] += g;
    }
  });
}

template <typename T>
BasicTensor<T> flatten(const BasicTensor<T>& x) {
  require_rank(x, 4, "flatten");
  const std::size_t B = x.dim(0);
  return BasicTensor<T>::make_result("flatten", Shape{B, x.numel() / B}, copy_values(x), {x},
                                     [](Node<T>& o) {
    kernels::axpy(o.grad.size(), T(1), o.grad.data(), o.inputs[0]->grad_buffer().data());
  });
}

template <typename T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& xs) {
  if (xs.empty()) throw ValidationError("concat_channels: no inputs");
  for (const auto& t : xs) require_rank(t, 4, "concat_channels");
  const std::size_t B = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3), N = H * W;
  std::vector<std::size_t> channels;
  std::size_t total = 0;
  for (const auto& t : xs) {
    if (t.dim(0) != B || t.dim(2) != H || t.dim(3) != W) {
      throw ValidationError("concat_channels: incompatible shapes " + xs[0].shape().str() +
                            " and " + t.shape().str());
    }
    channels.push_back(t.dim(1));
    total += t.dim(1);
  }
  std::vector<T> out(B * total * N);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const T* src = xs[i].data().data() + b * channels[i] * N;
      std::copy(src, src + channels[i] * N, out.data() + (b * total + offset) * N);
      offset += channels[i];
    }
  }
  return BasicTensor<T>::make_result("concat_channels", Shape{B, total, H, W}, std::move(out), xs,
                                     [B, N, total, channels](Node<T>& o) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      Node<T>& in = *o.inputs[i];
      if (in.requires_grad) {
        auto& gi = in.grad_buffer();
        for (std::size_t b = 0; b < B; ++b)
          kernels::axpy(channels[i] * N, T(1), o.grad.data() + (b * total + offset) * N,
                        gi.data() + b * channels[i] * N);
      }
      offset += channels[i];
    }
  });
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::size_t begin, std::size_t count) {
  require_rank(x, 4, "slice_channels");
  const std::size_t B = x.dim(0), C = x.dim(1), N = x.dim(2) * x.dim(3);
  if (count == 0 || begin + count > C) throw ValidationError("slice_channels: range out of bounds");
  std::vector<T> out(B * count * N);
  for (std::size_t b = 0; b < B; ++b) {
    const T* src = x.data().data() + (b * C + begin) * N;
    std::copy(src, src + count * N, out.data() + b * count * N);
  }
  return BasicTensor<T>::make_result(
      "slice_channels", Shape{B, count, x.dim(2), x.dim(3)}, std::move(out), {x},
      [B, C, N, begin, count](Node<T>& o) {
        auto& gx = o.inputs[0]->grad_buffer();
        for (std::size_t b = 0; b < B; ++b)
          kernels::axpy(count * N, T(1), o.grad.data() + b * count * N,
                        gx.data() + (b * C + begin) * N);
      });
}

template <typename T>
BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>& xs) {
  if (xs.empty()) throw ValidationError("concat_rows: no inputs");
  for (const auto& t : xs) require_rank(t, 2, "concat_rows");
  const std::size_t D = xs[0].dim(1);
  std::size_t rows = 0;
  std::vector<T> out;
  for (const auto& t : xs) {
    if (t.dim(1) != D) {
      throw ValidationError("concat_rows: column mismatch " + xs[0].shape().str() + " vs " +
                            t.shape().str());
    }
    rows += t.dim(0);
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  return BasicTensor<T>::make_result("concat_rows", Shape{rows, D}, std::move(out), xs,
                                     [](Node<T>& o) {
    std::size_t offset = 0;
    for (auto& in : o.inputs) {
      const std::size_t n = in->value.size();
      if (in->requires_grad) kernels::axpy(n, T(1), o.grad.data() + offset, in->grad_buffer().data());
      offset += n;
    }
  });
}

// ---------------------------------------------------------------------------
// Normalizations

template <typename T>
BasicTensor<T> l2_normalize(const BasicTensor<T>& x, double eps) {
  require_rank(x, 2, "l2_normalize");
  const std::size_t B = x.dim(0), D = x.dim(1);
  std::vector<T> out(B * D);
  std::vector<T> norms(B);
  const auto xv = x.data();
  for (std::size_t r = 0; r < B; ++r) {
    double ss = 0;
    for (std::size_t j = 0; j < D; ++j) ss += static_cast<double>(xv[r * D + j]) * xv[r * D + j];
    const double n = std::sqrt(ss);
    norms[r] = static_cast<T>(n);
    const double denom = std::max(n, eps);
    for (std::size_t j = 0; j < D; ++j) out[r * D + j] = static_cast<T>(xv[r * D + j] / denom);
  }
  return BasicTensor<T>::make_result("l2_normalize", x.shape(), std::move(out), {x},
                                     [B, D, eps, norms](Node<T>& o) {
    auto& gx = o.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < B; ++r) {
      const T* y = o.value.data() + r * D;
      const T* g = o.grad.data() + r * D;
      T* dx = gx.data() + r * D;
      if (static_cast<double>(norms[r]) > eps) {
        double yg = 0;
        for (std::size_t j = 0; j < D; ++j) yg += static_cast<double>(y[j]) * g[j];
        const double inv = 1.0 / norms[r];
        for (std::size_t j = 0; j < D; ++j) dx[j] += static_cast<T>((g[j] - y[j] * yg) * inv);
      } else {
        for (std::size_t j = 0; j < D; ++j) dx[j] += static_cast<T>(g[j] / eps);
      }
    }
  });
}

template <typename T>
BasicTensor<T> batch_standardize(const BasicTensor<T>& x, double eps) {
  require_rank(x, 2, "batch_standardize");
  const std::size_t B = x.dim(0), D = x.dim(1);
  if (B < 2) throw ValidationError("batch_standardize: needs at least 2 rows");
  std::vector<T> out(B * D);
  std::vector<double> inv_std(D);
  const auto xv = x.data();
  for (std::size_t j = 0; j < D; ++j) {
    double mu = 0;
    for (std::size_t i = 0; i < B; ++i) mu += xv[i * D + j];
    mu /= static_cast<double>(B);
    double var = 0;
    for (std::size_t i = 0; i < B; ++i) {
      const double d = xv[i * D + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(B);
    inv_std[j] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < B; ++i)
      out[i * D + j] = static_cast<T>((xv[i * D + j] - mu) * inv_std[j]);
  }
  return BasicTensor<T>::make_result("batch_standardize", x.shape(), std::move(out), {x},
                                     [B, D, inv_std](Node<T>& o) {
    auto& gx = o.inputs[0]->grad_buffer();
    for (std::size_t j = 0; j < D; ++j) {
      double mean_g = 0, mean_gz = 0;
      for (std::size_t i = 0; i < B; ++i) {
        mean_g += o.grad[i * D + j];
        mean_gz += static_cast<double>(o.grad[i * D + j]) * o.value[i * D + j];
      }
      mean_g /= static_cast<double>(B);
      mean_gz /= static_cast<double>(B);
      for (std::size_t i = 0; i < B; ++i) {
        gx[i * D + j] += static_cast<T>(
            inv_std[j] * (o.grad[i * D + j] - mean_g - o.value[i * D + j] * mean_gz));
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Loss primitives

template <typename T>
BasicTensor<T> cross_entropy_excluding_self(const BasicTensor<T>& logits,
                                            const std::vector<std::size_t>& positives) {
  require_rank(logits, 2, "cross_entropy_excluding_self");
  const std::size_t N = logits.dim(0);
  if (logits.dim(1) != N) throw ValidationError("cross_entropy_excluding_self: logits must be square");
  if (N < 2) throw ValidationError("cross_entropy_excluding_self: needs at least 2 rows");
  if (positives.size() != N) throw ValidationError("cross_entropy_excluding_self: positives size");
  for (std::size_t i = 0; i < N; ++i) {
    if (positives[i] >= N || positives[i] == i)
      throw ValidationError("cross_entropy_excluding_self: invalid positive index");
  }
  const auto L = logits.data();
  // Softmax over k != i, kept for the backward pass.
  std::vector<double> prob(N * N, 0.0);
  double total = 0;
  for (std::size_t i = 0; i < N; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < N; ++k)
      if (k != i) m = std::max(m, static_cast<double>(L[i * N + k]));
    double z = 0;
    for (std::size_t k = 0; k < N; ++k) {
      if (k == i) continue;
      prob[i * N + k] = std::exp(L[i * N + k] - m);
      z += prob[i * N + k];
    }
    for (std::size_t k = 0; k < N; ++k) prob[i * N + k] /= z;
    total += (m + std::log(z)) - L[i * N + positives[i]];
  }
  const double loss = total / static_cast<double>(N);
  return BasicTensor<T>::make_result(
      "cross_entropy_excluding_self", Shape{}, {static_cast<T>(loss)}, {logits},
      [N, prob = std::move(prob), positives](Node<T>& o) {
        auto& gl = o.inputs[0]->grad_buffer();
        const double scale_g = o.grad[0] / static_cast<double>(N);
        for (std::size_t i = 0; i < N; ++i) {
          for (std::size_t k = 0; k < N; ++k) {
            if (k == i) continue;
            const double target = k == positives[i] ? 1.0 : 0.0;
            gl[i * N + k] += static_cast<T>(scale_g * (prob[i * N + k] - target));
          }
        }
      });
}

template <typename T>
BasicTensor<T> off_diagonal_square_sum(const BasicTensor<T>& c) {
  require_rank(c, 2, "off_diagonal_square_sum");
  const std::size_t D = c.dim(0);
  if (c.dim(1) != D) throw ValidationError("off_diagonal_square_sum: matrix must be square");
  const auto v = c.data();
  double total = 0;
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j)
      if (i != j) total += static_cast<double>(v[i * D + j]) * v[i * D + j];
  return BasicTensor<T>::make_result("off_diagonal_square_sum", Shape{}, {static_cast<T>(total)},
                                     {c}, [D](Node<T>& o) {
    Node<T>& C = *o.inputs[0];
    auto& gc = C.grad_buffer();
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = 0; j < D; ++j)
        if (i != j) gc[i * D + j] += T(2) * C.value[i * D + j] * o.grad[0];
  });
}

template <typename T>
BasicTensor<T> huber(const BasicTensor<T>& pred, const BasicTensor<T>& target, double delta) {
  require_same_shape(pred, target, "huber");
  if (!(delta > 0)) throw ValidationError("huber: delta must be positive");
  const std::size_t n = pred.numel();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pred[i]) - target[i];
    const double a = std::abs(d);
    total += a <= delta ? 0.5 * d * d : delta * (a - 0.5 * delta);
  }
  return BasicTensor<T>::make_result(
      "huber", Shape{}, {static_cast<T>(total / static_cast<double>(n))}, {pred, target},
      [n, delta](Node<T>& o) {
        Node<T>& P = *o.inputs[0];
        Node<T>& G = *o.inputs[1];
        const double s = o.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
          const double d = static_cast<double>(P.value[i]) - G.value[i];
          const double slope = std::abs(d) <= delta ? d : (d > 0 ? delta : -delta);
          if (P.requires_grad) P.grad_buffer()[i] += static_cast<T>(s * slope);
          if (G.requires_grad) G.grad_buffer()[i] -= static_cast<T>(s * slope);
        }
      });
}

#define GAZE_INSTANTIATE_OPS(T)                                                                  \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                      \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                       \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                            \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                           \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                           \
  template BasicTensor<T> add_bias(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                 const BasicTensor<T>&);                                         \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                 const BasicTensor<T>&, const Conv2dOptions&);                   \
  template BasicTensor<T> avg_pool2d(const BasicTensor<T>&, std::size_t);                        \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                \
  template BasicTensor<T> flatten(const BasicTensor<T>&);                                        \
  template BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>&);                   \
  template BasicTensor<T> slice_channels(const BasicTensor<T>&, std::size_t, std::size_t);       \
  template BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>&);                       \
  template BasicTensor<T> l2_normalize(const BasicTensor<T>&, double);                           \
  template BasicTensor<T> batch_standardize(const BasicTensor<T>&, double);                      \
  template BasicTensor<T> cross_entropy_excluding_self(const BasicTensor<T>&,                    \
                                                       const std::vector<std::size_t>&);         \
  template BasicTensor<T> off_diagonal_square_sum(const BasicTensor<T>&);                        \
  template BasicTensor<T> huber(const BasicTensor<T>&, const BasicTensor<T>&, double);

GAZE_INSTANTIATE_OPS(float)
GAZE_INSTANTIATE_OPS(double)

#undef GAZE_INSTANTIATE_OPS

}  // namespace gaze::ops
