// Blocked GEMM driver: B is packed into kGemmNr-wide panels, A into
// kGemmMr-high panels (scaled by alpha), and the active micro-kernel consumes
// one register tile at a time. Edge tiles go through a zero-padded scratch
// tile so micro-kernels never see partial shapes.
#include <algorithm>
#include <vector>

#include "gaze/kernels/kernels.hpp"

namespace gaze::kernels {
namespace {

constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = 72;
constexpr std::size_t kNc = 3072;

static_assert(kMc % kGemmMr == 0 && kNc % kGemmNr == 0);

template <typename T>
void pack_a(Trans trans, const T* a, std::size_t lda, std::size_t row0, std::size_t col0,
            std::size_t mc, std::size_t kc, T alpha, T* out) {
  for (std::size_t ir = 0; ir < mc; ir += kGemmMr) {
    const std::size_t mr = std::min(kGemmMr, mc - ir);
    if (trans == Trans::no) {
      // Row-major A: read each row contiguously, scatter into the panel.
      for (std::size_t i = 0; i < mr; ++i) {
        const T* src = a + (row0 + ir + i) * lda + col0;
        for (std::size_t p = 0; p < kc; ++p) out[p * kGemmMr + i] = alpha * src[p];
      }
    } else {
      for (std::size_t p = 0; p < kc; ++p) {
        const T* src = a + (col0 + p) * lda + row0 + ir;
        for (std::size_t i = 0; i < mr; ++i) out[p * kGemmMr + i] = alpha * src[i];
      }
    }
    for (std::size_t i = mr; i < kGemmMr; ++i)
      for (std::size_t p = 0; p < kc; ++p) out[p * kGemmMr + i] = T(0);
    out += kc * kGemmMr;
  }
}

template <typename T>
void pack_b(Trans trans, const T* b, std::size_t ldb, std::size_t row0, std::size_t col0,
            std::size_t kc, std::size_t nc, T* out) {
  for (std::size_t jr = 0; jr < nc; jr += kGemmNr) {
    const std::size_t nr = std::min(kGemmNr, nc - jr);
    if (trans == Trans::no) {
      for (std::size_t p = 0; p < kc; ++p) {
        const T* src = b + (row0 + p) * ldb + col0 + jr;
        T* dst = out + p * kGemmNr;
        std::copy(src, src + nr, dst);
        std::fill(dst + nr, dst + kGemmNr, T(0));
      }
    } else {
      // B stored transposed: each panel column is a contiguous row of b.
      for (std::size_t j = 0; j < nr; ++j) {
        const T* src = b + (col0 + jr + j) * ldb + row0;
        for (std::size_t p = 0; p < kc; ++p) out[p * kGemmNr + j] = src[p];
      }
      for (std::size_t j = nr; j < kGemmNr; ++j)
        for (std::size_t p = 0; p < kc; ++p) out[p * kGemmNr + j] = T(0);
    }
    out += kc * kGemmNr;
  }
}

template <typename T, typename Micro, typename Packer>
void gemm_impl(Micro micro, Trans trans_a, std::size_t m, std::size_t n, std::size_t k, T alpha,
               const T* a, std::size_t lda, const Packer& pack_b_block, T beta, T* c,
               std::size_t ldc) {
  if (m == 0 || n == 0) return;
  const bool skip_product = k == 0 || alpha == T(0);
  // With beta == 0 the first k block overwrites C, so C is never read.
  const bool overwrite_first = beta == T(0) && !skip_product;
  if (beta == T(0) && skip_product) {
    for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, T(0));
  } else if (beta != T(0) && beta != T(1)) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] *= beta;
  }
  if (skip_product) return;

  thread_local std::vector<T> a_pack;
  thread_local std::vector<T> b_pack;
  a_pack.resize(kMc * kKc);
  b_pack.resize(kKc * kNc);
  T tile[kGemmMr * kGemmNr];

  for (std::size_t jc = 0; jc < n; jc += kNc) {
    const std::size_t nc = std::min(kNc, n - jc);
    for (std::size_t pc = 0; pc < k; pc += kKc) {
      const std::size_t kc = std::min(kKc, k - pc);
      pack_b_block(pc, jc, kc, nc, b_pack.data());
      for (std::size_t ic = 0; ic < m; ic += kMc) {
        const std::size_t mc = std::min(kMc, m - ic);
        pack_a(trans_a, a, lda, ic, pc, mc, kc, alpha, a_pack.data());
        for (std::size_t jr = 0; jr < nc; jr += kGemmNr) {
          const std::size_t nr = std::min(kGemmNr, nc - jr);
          const T* bp = b_pack.data() + (jr / kGemmNr) * kc * kGemmNr;
          for (std::size_t ir = 0; ir < mc; ir += kGemmMr) {
            const std::size_t mr = std::min(kGemmMr, mc - ir);
            const T* ap = a_pack.data() + (ir / kGemmMr) * kc * kGemmMr;
            T* cp = c + (ic + ir) * ldc + jc + jr;
            const bool overwrite = overwrite_first && pc == 0;
            if (nr == kGemmNr) {
              micro(kc, ap, bp, cp, ldc, mr, overwrite);
            } else {
              micro(kc, ap, bp, tile, kGemmNr, kGemmMr, true);
              for (std::size_t i = 0; i < mr; ++i)
                for (std::size_t j = 0; j < nr; ++j)
                  cp[i * ldc + j] = overwrite ? tile[i * kGemmNr + j] : cp[i * ldc + j] + tile[i * kGemmNr + j];
            }
          }
        }
      }
    }
  }
}

template <typename T>
auto dense_packer(Trans trans_b, const T* b, std::size_t ldb) {
  return [=](std::size_t row0, std::size_t col0, std::size_t kc, std::size_t nc, T* out) {
    pack_b(trans_b, b, ldb, row0, col0, kc, nc, out);
  };
}

}  // namespace

void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha,
          const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
          std::size_t ldc) {
  gemm_impl<float>(detail::active_table().gemm_micro, trans_a, m, n, k, alpha, a, lda,
                   dense_packer(trans_b, b, ldb), beta, c, ldc);
}

void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
          double* c, std::size_t ldc) {
  gemm_impl<double>(&detail::scalar::gemm_micro_f64, trans_a, m, n, k, alpha, a, lda,
                    dense_packer(trans_b, b, ldb), beta, c, ldc);
}

void gemm_packed_b(Trans trans_a, std::size_t m, std::size_t n, std::size_t k, float alpha,
                   const float* a, std::size_t lda, const PackB<float>& pack_b, float beta,
                   float* c, std::size_t ldc) {
  gemm_impl<float>(detail::active_table().gemm_micro, trans_a, m, n, k, alpha, a, lda, pack_b,
                   beta, c, ldc);
}

void gemm_packed_b(Trans trans_a, std::size_t m, std::size_t n, std::size_t k, double alpha,
                   const double* a, std::size_t lda, const PackB<double>& pack_b, double beta,
                   double* c, std::size_t ldc) {
  gemm_impl<double>(&detail::scalar::gemm_micro_f64, trans_a, m, n, k, alpha, a, lda, pack_b,
                    beta, c, ldc);
}

}  // namespace gaze::kernels
