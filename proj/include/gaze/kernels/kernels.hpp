#pragma once

// Inner-loop kernels behind the tensor ops.
//
// Every kernel has a portable scalar reference implementation. On x86-64 an
// AVX2/FMA variant is compiled into its own translation unit and selected at
// runtime when the CPU supports it. Only the float path is vectorized; the
// double path (gradient verification) always runs the scalar reference.

#include <cstddef>
#include <functional>
#include <string_view>

namespace gaze::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

/// Best instruction set supported by this CPU and build.
Isa detected_isa();

/// Instruction set currently used for float kernels.
Isa active_isa();

/// Overrides the runtime choice. Requesting an unsupported ISA falls back to
/// scalar. Intended for equivalence tests and benchmarking.
void set_active_isa(Isa isa);

/// RAII override of the active ISA.
class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa) : previous_(active_isa()) { set_active_isa(isa); }
  ~ScopedIsa() { set_active_isa(previous_); }
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa previous_;
};

enum class Trans { no, yes };

// Register tile of the GEMM micro-kernels. Packed panels use the same layout
// for every ISA so a single packing routine feeds all of them.
inline constexpr std::size_t kGemmMr = 6;
inline constexpr std::size_t kGemmNr = 16;

/// C = alpha * op(A) * op(B) + beta * C, row-major with leading dimensions.
/// op(A) is m x k, op(B) is k x n. When beta == 0 the prior contents of C are
/// ignored (NaN in C does not propagate).
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha,
          const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
          std::size_t ldc);
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
          double* c, std::size_t ldc);

/// Fills the packed panel layout for the block op(B)[row0 : row0+kc, col0 : col0+nc]:
/// ceil(nc / kGemmNr) panels, each kc rows of kGemmNr values, zero beyond nc.
/// Lets callers generate B on the fly (implicit im2col) instead of storing it.
template <typename T>
using PackB = std::function<void(std::size_t row0, std::size_t col0, std::size_t kc, std::size_t nc, T* out)>;

/// gemm with op(B) supplied by a packing callback.
void gemm_packed_b(Trans trans_a, std::size_t m, std::size_t n, std::size_t k, float alpha,
                   const float* a, std::size_t lda, const PackB<float>& pack_b, float beta,
                   float* c, std::size_t ldc);
void gemm_packed_b(Trans trans_a, std::size_t m, std::size_t n, std::size_t k, double alpha,
                   const double* a, std::size_t lda, const PackB<double>& pack_b, double beta,
                   double* c, std::size_t ldc);

float dot(const float* a, const float* b, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);

/// y += alpha * x
void axpy(std::size_t n, float alpha, const float* x, float* y);
void axpy(std::size_t n, double alpha, const double* x, double* y);

/// y = max(x, 0)
void relu(std::size_t n, const float* x, float* y);
void relu(std::size_t n, const double* x, double* y);

/// gx += y > 0 ? gy : 0, where y is the relu output.
void relu_backward(std::size_t n, const float* y, const float* gy, float* gx);
void relu_backward(std::size_t n, const double* y, const double* gy, double* gx);

namespace detail {

// Micro-kernel: C[0:rows, 0:kGemmNr] (+)= Apanel * Bpanel over kc steps, with
// rows <= kGemmMr. Apanel is kc groups of kGemmMr values, Bpanel kc groups of
// kGemmNr values. With overwrite the product replaces C instead of adding.
using MicroKernelF32 = void (*)(std::size_t kc, const float* a_panel, const float* b_panel,
                                float* c, std::size_t ldc, std::size_t rows, bool overwrite);
using DotF32 = float (*)(const float*, const float*, std::size_t);
using AxpyF32 = void (*)(std::size_t, float, const float*, float*);
using ReluF32 = void (*)(std::size_t, const float*, float*);
using ReluBackwardF32 = void (*)(std::size_t, const float*, const float*, float*);

struct KernelTable {
  MicroKernelF32 gemm_micro;
  DotF32 dot;
  AxpyF32 axpy;
  ReluF32 relu;
  ReluBackwardF32 relu_backward;
};

const KernelTable& active_table();

namespace scalar {
void gemm_micro_f32(std::size_t kc, const float* a_panel, const float* b_panel, float* c,
                    std::size_t ldc, std::size_t rows, bool overwrite);
void gemm_micro_f64(std::size_t kc, const double* a_panel, const double* b_panel, double* c,
                    std::size_t ldc, std::size_t rows, bool overwrite);
float dot_f32(const float* a, const float* b, std::size_t n);
double dot_f64(const double* a, const double* b, std::size_t n);
void axpy_f32(std::size_t n, float alpha, const float* x, float* y);
void axpy_f64(std::size_t n, double alpha, const double* x, double* y);
void relu_f32(std::size_t n, const float* x, float* y);
void relu_f64(std::size_t n, const double* x, double* y);
void relu_backward_f32(std::size_t n, const float* y, const float* gy, float* gx);
void relu_backward_f64(std::size_t n, const double* y, const double* gy, double* gx);
}  // namespace scalar

#if defined(GAZE_HAVE_AVX2)
namespace avx2 {
void gemm_micro_f32(std::size_t kc, const float* a_panel, const float* b_panel, float* c,
                    std::size_t ldc, std::size_t rows, bool overwrite);
float dot_f32(const float* a, const float* b, std::size_t n);
void axpy_f32(std::size_t n, float alpha, const float* x, float* y);
void relu_f32(std::size_t n, const float* x, float* y);
void relu_backward_f32(std::size_t n, const float* y, const float* gy, float* gx);
}  // namespace avx2
#endif

}  // namespace detail
}  // namespace gaze::kernels
