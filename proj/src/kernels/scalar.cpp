#include "gaze/kernels/kernels.hpp"

namespace gaze::kernels::detail::scalar {
namespace {

template <typename T>
void gemm_micro(std::size_t kc, const T* a_panel, const T* b_panel, T* c, std::size_t ldc,
                std::size_t rows, bool overwrite) {
  T acc[kGemmMr][kGemmNr] = {};
  for (std::size_t p = 0; p < kc; ++p) {
    const T* a = a_panel + p * kGemmMr;
    const T* b = b_panel + p * kGemmNr;
    for (std::size_t i = 0; i < kGemmMr; ++i) {
      const T ai = a[i];
      for (std::size_t j = 0; j < kGemmNr; ++j) acc[i][j] += ai * b[j];
    }
  }
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < kGemmNr; ++j) c[i * ldc + j] = overwrite ? acc[i][j] : c[i * ldc + j] + acc[i][j];
}

template <typename T>
T dot_impl(const T* a, const T* b, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
void axpy_impl(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void relu_impl(std::size_t n, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward_impl(std::size_t n, const T* y, const T* gy, T* gx) {
  for (std::size_t i = 0; i < n; ++i)
    if (y[i] > T(0)) gx[i] += gy[i];
}

}  // namespace

void gemm_micro_f32(std::size_t kc, const float* a, const float* b, float* c, std::size_t ldc,
                    std::size_t rows, bool overwrite) {
  gemm_micro(kc, a, b, c, ldc, rows, overwrite);
}
void gemm_micro_f64(std::size_t kc, const double* a, const double* b, double* c, std::size_t ldc,
                    std::size_t rows, bool overwrite) {
  gemm_micro(kc, a, b, c, ldc, rows, overwrite);
}
float dot_f32(const float* a, const float* b, std::size_t n) { return dot_impl(a, b, n); }
double dot_f64(const double* a, const double* b, std::size_t n) { return dot_impl(a, b, n); }
void axpy_f32(std::size_t n, float alpha, const float* x, float* y) { axpy_impl(n, alpha, x, y); }
void axpy_f64(std::size_t n, double alpha, const double* x, double* y) { axpy_impl(n, alpha, x, y); }
void relu_f32(std::size_t n, const float* x, float* y) { relu_impl(n, x, y); }
void relu_f64(std::size_t n, const double* x, double* y) { relu_impl(n, x, y); }
void relu_backward_f32(std::size_t n, const float* y, const float* gy, float* gx) {
  relu_backward_impl(n, y, gy, gx);
}
void relu_backward_f64(std::size_t n, const double* y, const double* gy, double* gx) {
  relu_backward_impl(n, y, gy, gx);
}

}  // namespace gaze::kernels::detail::scalar
