#include "gaze/kernels/kernels.hpp"

#include <atomic>

namespace gaze::kernels {
namespace {

constexpr detail::KernelTable kScalarTable{
    &detail::scalar::gemm_micro_f32,
    &detail::scalar::dot_f32,
    &detail::scalar::axpy_f32,
    &detail::scalar::relu_f32,
    &detail::scalar::relu_backward_f32,
};

#if defined(GAZE_HAVE_AVX2)
constexpr detail::KernelTable kAvx2Table{
    &detail::avx2::gemm_micro_f32,
    &detail::avx2::dot_f32,
    &detail::avx2::axpy_f32,
    &detail::avx2::relu_f32,
    &detail::avx2::relu_backward_f32,
};
#endif

Isa probe() {
#if defined(GAZE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Isa::avx2;
#endif
  return Isa::scalar;
}

const detail::KernelTable* table_for(Isa isa) {
#if defined(GAZE_HAVE_AVX2)
  if (isa == Isa::avx2) return &kAvx2Table;
#endif
  (void)isa;
  return &kScalarTable;
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{detected_isa()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
  }
  return "unknown";
}

Isa detected_isa() {
  static const Isa isa = probe();
  return isa;
}

Isa active_isa() { return active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (isa == Isa::avx2 && detected_isa() != Isa::avx2) isa = Isa::scalar;
  active().store(isa, std::memory_order_relaxed);
}

namespace detail {
const KernelTable& active_table() { return *table_for(active_isa()); }
}  // namespace detail

float dot(const float* a, const float* b, std::size_t n) { return detail::active_table().dot(a, b, n); }
double dot(const double* a, const double* b, std::size_t n) { return detail::scalar::dot_f64(a, b, n); }

void axpy(std::size_t n, float alpha, const float* x, float* y) {
  detail::active_table().axpy(n, alpha, x, y);
}
void axpy(std::size_t n, double alpha, const double* x, double* y) {
  detail::scalar::axpy_f64(n, alpha, x, y);
}

void relu(std::size_t n, const float* x, float* y) { detail::active_table().relu(n, x, y); }
void relu(std::size_t n, const double* x, double* y) { detail::scalar::relu_f64(n, x, y); }

void relu_backward(std::size_t n, const float* y, const float* gy, float* gx) {
  detail::active_table().relu_backward(n, y, gy, gx);
}
void relu_backward(std::size_t n, const double* y, const double* gy, double* gx) {
  detail::scalar::relu_backward_f64(n, y, gy, gx);
}

}  // namespace gaze::kernels
