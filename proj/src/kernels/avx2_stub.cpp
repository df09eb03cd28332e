// Non-x86 builds: the AVX2 entry points forward to the scalar reference.
// avx2_supported() is false there, so dispatch never selects them.
#include "outflip/kernels.hpp"

namespace outflip::kernels::avx2 {

float dot(const float* a, const float* b, std::size_t n) noexcept { return scalar::dot(a, b, n); }
double dot(const double* a, const double* b, std::size_t n) noexcept { return scalar::dot(a, b, n); }
void axpy(float alpha, const float* x, float* y, std::size_t n) noexcept { scalar::axpy(alpha, x, y, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept { scalar::axpy(alpha, x, y, n); }
float squared_distance(const float* a, const float* b, std::size_t n) noexcept {
  return scalar::squared_distance(a, b, n);
}
double squared_distance(const double* a, const double* b, std::size_t n) noexcept {
  return scalar::squared_distance(a, b, n);
}
void gemv(const float* a, std::size_t rows, std::size_t cols, const float* x, float* y) noexcept {
  scalar::gemv(a, rows, cols, x, y);
}
void gemv(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) noexcept {
  scalar::gemv(a, rows, cols, x, y);
}

}  // namespace outflip::kernels::avx2
