#include "outflip/kernels.hpp"

namespace outflip::kernels::scalar {

namespace {

template <class T>
T dot_impl(const T* a, const T* b, std::size_t n) noexcept {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <class T>
void axpy_impl(T alpha, const T* x, T* y, std::size_t n) noexcept {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
T squared_distance_impl(const T* a, const T* b, std::size_t n) noexcept {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

template <class T>
void gemv_impl(const T* a, std::size_t rows, std::size_t cols, const T* x, T* y) noexcept {
  for (std::size_t r = 0; r < rows; ++r) y[r] = dot_impl(a + r * cols, x, cols);
}

}  // namespace

float dot(const float* a, const float* b, std::size_t n) noexcept { return dot_impl(a, b, n); }
double dot(const double* a, const double* b, std::size_t n) noexcept { return dot_impl(a, b, n); }
void axpy(float alpha, const float* x, float* y, std::size_t n) noexcept { axpy_impl(alpha, x, y, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept { axpy_impl(alpha, x, y, n); }
float squared_distance(const float* a, const float* b, std::size_t n) noexcept {
  return squared_distance_impl(a, b, n);
}
double squared_distance(const double* a, const double* b, std::size_t n) noexcept {
  return squared_distance_impl(a, b, n);
}
void gemv(const float* a, std::size_t rows, std::size_t cols, const float* x, float* y) noexcept {
  gemv_impl(a, rows, cols, x, y);
}
void gemv(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) noexcept {
  gemv_impl(a, rows, cols, x, y);
}

}  // namespace outflip::kernels::scalar
