#pragma once

#include <cstddef>
#include <span>
#include <string_view>

// Dense inner loops used by the classifier, the flip scorer, similarity
// queries and LOF. Every routine has a portable scalar reference and an
// AVX2/FMA variant; the variant is picked once at startup from CPUID and can
// be pinned with OUTFLIP_SIMD=scalar|avx2 or set_simd_level().
namespace outflip::kernels {

enum class SimdLevel { scalar, avx2 };

bool avx2_supported() noexcept;
SimdLevel simd_level() noexcept;
// Returns false (and leaves the level unchanged) when the CPU lacks the level.
bool set_simd_level(SimdLevel level) noexcept;
std::string_view to_string(SimdLevel level) noexcept;

// Pins a level for the lifetime of the guard.
class ScopedSimdLevel {
 public:
  explicit ScopedSimdLevel(SimdLevel level) noexcept;
  ~ScopedSimdLevel();
  ScopedSimdLevel(const ScopedSimdLevel&) = delete;
  ScopedSimdLevel& operator=(const ScopedSimdLevel&) = delete;

 private:
  SimdLevel previous_;
};

float dot(std::span<const float> a, std::span<const float> b) noexcept;
double dot(std::span<const double> a, std::span<const double> b) noexcept;

// y += alpha * x
void axpy(float alpha, std::span<const float> x, std::span<float> y) noexcept;
void axpy(double alpha, std::span<const double> x, std::span<double> y) noexcept;

float squared_distance(std::span<const float> a, std::span<const float> b) noexcept;
double squared_distance(std::span<const double> a, std::span<const double> b) noexcept;

// y[r] = sum_c a[r * cols + c] * x[c]; a is row-major rows x cols.
void gemv(std::span<const float> a, std::size_t rows, std::span<const float> x,
          std::span<float> y) noexcept;
void gemv(std::span<const double> a, std::size_t rows, std::span<const double> x,
          std::span<double> y) noexcept;

// Raw per-level entry points, exposed for equivalence testing.
namespace scalar {
float dot(const float* a, const float* b, std::size_t n) noexcept;
double dot(const double* a, const double* b, std::size_t n) noexcept;
void axpy(float alpha, const float* x, float* y, std::size_t n) noexcept;
void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept;
float squared_distance(const float* a, const float* b, std::size_t n) noexcept;
double squared_distance(const double* a, const double* b, std::size_t n) noexcept;
void gemv(const float* a, std::size_t rows, std::size_t cols, const float* x, float* y) noexcept;
void gemv(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) noexcept;
}  // namespace scalar

namespace avx2 {
float dot(const float* a, const float* b, std::size_t n) noexcept;
double dot(const double* a, const double* b, std::size_t n) noexcept;
void axpy(float alpha, const float* x, float* y, std::size_t n) noexcept;
void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept;
float squared_distance(const float* a, const float* b, std::size_t n) noexcept;
double squared_distance(const double* a, const double* b, std::size_t n) noexcept;
void gemv(const float* a, std::size_t rows, std::size_t cols, const float* x, float* y) noexcept;
void gemv(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) noexcept;
}  // namespace avx2

}  // namespace outflip::kernels
