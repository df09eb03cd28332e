#include <atomic>
#include <cstdlib>
#include <string_view>

#include "outflip/kernels.hpp"

namespace outflip::kernels {

namespace {

bool detect_avx2() noexcept {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

SimdLevel initial_level() noexcept {
  const bool has_avx2 = detect_avx2();
  if (const char* env = std::getenv("OUTFLIP_SIMD")) {
    if (std::string_view(env) == "scalar") return SimdLevel::scalar;
  }
  return has_avx2 ? SimdLevel::avx2 : SimdLevel::scalar;
}

std::atomic<SimdLevel>& level_slot() noexcept {
  static std::atomic<SimdLevel> level{initial_level()};
  return level;
}

bool use_avx2() noexcept { return level_slot().load(std::memory_order_relaxed) == SimdLevel::avx2; }

}  // namespace

bool avx2_supported() noexcept {
  static const bool supported = detect_avx2();
  return supported;
}

SimdLevel simd_level() noexcept { return level_slot().load(); }

bool set_simd_level(SimdLevel level) noexcept {
  if (level == SimdLevel::avx2 && !avx2_supported()) return false;
  level_slot().store(level);
  return true;
}

std::string_view to_string(SimdLevel level) noexcept {
  return level == SimdLevel::avx2 ? "avx2" : "scalar";
}

ScopedSimdLevel::ScopedSimdLevel(SimdLevel level) noexcept : previous_(simd_level()) {
  set_simd_level(level);
}

ScopedSimdLevel::~ScopedSimdLevel() { set_simd_level(previous_); }

float dot(std::span<const float> a, std::span<const float> b) noexcept {
  return use_avx2() ? avx2::dot(a.data(), b.data(), a.size()) : scalar::dot(a.data(), b.data(), a.size());
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
  return use_avx2() ? avx2::dot(a.data(), b.data(), a.size()) : scalar::dot(a.data(), b.data(), a.size());
}

void axpy(float alpha, std::span<const float> x, std::span<float> y) noexcept {
  if (use_avx2()) {
    avx2::axpy(alpha, x.data(), y.data(), x.size());
  } else {
    scalar::axpy(alpha, x.data(), y.data(), x.size());
  }
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) noexcept {
  if (use_avx2()) {
    avx2::axpy(alpha, x.data(), y.data(), x.size());
  } else {
    scalar::axpy(alpha, x.data(), y.data(), x.size());
  }
}

float squared_distance(std::span<const float> a, std::span<const float> b) noexcept {
  return use_avx2() ? avx2::squared_distance(a.data(), b.data(), a.size())
                    : scalar::squared_distance(a.data(), b.data(), a.size());
}

double squared_distance(std::span<const double> a, std::span<const double> b) noexcept {
  return use_avx2() ? avx2::squared_distance(a.data(), b.data(), a.size())
                    : scalar::squared_distance(a.data(), b.data(), a.size());
}

void gemv(std::span<const float> a, std::size_t rows, std::span<const float> x,
          std::span<float> y) noexcept {
  if (use_avx2()) {
    avx2::gemv(a.data(), rows, x.size(), x.data(), y.data());
  } else {
    scalar::gemv(a.data(), rows, x.size(), x.data(), y.data());
  }
}

void gemv(std::span<const double> a, std::size_t rows, std::span<const double> x,
          std::span<double> y) noexcept {
  if (use_avx2()) {
    avx2::gemv(a.data(), rows, x.size(), x.data(), y.data());
  } else {
    scalar::gemv(a.data(), rows, x.size(), x.data(), y.data());
  }
}

}  // namespace outflip::kernels
