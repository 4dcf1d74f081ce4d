#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string_view>

#include "impulse/simd.hpp"

namespace impulse::simd {

namespace {

bool cpu_has_avx2() noexcept {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

Backend initial_backend() noexcept {
  if (const char* env = std::getenv("IMPULSE_SIMD")) {
    if (std::string_view(env) == "scalar") return Backend::Scalar;
  }
  return cpu_has_avx2() ? Backend::Avx2 : Backend::Scalar;
}

std::atomic<Backend>& current() noexcept {
  static std::atomic<Backend> b{initial_backend()};
  return b;
}

}  // namespace

bool available(Backend b) noexcept {
  switch (b) {
    case Backend::Scalar: return true;
    case Backend::Avx2: return cpu_has_avx2();
  }
  return false;
}

const char* name(Backend b) noexcept { return b == Backend::Avx2 ? "avx2" : "scalar"; }

Backend active() noexcept { return current().load(std::memory_order_relaxed); }

void force(Backend b) {
  if (!available(b)) throw std::invalid_argument(std::string("SIMD backend not available: ") + name(b));
  current().store(b, std::memory_order_relaxed);
}

void run_tape(Backend b, const TapeInstr* code, std::size_t count, double* slots, std::size_t lanes,
              std::size_t stride, std::uint8_t* status) {
#if defined(__x86_64__) || defined(__i386__)
  if (b == Backend::Avx2 && stride % kLaneBlock == 0 && lanes > 1) {
    detail::run_tape_avx2(code, count, slots, stride, status);
    return;
  }
#else
  (void)b;
#endif
  detail::run_tape_scalar(code, count, slots, lanes, stride, status);
}

}  // namespace impulse::simd
