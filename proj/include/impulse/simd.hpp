#pragma once

#include <cstddef>
#include <cstdint>

#include "impulse/tape_instr.hpp"

namespace impulse::simd {

enum class Backend { Scalar, Avx2 };

/// Lane count the wide kernels operate on; batch strides are multiples of it.
inline constexpr std::size_t kLaneBlock = 4;

bool available(Backend b) noexcept;
const char* name(Backend b) noexcept;

/// Backend used by default: AVX2 when the CPU supports it, unless the
/// IMPULSE_SIMD environment variable says "scalar".
Backend active() noexcept;

/// Overrides the active backend for the whole process (tests, benchmarks).
/// Throws std::invalid_argument if the backend is not available here.
void force(Backend b);

/// Runs `count` instructions over SoA slots: slot s of lane k lives at
/// slots[s * stride + k]. The first `num_vars` slots are inputs filled by the
/// caller. For the wide backend `stride` must be a multiple of kLaneBlock and
/// every lane below `stride` is computed.
void run_tape(Backend b, const TapeInstr* code, std::size_t count, double* slots,
              std::size_t lanes, std::size_t stride, std::uint8_t* status);

namespace detail {
void run_tape_scalar(const TapeInstr* code, std::size_t count, double* slots, std::size_t lanes,
                     std::size_t stride, std::uint8_t* status);
#if defined(__x86_64__) || defined(__i386__)
void run_tape_avx2(const TapeInstr* code, std::size_t count, double* slots, std::size_t stride,
                   std::uint8_t* status);
#endif
}  // namespace detail

}  // namespace impulse::simd
