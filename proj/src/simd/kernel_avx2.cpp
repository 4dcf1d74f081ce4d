// Built with -mavx2. Only raw pointers cross this boundary so that no inline
// library code compiled for AVX2 can be merged into the portable objects.

#include <immintrin.h>

#include <cmath>

#include "impulse/simd.hpp"

namespace impulse::simd::detail {

namespace {

inline void flag_mask(int mask, std::uint8_t code, std::uint8_t* status) {
  while (mask != 0) {
    const int j = __builtin_ctz(static_cast<unsigned>(mask));
    if (status[j] == kEvalOk) status[j] = code;
    mask &= mask - 1;
  }
}

inline int nonfinite_mask(__m256d r) {
  const __m256d diff = _mm256_sub_pd(r, r);
  return _mm256_movemask_pd(_mm256_cmp_pd(diff, _mm256_setzero_pd(), _CMP_NEQ_UQ));
}

template <class F>
inline __m256d per_lane(__m256d a, F f) {
  alignas(32) double v[4];
  _mm256_store_pd(v, a);
  for (double& x : v) x = f(x);
  return _mm256_load_pd(v);
}

}  // namespace

void run_tape_avx2(const TapeInstr* code, std::size_t count, double* slots, std::size_t stride,
                   std::uint8_t* status) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d sign = _mm256_set1_pd(-0.0);
  for (std::size_t i = 0; i < count; ++i) {
    const TapeInstr& in = code[i];
    double* dst = slots + static_cast<std::size_t>(in.dst) * stride;
    const double* pa = slots + static_cast<std::size_t>(in.a) * stride;
    const double* pb = slots + static_cast<std::size_t>(in.b) * stride;

    for (std::size_t k = 0; k < stride; k += kLaneBlock) {
      std::uint8_t* st = status + k;
      __m256d r;
      if (in.op == TapeOp::Const) {
        _mm256_storeu_pd(dst + k, _mm256_set1_pd(in.imm));
        continue;
      }
      const __m256d a = _mm256_loadu_pd(pa + k);
      switch (in.op) {
        case TapeOp::Neg: r = _mm256_xor_pd(a, sign); break;
        case TapeOp::Add: r = _mm256_add_pd(a, _mm256_loadu_pd(pb + k)); break;
        case TapeOp::Sub: r = _mm256_sub_pd(a, _mm256_loadu_pd(pb + k)); break;
        case TapeOp::Mul: r = _mm256_mul_pd(a, _mm256_loadu_pd(pb + k)); break;
        case TapeOp::Div: {
          const __m256d b = _mm256_loadu_pd(pb + k);
          flag_mask(_mm256_movemask_pd(_mm256_cmp_pd(b, zero, _CMP_EQ_OQ)), kEvalDivByZero, st);
          r = _mm256_div_pd(a, b);
          break;
        }
        case TapeOp::Pow: {
          alignas(32) double va[4];
          alignas(32) double vb[4];
          _mm256_store_pd(va, a);
          _mm256_store_pd(vb, _mm256_loadu_pd(pb + k));
          for (int j = 0; j < 4; ++j) va[j] = std::pow(va[j], vb[j]);
          r = _mm256_load_pd(va);
          break;
        }
        case TapeOp::Sin: r = per_lane(a, [](double x) { return std::sin(x); }); break;
        case TapeOp::Cos: r = per_lane(a, [](double x) { return std::cos(x); }); break;
        case TapeOp::Exp: r = per_lane(a, [](double x) { return std::exp(x); }); break;
        case TapeOp::Log:
          flag_mask(_mm256_movemask_pd(_mm256_cmp_pd(a, zero, _CMP_NGT_UQ)), kEvalLogDomain, st);
          r = per_lane(a, [](double x) { return std::log(x); });
          break;
        case TapeOp::Sqrt:
          flag_mask(_mm256_movemask_pd(_mm256_cmp_pd(a, zero, _CMP_LT_OQ)), kEvalSqrtDomain, st);
          r = _mm256_sqrt_pd(a);
          break;
        case TapeOp::Tanh: r = per_lane(a, [](double x) { return std::tanh(x); }); break;
        default: r = a; break;
      }
      flag_mask(nonfinite_mask(r), kEvalNonFinite, st);
      _mm256_storeu_pd(dst + k, r);
    }
  }
}

}  // namespace impulse::simd::detail
