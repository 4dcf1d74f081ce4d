#include <cmath>

#include "impulse/simd.hpp"

namespace impulse::simd::detail {

namespace {

inline void flag(std::uint8_t& status, std::uint8_t code) {
  if (status == kEvalOk) status = code;
}

}  // namespace

void run_tape_scalar(const TapeInstr* code, std::size_t count, double* slots, std::size_t lanes,
                     std::size_t stride, std::uint8_t* status) {
  for (std::size_t i = 0; i < count; ++i) {
    const TapeInstr& in = code[i];
    double* dst = slots + static_cast<std::size_t>(in.dst) * stride;
    const double* a = slots + static_cast<std::size_t>(in.a) * stride;
    const double* b = slots + static_cast<std::size_t>(in.b) * stride;

    if (in.op == TapeOp::Const) {
      for (std::size_t k = 0; k < lanes; ++k) dst[k] = in.imm;
      continue;
    }
    for (std::size_t k = 0; k < lanes; ++k) {
      double r = 0.0;
      switch (in.op) {
        case TapeOp::Neg: r = -a[k]; break;
        case TapeOp::Add: r = a[k] + b[k]; break;
        case TapeOp::Sub: r = a[k] - b[k]; break;
        case TapeOp::Mul: r = a[k] * b[k]; break;
        case TapeOp::Div:
          if (b[k] == 0.0) flag(status[k], kEvalDivByZero);
          r = a[k] / b[k];
          break;
        case TapeOp::Pow: r = std::pow(a[k], b[k]); break;
        case TapeOp::Sin: r = std::sin(a[k]); break;
        case TapeOp::Cos: r = std::cos(a[k]); break;
        case TapeOp::Exp: r = std::exp(a[k]); break;
        case TapeOp::Log:
          if (!(a[k] > 0.0)) flag(status[k], kEvalLogDomain);
          r = std::log(a[k]);
          break;
        case TapeOp::Sqrt:
          if (a[k] < 0.0) flag(status[k], kEvalSqrtDomain);
          r = std::sqrt(a[k]);
          break;
        case TapeOp::Tanh: r = std::tanh(a[k]); break;
        case TapeOp::Const: break;
      }
      if (!std::isfinite(r)) flag(status[k], kEvalNonFinite);
      dst[k] = r;
    }
  }
}

}  // namespace impulse::simd::detail
