#pragma once

// Plain instruction records shared by every tape kernel backend. Kept free of
// library templates so the ISA-specific translation units stay self-contained.

#include <cstdint>

namespace impulse {

enum class TapeOp : std::uint8_t {
  Const,
  Neg,
  Add,
  Sub,
  Mul,
  Div,
  Pow,
  Sin,
  Cos,
  Exp,
  Log,
  Sqrt,
  Tanh,
};

struct TapeInstr {
  TapeOp op;
  std::uint32_t dst;
  std::uint32_t a;
  std::uint32_t b;
  double imm;
};

/// Per-lane evaluation status. The first failure of a lane is kept.
enum EvalStatus : std::uint8_t {
  kEvalOk = 0,
  kEvalLogDomain = 1,
  kEvalSqrtDomain = 2,
  kEvalDivByZero = 3,
  kEvalNonFinite = 4,
};

}  // namespace impulse
