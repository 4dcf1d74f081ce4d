#include "impulse/tape.hpp"

#include <stdexcept>
#include <string>
#include <unordered_map>

#include "impulse/error.hpp"

namespace impulse {

const char* eval_status_message(std::uint8_t status) noexcept {
  switch (status) {
    case kEvalOk: return "ok";
    case kEvalLogDomain: return "log of nonpositive argument";
    case kEvalSqrtDomain: return "sqrt of negative argument";
    case kEvalDivByZero: return "division by zero";
    case kEvalNonFinite: return "non-finite intermediate value";
  }
  return "unknown evaluation failure";
}

namespace {

TapeOp to_tape_op(Op op) {
  switch (op) {
    case Op::Neg: return TapeOp::Neg;
    case Op::Add: return TapeOp::Add;
    case Op::Sub: return TapeOp::Sub;
    case Op::Mul: return TapeOp::Mul;
    case Op::Div: return TapeOp::Div;
    case Op::Pow: return TapeOp::Pow;
    case Op::Sin: return TapeOp::Sin;
    case Op::Cos: return TapeOp::Cos;
    case Op::Exp: return TapeOp::Exp;
    case Op::Log: return TapeOp::Log;
    case Op::Sqrt: return TapeOp::Sqrt;
    case Op::Tanh: return TapeOp::Tanh;
    default: return TapeOp::Const;
  }
}

class Compiler {
 public:
  Compiler(std::size_t num_vars, std::vector<TapeInstr>& code) : next_(num_vars), num_vars_(num_vars), code_(code) {}

  std::uint32_t emit(const Expr& e) {
    auto it = slot_of_.find(e.id());
    if (it != slot_of_.end()) return it->second;
    std::uint32_t slot = 0;
    switch (e.op()) {
      case Op::Var:
        if (e.var() >= num_vars_) throw std::out_of_range("tape: variable index out of range");
        slot = static_cast<std::uint32_t>(e.var());
        break;
      case Op::Const:
        slot = fresh();
        code_.push_back({TapeOp::Const, slot, 0, 0, e.value()});
        break;
      default: {
        const std::uint32_t a = emit(e.lhs());
        const std::uint32_t b = is_binary(e.op()) ? emit(e.rhs()) : 0;
        slot = fresh();
        code_.push_back({to_tape_op(e.op()), slot, a, b, 0.0});
        break;
      }
    }
    slot_of_.emplace(e.id(), slot);
    return slot;
  }

  std::size_t slots() const { return next_; }

 private:
  std::uint32_t fresh() { return static_cast<std::uint32_t>(next_++); }

  std::size_t next_;
  std::size_t num_vars_;
  std::vector<TapeInstr>& code_;
  std::unordered_map<const ExprNode*, std::uint32_t> slot_of_;
};

std::vector<double>& workspace() {
  thread_local std::vector<double> ws;
  return ws;
}

std::vector<std::uint8_t>& status_workspace() {
  thread_local std::vector<std::uint8_t> ws;
  return ws;
}

}  // namespace

Tape::Tape(std::span<const Expr> outputs, std::size_t num_vars) : num_vars_(num_vars) {
  Compiler c(num_vars, code_);
  outputs_.reserve(outputs.size());
  for (const Expr& e : outputs) outputs_.push_back(c.emit(e));
  num_slots_ = c.slots();
}

void Tape::eval(std::span<const double> vars, std::span<double> out) const {
  if (vars.size() < num_vars_ || out.size() < outputs_.size()) {
    throw std::invalid_argument("tape: buffer size mismatch");
  }
  auto& ws = workspace();
  ws.resize(num_slots_);
  for (std::size_t v = 0; v < num_vars_; ++v) ws[v] = vars[v];
  std::uint8_t status = kEvalOk;
  simd::detail::run_tape_scalar(code_.data(), code_.size(), ws.data(), 1, 1, &status);
  if (status != kEvalOk) throw DomainError(eval_status_message(status));
  for (std::size_t o = 0; o < outputs_.size(); ++o) out[o] = ws[outputs_[o]];
}

bool Tape::eval_batch(std::size_t lanes, std::span<const double> vars, std::span<double> out,
                      std::span<std::uint8_t> status) const {
  return eval_batch(simd::active(), lanes, vars, out, status);
}

bool Tape::eval_batch(simd::Backend backend, std::size_t lanes, std::span<const double> vars,
                      std::span<double> out, std::span<std::uint8_t> status) const {
  if (vars.size() < num_vars_ * lanes || out.size() < outputs_.size() * lanes || status.size() < lanes) {
    throw std::invalid_argument("tape: batch buffer size mismatch");
  }
  if (lanes == 0) return true;
  const std::size_t stride = (lanes + simd::kLaneBlock - 1) / simd::kLaneBlock * simd::kLaneBlock;
  auto& ws = workspace();
  ws.assign(num_slots_ * stride, 0.0);
  for (std::size_t v = 0; v < num_vars_; ++v) {
    for (std::size_t k = 0; k < lanes; ++k) ws[v * stride + k] = vars[v * lanes + k];
    // Padding lanes repeat the last point so they never raise spurious flags.
    for (std::size_t k = lanes; k < stride; ++k) ws[v * stride + k] = vars[v * lanes + lanes - 1];
  }
  auto& st = status_workspace();
  st.assign(stride, kEvalOk);
  simd::run_tape(backend, code_.data(), code_.size(), ws.data(), lanes, stride, st.data());
  bool ok = true;
  for (std::size_t k = 0; k < lanes; ++k) {
    status[k] = st[k];
    ok = ok && st[k] == kEvalOk;
  }
  for (std::size_t o = 0; o < outputs_.size(); ++o) {
    const double* src = ws.data() + static_cast<std::size_t>(outputs_[o]) * stride;
    for (std::size_t k = 0; k < lanes; ++k) out[o * lanes + k] = src[k];
  }
  return ok;
}

void Tape::run(simd::Backend backend, double* slots, std::size_t lanes, std::size_t stride,
               std::uint8_t* status) const {
  simd::run_tape(backend, code_.data(), code_.size(), slots, lanes, stride, status);
}

}  // namespace impulse
