#pragma once

// Expressions compiled to a flat register tape. Shared sub-expressions (same
// node) are evaluated once. Evaluation runs either for one point or for a batch
// of points laid out structure-of-arrays, on the scalar or the AVX2 kernel.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "impulse/expr.hpp"
#include "impulse/simd.hpp"
#include "impulse/tape_instr.hpp"

namespace impulse {

const char* eval_status_message(std::uint8_t status) noexcept;

class Tape {
 public:
  Tape() = default;
  Tape(std::span<const Expr> outputs, std::size_t num_vars);

  std::size_t num_vars() const noexcept { return num_vars_; }
  std::size_t num_outputs() const noexcept { return outputs_.size(); }
  std::size_t num_slots() const noexcept { return num_slots_; }
  std::size_t size() const noexcept { return code_.size(); }

  /// One point. Throws DomainError on the first failing operation.
  void eval(std::span<const double> vars, std::span<double> out) const;

  /// `lanes` points: vars[v * lanes + k], out[o * lanes + k]. Writes one
  /// EvalStatus per lane and returns true when every lane succeeded. Values of
  /// failed lanes are unspecified.
  bool eval_batch(std::size_t lanes, std::span<const double> vars, std::span<double> out,
                  std::span<std::uint8_t> status) const;
  bool eval_batch(simd::Backend backend, std::size_t lanes, std::span<const double> vars,
                  std::span<double> out, std::span<std::uint8_t> status) const;

  /// Runs on a caller-owned workspace of num_slots() rows of `stride` doubles
  /// whose first num_vars() rows already hold the inputs. Outputs are read
  /// back from row output_slot(o). `status` has `stride` entries and is only
  /// written for lanes that fail.
  void run(simd::Backend backend, double* slots, std::size_t lanes, std::size_t stride,
           std::uint8_t* status) const;
  std::uint32_t output_slot(std::size_t o) const { return outputs_[o]; }

 private:
  std::size_t num_vars_ = 0;
  std::size_t num_slots_ = 0;
  std::vector<TapeInstr> code_;
  std::vector<std::uint32_t> outputs_;
};

}  // namespace impulse
