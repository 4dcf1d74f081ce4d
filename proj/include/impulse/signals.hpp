#pragma once

// Pointwise-defined controls on [0, T].
//
// A ControlSignal stores breakpoints 0 = t_0 < ... < t_K = T with both
// one-sided values at every breakpoint and the side that defines the pointwise
// value there. Between breakpoints the signal is constant (pwc, and then
// left[k+1] == right[k]) or linear from right[k] to left[k+1] (pwl).

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "impulse/linalg.hpp"
#include "impulse/system.hpp"

namespace impulse {

enum class Side { Left, Right, Pointwise };
enum class SignalKind { PiecewiseConstant, PiecewiseLinear };

const char* side_name(Side s) noexcept;

class ControlSignal {
 public:
  ControlSignal() = default;

  /// Validates structure (sizes, increasing breakpoints starting at 0, pwc
  /// continuity between breakpoints, pointwise sides). `pointwise` may be
  /// empty for the default: right everywhere except left at the final time.
  static ControlSignal make(SignalKind kind, std::vector<double> breakpoints, std::vector<Vec> left,
                            std::vector<Vec> right, std::vector<Side> pointwise = {});

  /// Continuous piecewise-linear signal through the given nodes.
  static ControlSignal linear(std::vector<double> times, std::vector<Vec> values);
  /// Constant signal on [0, T].
  static ControlSignal constant(double T, const Vec& value);
  /// Constant `before` with a jump to `after` at tau; the pointwise value at
  /// tau is taken from `side`.
  static ControlSignal step(double T, double tau, const Vec& before, const Vec& after, Side side = Side::Right);

  SignalKind kind() const noexcept { return kind_; }
  std::size_t dim() const noexcept { return dim_; }
  double T() const noexcept { return t_.back(); }
  std::size_t size() const noexcept { return t_.size(); }
  const std::vector<double>& breakpoints() const noexcept { return t_; }
  const Vec& left(std::size_t k) const { return left_.at(k); }
  const Vec& right(std::size_t k) const { return right_.at(k); }
  Side pointwise_side(std::size_t k) const { return side_.at(k); }
  const Vec& pointwise(std::size_t k) const { return side_.at(k) == Side::Left ? left_.at(k) : right_.at(k); }

  /// Throws InputError when t lies outside [0, T].
  Vec value_at(double t, Side side = Side::Pointwise) const;

  /// Value of the interpolant of piece k (between breakpoints k and k+1) at t.
  Vec piece_value(std::size_t k, double t) const;
  /// du/dt on piece k (zero for pwc).
  Vec piece_slope(std::size_t k) const;

  /// Breakpoint index k with t == t_k, or npos.
  std::size_t breakpoint_index(double t) const noexcept;
  /// Piece index containing t (the last piece for t == T).
  std::size_t piece_index(double t) const;

  /// True when the signal has a jump at breakpoint k that matters on [0, T]
  /// (the value outside [0, T] at the end points is ignored unless it is the
  /// pointwise value).
  bool has_jump(std::size_t k) const;
  bool is_continuous() const;
  double total_variation() const;

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  SignalKind kind_ = SignalKind::PiecewiseConstant;
  std::size_t dim_ = 0;
  std::vector<double> t_;
  std::vector<Vec> left_, right_;
  std::vector<Side> side_;
};

/// Checks a control against a system: dimension, horizon, values in U on both
/// sides of every breakpoint and u(0) == u0.
void validate_control(const ControlSignal& u, const SystemSpec& s, const std::string& path = "control");

/// Continuous piecewise-linear approximation: every jump is replaced by a ramp
/// of width min(1/k, gap/3) that ends at the jump when its pointwise value is
/// the right limit and starts there when it is the left limit. Values at 0, T
/// and at every jump instant are kept. L1 error is sum |jump| / (2k).
ControlSignal mollify(const ControlSignal& u, int k);

/// Exact L1 distance  int_0^T sum_i |a_i - b_i| dt  between two signals.
double l1_distance(const ControlSignal& a, const ControlSignal& b);

/// Piecewise-constant ordinary control: values[k] holds on [t_k, t_{k+1}).
class OrdinarySignal {
 public:
  OrdinarySignal() = default;
  static OrdinarySignal make(std::vector<double> breakpoints, std::vector<Vec> values);
  static OrdinarySignal constant(double T, const Vec& value);

  std::size_t dim() const noexcept { return values_.empty() ? 0 : static_cast<std::size_t>(values_[0].size()); }
  double T() const noexcept { return t_.back(); }
  const std::vector<double>& breakpoints() const noexcept { return t_; }
  const std::vector<Vec>& values() const noexcept { return values_; }

  /// Value on the piece containing t; at interior breakpoints the later piece.
  Vec value_at(double t) const;
  std::size_t piece_index(double t) const;

 private:
  std::vector<double> t_;
  std::vector<Vec> values_;
};

void validate_ordinary(const OrdinarySignal& a, const SystemSpec& s, const std::string& path = "ordinary");

/// Bounded-variation map on [t0, T]: piecewise linear with jumps, right
/// continuous at t0 and left continuous at T.
class VariationMap {
 public:
  VariationMap() = default;
  /// knots t0 = s_0 < ... < s_J = T with one-sided values; the value before t0
  /// and after T are discarded to enforce the endpoint conventions.
  static VariationMap make(std::vector<double> knots, std::vector<Vec> left, std::vector<Vec> right);
  static VariationMap constant(double t0, double T, const Vec& value);

  double t0() const noexcept { return s_.front(); }
  double T() const noexcept { return s_.back(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(left_.front().size()); }
  const std::vector<double>& knots() const noexcept { return s_; }
  const Vec& left(std::size_t k) const { return left_.at(k); }
  const Vec& right(std::size_t k) const { return right_.at(k); }

  /// Right-continuous value (left limit at T).
  Vec value_at(double s) const;
  Vec value_at(double s, Side side) const;
  /// Slope on piece k (between knots k and k+1).
  Vec slope(std::size_t k) const;
  /// Interior jumps (tau, right - left).
  std::vector<std::pair<double, Vec>> jumps() const;

 private:
  std::vector<double> s_;
  std::vector<Vec> left_, right_;
};

/// Continuous arc sampled on an increasing time grid.
struct SampledArc {
  std::vector<double> t;
  std::vector<Vec> v;
  Vec at(double time) const;  // linear interpolation
};

/// int_{[t,T]} p2 . d(nu): jump terms plus the trapezoid rule on the
/// absolutely continuous part, over the window [nu.t0(), nu.T()].
double radon_integral(const SampledArc& p2, const VariationMap& nu);

// JSON documents (see the README for the schema).
ControlSignal parse_control(std::string_view json_text);
OrdinarySignal parse_ordinary(std::string_view json_text, double T);
std::string control_to_json(const ControlSignal& u);

ControlSignal load_control_file(const std::string& path, const SystemSpec& s);
OrdinarySignal load_ordinary_file(const std::string& path, const SystemSpec& s);

}  // namespace impulse
