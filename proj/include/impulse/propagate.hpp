#pragma once

// Trajectories of the impulsive system.
//
// integrate_impulsive integrates the transformed equation
//   d xi/dt = F~(xi, u(t), a(t)),  xi(0) = x-block of phi(x0, u(0)),
// and reconstructs (x, u)(t) = phi^{-1}(xi(t), u(t)) on both sides of every
// jump. integrate_smooth integrates the augmented system
//   dx/dt = f~(x, u, a) + sum_k du_k/dt g~_k(x, u)
// directly for continuous piecewise-linear u.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "impulse/linalg.hpp"
#include "impulse/signals.hpp"
#include "impulse/transform.hpp"

namespace impulse {

struct TrajectoryNode {
  double t = 0.0;
  bool jump = false;             // the control jumps here; left and right differ
  Side pointwise = Side::Right;  // side holding the pointwise value
  std::array<Vec, 2> x;          // [0] left, [1] right
  std::array<Vec, 2> u;
  std::array<Vec, 2> xi;

  static std::size_t index(Side s, Side pointwise_side) {
    if (s == Side::Pointwise) s = pointwise_side;
    return s == Side::Left ? 0 : 1;
  }
  const Vec& x_at(Side s) const { return x[index(s, pointwise)]; }
  const Vec& u_at(Side s) const { return u[index(s, pointwise)]; }
  const Vec& xi_at(Side s) const { return xi[index(s, pointwise)]; }
};

/// Per-cell data between node k and node k+1.
struct TrajectoryCell {
  std::size_t piece = 0;  // piece of the control signal used on the cell
  Vec a;                  // ordinary control on the cell
};

struct Trajectory {
  std::vector<TrajectoryNode> nodes;
  std::vector<TrajectoryCell> cells;  // nodes.size() - 1 entries
  ControlSignal u;
  OrdinarySignal a;
  double step = 0.0;
  std::string method;  // "transformed-rk4" or "augmented-rk4"

  std::size_t size() const noexcept { return nodes.size(); }
  std::vector<double> times() const;
  /// Control value inside cell k at time t (one-sided on the cell).
  Vec u_in_cell(std::size_t k, double t) const { return u.piece_value(cells[k].piece, t); }
  /// State at any time: exact at nodes (by side), linear between nodes.
  Vec state_at(double t, Side side = Side::Pointwise) const;
  const TrajectoryNode& back() const { return nodes.back(); }
};

/// Time grid: uniform nodes i*h plus all breakpoints; uniform nodes closer
/// than 1e-3*h to a breakpoint are dropped.
std::vector<double> build_grid(double T, double h, std::span<const double> breakpoints);

/// Aborts when a state norm exceeds this bound.
inline constexpr double kTrajectoryNormGuard = 1e12;

/// `x0` overrides the system's initial state when non-empty.
Trajectory integrate_impulsive(const TransformContext& ctx, const ControlSignal& u, const OrdinarySignal& a,
                               double h, const Vec& x0 = Vec());
Trajectory integrate_smooth(const TransformContext& ctx, const ControlSignal& u, const OrdinarySignal& a, double h,
                            const Vec& x0 = Vec());

/// int_0^T |x_a - x_b|_1 dt on the union grid (trapezoid rule per interval).
double l1_state_distance(const Trajectory& a, const Trajectory& b);
/// Max over the union grid (both sides of every node) of |x_a - x_b|_inf.
double sup_state_distance(const Trajectory& a, const Trajectory& b);

struct ApproximationRow {
  int k = 0;
  double distance = 0.0;
  double ratio = 0.0;  // distance / previous distance; 0 for the first row
};

struct ApproximationTable {
  std::vector<ApproximationRow> rows;
  bool decreasing = true;
};

/// L1 gaps between smooth trajectories of mollify(u, k) and the impulsive
/// trajectory of u.
ApproximationTable approximation_check(const TransformContext& ctx, const ControlSignal& u, const OrdinarySignal& a,
                                       std::span<const int> ks, double h);

struct RobustnessPair {
  Vec x0;
  ControlSignal u;
  Vec x0_hat;
  ControlSignal u_hat;
};

struct RobustnessRow {
  double lhs = 0.0;   // |x(T) - x^(T)| + int |x - x^|
  double rhs = 0.0;   // |x0 - x^0| + |u(0) - u^(0)| + |u(T) - u^(T)| + int |u - u^|
  double ratio = 0.0;
  bool inconsistent = false;  // rhs == 0 but lhs above tolerance
};

struct RobustnessReport {
  std::vector<RobustnessRow> rows;
  double max_ratio = 0.0;
  std::size_t inconsistent = 0;
};

RobustnessReport robustness_gap(const TransformContext& ctx, std::span<const RobustnessPair> pairs,
                                const OrdinarySignal& a, double h, double tol = 1e-9);

/// Seeded random pairs: initial states within x0 +/- radius and continuous
/// piecewise-linear controls in U with `pieces` uniform pieces.
std::vector<RobustnessPair> random_robustness_pairs(const SystemSpec& s, std::size_t count, std::uint64_t seed,
                                                    std::size_t pieces = 4, double radius = 0.5);

}  // namespace impulse
