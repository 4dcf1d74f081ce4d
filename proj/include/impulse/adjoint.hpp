#pragma once

// Adjoint arcs.
//
// The transformed adjoint pi = (pi1, pi2) solves, backwards from
//   pi(T) = grad Psi(xi(T), eta(T)),   Psi = gamma o phi^{-1},
// the linear equation
//   d pi1/dt = -pi1 D_xi F~,   d pi2/dt = -pi1 D_eta F~.
// The adjoint of the original system is recovered as p = pi * dphi(x, u),
// on both sides of every control jump.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "impulse/linalg.hpp"
#include "impulse/propagate.hpp"
#include "impulse/transform.hpp"

namespace impulse {

/// Condition-number bound for inverting dphi.
inline constexpr double kJacobianConditionGuard = 1e12;

/// Row gradient of Psi = gamma o phi^{-1} at (xi, eta), n+m entries.
/// Throws DomainError when dphi at the reconstructed point is too ill-conditioned.
Vec grad_Psi(const TransformContext& ctx, const Vec& xi, const Vec& eta);

/// Jacobians of F~ in (xi, eta) by central differences, one n x (n+m) matrix
/// per column of (XI, ETA, A). All columns are evaluated as one lane batch.
/// Failed columns get a nonzero status.
std::vector<Mat> transformed_jacobian_batch(const TransformContext& ctx, const Mat& XI, const Mat& ETA, const Mat& A,
                                            std::vector<std::uint8_t>& status);
Mat transformed_jacobian(const TransformContext& ctx, const Vec& xi, const Vec& eta, const Vec& a);

struct AdjointNode {
  double t = 0.0;
  bool jump = false;
  Side pointwise = Side::Right;
  Vec pi;                 // (pi1, pi2), continuous in time
  std::array<Vec, 2> p;   // (p1, p2) on the left [0] and right [1]; empty until pulled back

  const Vec& p_at(Side s) const { return p[TrajectoryNode::index(s, pointwise)]; }
};

/// Time derivatives of xi and pi at the start [0] and end [1] of one cell,
/// on the cell's side of any jump.
struct AdjointCell {
  std::array<Vec, 2> dxi;
  std::array<Vec, 2> dpi;
};

struct AdjointArc {
  std::vector<AdjointNode> nodes;
  std::vector<AdjointCell> cells;  // nodes.size() - 1 entries
  std::size_t n = 0, m = 0;
  bool pulled_back = false;
  double terminal_residual = 0.0;  // |p(T) - grad gamma(x(T), u(T))|_inf after pull-back

  std::size_t size() const noexcept { return nodes.size(); }
  /// pi at any time, linear between nodes.
  Vec pi_at(double t) const;
  /// Cubic Hermite interpolants inside cell k, t in [t_k, t_{k+1}].
  Vec pi_in_cell(std::size_t k, double t) const;
  Vec xi_in_cell(const Trajectory& traj, std::size_t k, double t) const;
};

/// Backward RK4 over the trajectory grid. The state inside each cell is
/// interpolated by the cubic Hermite polynomial through the node values and
/// slopes, with the control on the cell's side.
AdjointArc solve_transformed_adjoint(const TransformContext& ctx, const Trajectory& traj);

/// Fills p = pi * dphi(x, u) at every node and side. Throws InputError when
/// the grids differ and DomainError when |p(T) - grad gamma| exceeds 1e-7.
void pull_back_adjoint(const TransformContext& ctx, AdjointArc& arc, const Trajectory& traj);

/// Lifted point (x, z, w) with w the costate, n+m entries.
struct LiftedPoint {
  Vec x;
  Vec z;
  Vec w;
};

struct LiftedPairResult {
  std::size_t i = 0, j = 0;
  double max_norm = 0.0;
  std::size_t argmax = 0;
};

struct LiftedReport {
  std::vector<LiftedPairResult> pairs;
  double max_norm = 0.0;
  std::size_t samples = 0;
  std::size_t domain_errors = 0;
  double tol = 0.0;
  bool pass = true;
};

/// Bracket of the lifted fields  G_i(y, w) = (g_i(y), -Dg_i(y)^T w)  at one point.
Vec lifted_bracket(const SystemSpec& s, std::size_t i, std::size_t j, const LiftedPoint& point);

/// Max norm of [G_i, G_j] over all pairs i < j and samples.
LiftedReport audit_lifted_commutativity(const SystemSpec& s, std::span<const LiftedPoint> samples, double tol = 1e-8);

/// Deterministic samples: (x, z) as sample_state_box, w in [-1, 1]^(n+m).
std::vector<LiftedPoint> sample_lifted_points(const SystemSpec& s, std::size_t count, double radius);

}  // namespace impulse
