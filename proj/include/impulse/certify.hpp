#pragma once

// Necessary optimality conditions checked along a candidate (x*, u*, a*).
//
// Conditions are evaluated at check points: cell midpoints of the trajectory
// grid, where xi* and pi are given by their cubic Hermite interpolants and
// x* = phi^{-1}(xi*, u*), p = pi * dphi(x*, u*).
//
// Inequality conditions pass when the reported margin is >= -tol. NC-III-SYM
// reports the largest asymmetry of Q and passes when it is <= tol.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "impulse/adjoint.hpp"
#include "impulse/propagate.hpp"
#include "impulse/signals.hpp"
#include "impulse/transform.hpp"

namespace impulse {

enum class Nc1Orientation { Derived, Printed };

struct CertifyOptions {
  double step = 1e-2;            // trajectory grid step
  double tol = 1e-6;             // pass tolerance for every condition
  std::size_t grid_u = 9;        // lattice points per U dimension
  std::size_t grid_a = 9;        // lattice points per A dimension
  std::size_t check_times = 200; // at most this many cell midpoints; 0 checks every cell
  Nc1Orientation nc1 = Nc1Orientation::Derived;
  double sigma0 = 1e-6;          // admissibility radius for one- and two-sided variations
  std::uint64_t seed = 1;        // random NC-III directions
  std::size_t random_directions = 16;
  std::vector<Vec> directions;   // NC-III directions; empty selects the default set
  double transport_tol = 1e-5;   // TRANSPORT against the H-MIN-U slice a = a*
  double bracket_tol = 1e-6;     // NC-II and VARIATION-BV dual routes
  double hessian_tol = 1e-5;     // NC-III Q against the eta-Hessian of F~
  double hessian_step = 1e-4;
};

struct Location {
  double t = 0.0;
  std::optional<Vec> u, a, h;
};

struct ConditionRecord {
  std::string condition;
  bool pass = true;
  double margin = 0.0;
  Location argmin;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::vector<double> times;
  std::optional<double> cross_check;  // worst disagreement between the two routes
  double cross_check_tol = 0.0;
  std::vector<std::string> notes;
};

struct CertificateReport {
  std::vector<ConditionRecord> conditions;
  bool overall_pass = true;

  const ConditionRecord& at(const std::string& id) const;
};

/// u-lattice data at one check point: x_u = phi^{-1}(xi*, u) and the covector
/// A_u^T pi1, A_u the x-block of dphi(x_u, u).
struct LatticeSample {
  Vec u;
  Vec x;
  Vec p1;
  std::uint8_t status = 0;
};

struct CheckPoint {
  double t = 0.0;
  std::size_t cell = 0;
  Vec xi, x, u, a;
  Vec pi;  // (pi1, pi2)
  Vec p;   // (p1, p2)
  double reference = 0.0;  // p1 . f~(x*, u*, a*) = pi1 . F~(xi*, u*, a*)
  std::vector<LatticeSample> lattice;
};

/// Midpoints of the grid cells, evenly thinned to at most `max_count`.
std::vector<double> check_times(const Trajectory& traj, std::size_t max_count);

/// Points at arbitrary times in [0, T]; a time on a node uses the cell to its
/// right (the last cell at T). With grid_u > 0 the u-lattice is filled.
std::vector<CheckPoint> evaluate_check_points(const TransformContext& ctx, const Trajectory& traj,
                                              const AdjointArc& arc, std::span<const double> times,
                                              std::size_t grid_u);

/// Lattice of a box: `count` evenly spaced points per dimension (one when lo == hi).
std::vector<Vec> box_lattice(const std::vector<Interval>& box, std::size_t count);

/// H-MIN-U over the U x A lattice and H-MIN-A over A with u = u*.
/// Requires points evaluated with a u-lattice.
std::pair<ConditionRecord, ConditionRecord> check_hamiltonian_min(const TransformContext& ctx,
                                                                  std::span<const CheckPoint> points,
                                                                  const CertifyOptions& opt);

/// TRANSPORT over the u-lattice with a = a*, compared point by point with the
/// a = a* slice of H-MIN-U.
ConditionRecord check_transport(const TransformContext& ctx, std::span<const CheckPoint> points,
                                const CertifyOptions& opt);

/// Whether u* + sigma0 nu stays in U on [nu.t0(), T]: every grid node, both
/// sides, and every knot of nu. Returns the first violating time.
std::optional<double> first_inadmissible_time(const SystemSpec& s, const Trajectory& traj, const VariationMap& nu,
                                              double sigma0);

/// VARIATION-BV for one variation starting at t = nu.t0(). Throws
/// InadmissibleVariation at the first violating grid time.
ConditionRecord check_variation_bv(const TransformContext& ctx, const Trajectory& traj, const AdjointArc& arc,
                                   const VariationMap& nu, const CertifyOptions& opt);

/// VARIATION-BV with nu = +/- e_i held constant on [t, T] at every check point;
/// inadmissible variations are skipped.
ConditionRecord check_variation_defaults(const TransformContext& ctx, const Trajectory& traj,
                                         std::span<const CheckPoint> points, const CertifyOptions& opt);

/// NC-I and NC-II.
std::pair<ConditionRecord, ConditionRecord> check_nc_first(const TransformContext& ctx, const Trajectory& traj,
                                                           std::span<const CheckPoint> points,
                                                           const CertifyOptions& opt);

/// NC-III-SYM and NC-III-PSD.
std::pair<ConditionRecord, ConditionRecord> check_nc_second(const TransformContext& ctx,
                                                            std::span<const CheckPoint> points,
                                                            const CertifyOptions& opt);

/// Q(t) on the two-sidedly admissible index set J(t); entries outside J are 0.
Mat bracket_matrix(const SystemSpec& s, const CheckPoint& point);

struct Certificate {
  Trajectory trajectory;
  AdjointArc adjoint;
  CertificateReport report;
};

/// integrate_impulsive, solve_transformed_adjoint, pull_back_adjoint, then
/// every checker. Upstream failures raise StageError naming the stage.
Certificate certify(const TransformContext& ctx, const ControlSignal& u, const OrdinarySignal& a,
                    const CertifyOptions& opt = {});

std::string report_to_json(const CertificateReport& report);

}  // namespace impulse
