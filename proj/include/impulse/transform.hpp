#pragma once

// The straightening change of coordinates
//
//   phi(x, z)        = (x-block of exp(-z^k g_k)(x, z), z)
//   phi^{-1}(xi, eta) = (x-block of exp(eta^k g_k)(xi, 0), eta)
//
// computed by fixed-step RK4 over unit flow time, its Jacobian through the
// variational equation, the transformed drift F~ and the u2-transport.
// When the impulse fields commute, phi sends every g_alpha to the coordinate
// field d/dz_alpha.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "impulse/linalg.hpp"
#include "impulse/system.hpp"

namespace impulse {

struct TransformOptions {
  std::size_t steps = 200;  // RK4 steps per unit flow time, at least 10
  bool memoize = true;      // memo of single-point phi, phi^{-1}, dphi, F~ calls
};

class TransformContext {
 public:
  explicit TransformContext(SystemSpec system, TransformOptions options = {});

  const SystemSpec& system() const noexcept { return system_; }
  std::size_t steps() const noexcept { return options_.steps; }
  const TransformOptions& options() const noexcept { return options_; }

  /// Same system and memo policy with a different step count.
  TransformContext with_steps(std::size_t steps) const;

  struct Memo;
  Memo* memo() const noexcept { return memo_.get(); }

 private:
  SystemSpec system_;
  TransformOptions options_;
  std::shared_ptr<Memo> memo_;
};

/// A point of the augmented space; (x, z) or (xi, eta) depending on the side.
struct AugPoint {
  Vec x;
  Vec z;
};

AugPoint phi(const TransformContext& ctx, const Vec& x, const Vec& z);
AugPoint phi_inverse(const TransformContext& ctx, const Vec& xi, const Vec& eta);

/// Column batches of phi and phi^{-1} (x-blocks only, n x L). Not memoized;
/// failed lanes get a nonzero status.
Mat phi_batch(const TransformContext& ctx, const Mat& X, const Mat& Z, std::vector<std::uint8_t>& status);
Mat phi_inverse_batch(const TransformContext& ctx, const Mat& XI, const Mat& ETA, std::vector<std::uint8_t>& status);

/// (n+m)x(n+m) Jacobian of phi at (x, z). Bottom rows are (0 | I).
Mat dphi(const TransformContext& ctx, const Vec& x, const Vec& z);

/// dphi at every column of (X, Z).
std::vector<Mat> dphi_batch(const TransformContext& ctx, const Mat& X, const Mat& Z, std::vector<std::uint8_t>& status);

/// Jacobian of phi^{-1} at (xi, eta), integrated directly. Used as an
/// independent route to the inverse of dphi.
Mat dphi_inverse(const TransformContext& ctx, const Vec& xi, const Vec& eta);

/// x-block of dphi(x,z) * f(x,z,a) at (x,z) = phi^{-1}(xi,eta). Throws
/// DomainError when the z-block exceeds 1e-10.
Vec transformed_F(const TransformContext& ctx, const Vec& xi, const Vec& eta, const Vec& a);

/// Column-wise batch of transformed_F: XI is n x L, ETA is m x L, A is l x L.
/// Returns n x L; failed lanes get a nonzero status and unspecified values.
Mat transformed_F_batch(const TransformContext& ctx, const Mat& XI, const Mat& ETA, const Mat& A,
                        std::vector<std::uint8_t>& status);

struct FlowboxReport {
  std::vector<double> residuals;  // per sample, max over alpha; NaN on failure
  double max_residual = 0.0;
  std::size_t argmax_sample = 0;
  std::size_t argmax_alpha = 0;
  std::size_t domain_errors = 0;
  double tol = 0.0;
  bool pass = true;
};

/// Residual ||dphi * g_alpha - e_{n+alpha}||_inf over samples and alpha.
FlowboxReport verify_flowbox(const TransformContext& ctx, std::span<const StatePoint> samples,
                             double tol = 1e-6);

struct TransportResult {
  Vec value;
  bool extended = false;  // the z-path left U
};

/// u2-transport of f~ at x from u1 to u2:
///   y = x-block of exp((u2-u1)^k g_k)(x, u1),
///   T = d/dy [x-block of exp((u1-u2)^k g_k)(y, u2)] * f~(y, u2, a).
/// Throws TransportUndefined when an intermediate evaluation fails.
TransportResult transport(const TransformContext& ctx, const Vec& x, const Vec& u1, const Vec& u2, const Vec& a);

/// Batch over columns of U2 (m x L) with common x, u1, a.
Mat transport_batch(const TransformContext& ctx, const Vec& x, const Vec& u1, const Mat& U2, const Vec& a,
                    std::vector<std::uint8_t>& status, std::vector<bool>& extended);

/// Integrates dy/dt = sum w_k g_k(y) for unit time from (x, z_start); returns
/// the full augmented end point. Exposed for the jump rule and for tests.
AugPoint flow(const TransformContext& ctx, const Vec& x, const Vec& z_start, const Vec& w);

}  // namespace impulse
