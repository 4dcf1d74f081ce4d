#pragma once

// Problem data of an impulsive control system
//
//   dx/dt = f~(x,u,a) + sum_alpha g~_alpha(x,u) du_alpha/dt,   (x,u)(0) = (x0,u0)
//
// with cost gamma(x(T),u(T)), plus the augmented fields on (x,z) space
//   f = (f~, 0),   g_alpha = (g~_alpha, e_alpha).
//
// Variable order for every expression and compiled tape is
//   x1..xn, u1..um, a1..al
// and the impulsive control u doubles as the extra state z. Field indices
// (alpha, i, j, k) are 0-based in this API.

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "impulse/expr.hpp"
#include "impulse/linalg.hpp"
#include "impulse/tape.hpp"

namespace impulse {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v, double slack = 0.0) const { return v >= lo - slack && v <= hi + slack; }
};

/// Unvalidated problem data as read from a document.
struct SystemDefinition {
  std::size_t n = 0, m = 0, l = 0;
  double T = 0.0;
  std::vector<double> x0, u0;
  std::vector<Interval> U, A;
  std::vector<std::string> f;               // n expressions in (x,u,a)
  std::vector<std::vector<std::string>> g;  // m rows of n expressions in (x,u)
  std::string gamma;                        // expression in (x,u)
};

enum class FieldKind { Drift, Impulse, Bracket };

/// Vector field on the augmented (x,z) space, one expression per component.
struct AugField {
  FieldKind kind = FieldKind::Drift;
  std::size_t alpha = 0;  // Impulse only
  std::vector<Expr> components;
  bool uses_ordinary = false;  // depends on a (f and brackets involving f)
  std::string label;
};

/// Symbolic bracket [A,B] = DB*A - DA*B, derivatives over all n+m state
/// components. Exactly antisymmetric as an expression pair.
AugField make_bracket(const AugField& A, const AugField& B, std::size_t dim);

/// Compiled evaluators. Every tape reads the n+m+l variables in the standard
/// order.
struct SystemTapes {
  Tape g_values;        // [alpha*n + j]
  Tape g_jacobian;      // values as g_values, then d g~_alpha^j / d y_c at m*n + (alpha*n + j)*(n+m) + c
  Tape f_values;        // [j]
  Tape f_jacobian;      // values, then d f~^j / d y_c at n + j*(n+m) + c
  Tape gamma_gradient;  // [gamma, d gamma / d y_c]
  Tape bracket_gf;      // x-block of [g_i,f]: [i*n + j]
  Tape bracket_ggf;     // x-block of [g_j,[g_k,f]]: [(j*m + k)*n + r]
};

class SystemSpec {
 public:
  /// Validates every invariant; throws InputError naming the offending field
  /// and ParseError (wrapped as InputError with the field path) for bad
  /// expressions.
  static SystemSpec build(const SystemDefinition& def);

  std::size_t n() const noexcept;
  std::size_t m() const noexcept;
  std::size_t l() const noexcept;
  std::size_t dim() const noexcept { return n() + m(); }
  std::size_t num_vars() const noexcept { return n() + m() + l(); }

  double T() const noexcept;
  const Vec& x0() const noexcept;
  const Vec& u0() const noexcept;
  const std::vector<Interval>& U() const noexcept;
  const std::vector<Interval>& A() const noexcept;
  const VarTable& names() const noexcept;
  const SystemDefinition& definition() const noexcept;

  const std::vector<Expr>& f_tilde() const noexcept;
  const std::vector<std::vector<Expr>>& g_tilde() const noexcept;
  const Expr& gamma() const noexcept;

  const AugField& f_field() const noexcept;
  const AugField& g_field(std::size_t alpha) const;
  const AugField& bracket_gf(std::size_t i) const;
  const AugField& bracket_ggf(std::size_t j, std::size_t k) const;

  const SystemTapes& tapes() const noexcept;

  bool in_U(const Vec& u, double slack = 0.0) const;
  bool in_A(const Vec& a, double slack = 0.0) const;

  /// Packs (x,u,a) into the standard variable vector; `a` may be empty when
  /// l values are not needed (they are then zero).
  std::vector<double> pack(const Vec& x, const Vec& u, const Vec& a = Vec()) const;

 private:
  struct Data;
  explicit SystemSpec(std::shared_ptr<const Data> d) : d_(std::move(d)) {}
  std::shared_ptr<const Data> d_;
};

/// Parses a JSON system document:
///   {"n","m","l","T","x0","u0","U":[[lo,hi]..],"A":[[lo,hi]..],
///    "f":["expr"..],"g":[["expr"..]..],"gamma":"expr"}
SystemSpec load_system(std::string_view json_text);
SystemSpec load_system_file(const std::string& path);

Vec eval_aug_f(const SystemSpec& s, const Vec& x, const Vec& u, const Vec& a);
Vec eval_aug_g(const SystemSpec& s, std::size_t alpha, const Vec& x, const Vec& u);

/// (n+m)x(n+m) Jacobians in (x,u).
Mat jacobian_aug_f(const SystemSpec& s, const Vec& x, const Vec& u, const Vec& a);
Mat jacobian_aug_g(const SystemSpec& s, std::size_t alpha, const Vec& x, const Vec& u);

double eval_gamma(const SystemSpec& s, const Vec& x, const Vec& u);
Vec grad_gamma(const SystemSpec& s, const Vec& x, const Vec& u);

/// Bracket of two augmented fields at a point. `a` must be given exactly when
/// one of the fields depends on the ordinary control.
Vec lie_bracket(const SystemSpec& s, const AugField& A, const AugField& B, const Vec& x, const Vec& u,
                const std::optional<Vec>& a = std::nullopt);

struct StatePoint {
  Vec x;
  Vec u;
};

struct BracketPairResult {
  std::size_t alpha = 0, beta = 0;
  std::vector<Vec> values;             // per sample, n+m entries; empty on failure
  std::vector<std::string> failures;   // per sample, empty when evaluation succeeded
  double max_norm = 0.0;
  std::size_t argmax = 0;
  bool pass = true;
};

struct BracketReport {
  std::vector<BracketPairResult> pairs;
  std::size_t samples = 0;
  std::size_t domain_errors = 0;
  double tol = 0.0;
  bool pass = true;
};

/// Audits [g_alpha, g_beta] for all alpha < beta over the samples. Domain
/// errors are recorded per sample and do not stop the audit.
BracketReport check_commutativity(const SystemSpec& s, std::span<const StatePoint> samples, double tol = 1e-8);

/// Deterministic Halton points: x in the box x0 +- radius, u in U.
std::vector<StatePoint> sample_state_box(const SystemSpec& s, std::size_t count, double radius,
                                         std::size_t skip = 1);

/// Radical inverse of `index` in the given prime base.
double halton(std::size_t index, unsigned base);

}  // namespace impulse
