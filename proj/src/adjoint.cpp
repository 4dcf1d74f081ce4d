#include "impulse/adjoint.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

#include "impulse/error.hpp"
#include "impulse/parallel.hpp"
#include "impulse/tape.hpp"

namespace impulse {

namespace {

double fd_step(double v) { return 6e-6 * std::max(1.0, std::abs(v)); }

std::string at_time(double t) { return " at t=" + std::to_string(t); }

Vec hermite(const Vec& y0, const Vec& y1, const Vec& d0, const Vec& d1, double t0, double t1, double t) {
  const double dt = t1 - t0, th = (t - t0) / dt;
  if (th == 0.0) return y0;
  if (th == 1.0) return y1;
  const double th2 = th * th, th3 = th2 * th;
  return (2.0 * th3 - 3.0 * th2 + 1.0) * y0 + (th3 - 2.0 * th2 + th) * dt * d0 + (3.0 * th2 - 2.0 * th3) * y1 +
         (th3 - th2) * dt * d1;
}

}  // namespace

Vec grad_Psi(const TransformContext& ctx, const Vec& xi, const Vec& eta) {
  const SystemSpec& s = ctx.system();
  const AugPoint xz = phi_inverse(ctx, xi, eta);
  const Mat J = dphi(ctx, xz.x, xz.z);
  Eigen::JacobiSVD<Mat> svd(J);
  const auto& sv = svd.singularValues();
  const double cond = sv[sv.size() - 1] > 0.0 ? sv[0] / sv[sv.size() - 1] : INFINITY;
  if (!(cond <= kJacobianConditionGuard)) {
    throw DomainError("dphi is singular or ill-conditioned (condition number " + std::to_string(cond) + ")");
  }
  const Vec g = grad_gamma(s, xz.x, xz.z);
  // Row vector g^T J^{-1}.
  return J.transpose().partialPivLu().solve(g);
}

std::vector<Mat> transformed_jacobian_batch(const TransformContext& ctx, const Mat& XI, const Mat& ETA, const Mat& A,
                                            std::vector<std::uint8_t>& status) {
  const SystemSpec& s = ctx.system();
  const Eigen::Index n = static_cast<Eigen::Index>(s.n()), dim = static_cast<Eigen::Index>(s.dim());
  const Eigen::Index L = XI.cols();
  const Eigen::Index lanes = L * 2 * dim;
  Mat PX(n, lanes), PE(ETA.rows(), lanes), PA(A.rows(), lanes);
  Mat width(dim, L);
  for (Eigen::Index k = 0; k < L; ++k) {
    Vec point(dim);
    point << XI.col(k), ETA.col(k);
    for (Eigen::Index c = 0; c < dim; ++c) {
      const double h = fd_step(point[c]);
      Vec up = point, down = point;
      up[c] += h;
      down[c] -= h;
      width(c, k) = up[c] - down[c];
      const Eigen::Index lu = (k * dim + c) * 2, ld = lu + 1;
      PX.col(lu) = up.head(n);
      PE.col(lu) = up.tail(dim - n);
      PX.col(ld) = down.head(n);
      PE.col(ld) = down.tail(dim - n);
      PA.col(lu) = A.col(k);
      PA.col(ld) = A.col(k);
    }
  }
  std::vector<std::uint8_t> st;
  const Mat F = transformed_F_batch(ctx, PX, PE, PA, st);
  status.assign(static_cast<std::size_t>(L), kEvalOk);
  std::vector<Mat> out(static_cast<std::size_t>(L), Mat::Zero(n, dim));
  for (Eigen::Index k = 0; k < L; ++k) {
    for (Eigen::Index c = 0; c < dim; ++c) {
      const Eigen::Index lu = (k * dim + c) * 2, ld = lu + 1;
      for (Eigen::Index lane : {lu, ld}) {
        if (st[static_cast<std::size_t>(lane)] != kEvalOk && status[static_cast<std::size_t>(k)] == kEvalOk) {
          status[static_cast<std::size_t>(k)] = st[static_cast<std::size_t>(lane)];
        }
      }
      out[static_cast<std::size_t>(k)].col(c) = (F.col(lu) - F.col(ld)) / width(c, k);
    }
  }
  return out;
}

Mat transformed_jacobian(const TransformContext& ctx, const Vec& xi, const Vec& eta, const Vec& a) {
  std::vector<std::uint8_t> status;
  auto J = transformed_jacobian_batch(ctx, xi, eta, a, status);
  if (status[0] != kEvalOk) throw DomainError(std::string("transformed Jacobian: ") + eval_status_message(status[0]));
  return J[0];
}

Vec AdjointArc::pi_at(double t) const {
  if (nodes.empty() || t < nodes.front().t || t > nodes.back().t) throw InputError("t", "time outside the adjoint arc");
  auto it = std::lower_bound(nodes.begin(), nodes.end(), t, [](const AdjointNode& a, double v) { return a.t < v; });
  if (it->t == t) return it->pi;
  const AdjointNode& hi = *it;
  const AdjointNode& lo = *(it - 1);
  const double theta = (t - lo.t) / (hi.t - lo.t);
  return (1.0 - theta) * lo.pi + theta * hi.pi;
}

Vec AdjointArc::pi_in_cell(std::size_t k, double t) const {
  if (k >= cells.size()) throw InputError("cell", "cell index outside the adjoint arc");
  const AdjointCell& c = cells[k];
  return hermite(nodes[k].pi, nodes[k + 1].pi, c.dpi[0], c.dpi[1], nodes[k].t, nodes[k + 1].t, t);
}

Vec AdjointArc::xi_in_cell(const Trajectory& traj, std::size_t k, double t) const {
  if (k >= cells.size() || traj.size() != nodes.size()) throw InputError("cell", "cell index outside the adjoint arc");
  const AdjointCell& c = cells[k];
  return hermite(traj.nodes[k].xi[1], traj.nodes[k + 1].xi[0], c.dxi[0], c.dxi[1], nodes[k].t, nodes[k + 1].t, t);
}

AdjointArc solve_transformed_adjoint(const TransformContext& ctx, const Trajectory& traj) {
  const SystemSpec& s = ctx.system();
  const std::size_t N = traj.size(), n = s.n(), m = s.m();
  if (N < 2) throw InputError("trajectory", "trajectory has fewer than two nodes");
  const std::size_t C = N - 1;
  const Eigen::Index ni = static_cast<Eigen::Index>(n), mi = static_cast<Eigen::Index>(m);

  // Node slopes on each cell's side: F~ at (xi_k, u_cell(t_k)) and (xi_{k+1}, u_cell(t_{k+1})).
  Mat XI(ni, 2 * C), ETA(mi, 2 * C), AV(static_cast<Eigen::Index>(s.l()), 2 * C);
  for (std::size_t k = 0; k < C; ++k) {
    const auto c0 = static_cast<Eigen::Index>(2 * k), c1 = c0 + 1;
    XI.col(c0) = traj.nodes[k].xi[1];
    XI.col(c1) = traj.nodes[k + 1].xi[0];
    ETA.col(c0) = traj.u_in_cell(k, traj.nodes[k].t);
    ETA.col(c1) = traj.u_in_cell(k, traj.nodes[k + 1].t);
    AV.col(c0) = traj.cells[k].a;
    AV.col(c1) = traj.cells[k].a;
  }
  std::vector<std::uint8_t> status;
  const Mat slopes = transformed_F_batch(ctx, XI, ETA, AV, status);
  for (std::size_t c = 0; c < status.size(); ++c) {
    if (status[c] != kEvalOk) throw DomainError(std::string("transformed drift") + at_time(traj.nodes[c / 2 + c % 2].t));
  }

  // Jacobians at the start, Hermite midpoint and end of every cell.
  Mat JX(ni, 3 * C), JE(mi, 3 * C), JA(static_cast<Eigen::Index>(s.l()), 3 * C);
  for (std::size_t k = 0; k < C; ++k) {
    const auto c = static_cast<Eigen::Index>(3 * k);
    const double t0 = traj.nodes[k].t, t1 = traj.nodes[k + 1].t, dt = t1 - t0;
    const Vec& x0 = traj.nodes[k].xi[1];
    const Vec& x1 = traj.nodes[k + 1].xi[0];
    JX.col(c) = x0;
    JX.col(c + 1) = 0.5 * (x0 + x1) + dt / 8.0 * (slopes.col(static_cast<Eigen::Index>(2 * k)) -
                                                  slopes.col(static_cast<Eigen::Index>(2 * k + 1)));
    JX.col(c + 2) = x1;
    JE.col(c) = ETA.col(static_cast<Eigen::Index>(2 * k));
    JE.col(c + 1) = traj.u_in_cell(k, t0 + 0.5 * dt);
    JE.col(c + 2) = ETA.col(static_cast<Eigen::Index>(2 * k + 1));
    JA.col(c) = JA.col(c + 1) = JA.col(c + 2) = traj.cells[k].a;
  }
  const std::vector<Mat> J = transformed_jacobian_batch(ctx, JX, JE, JA, status);
  for (std::size_t c = 0; c < status.size(); ++c) {
    if (status[c] != kEvalOk) throw DomainError(std::string("transformed Jacobian") + at_time(traj.nodes[c / 3].t));
  }

  AdjointArc arc;
  arc.n = n;
  arc.m = m;
  arc.nodes.resize(N);
  arc.cells.resize(C);
  for (std::size_t k = 0; k < N; ++k) {
    arc.nodes[k].t = traj.nodes[k].t;
    arc.nodes[k].jump = traj.nodes[k].jump;
    arc.nodes[k].pointwise = traj.nodes[k].pointwise;
  }
  const TrajectoryNode& last = traj.back();
  arc.nodes[N - 1].pi = grad_Psi(ctx, last.xi_at(Side::Pointwise), last.u_at(Side::Pointwise));

  auto rate = [&](const Vec& pi, const Mat& Jk) -> Vec { return -(Jk.transpose() * pi.head(ni)); };
  for (std::size_t k = C; k-- > 0;) {
    const double dt = traj.nodes[k + 1].t - traj.nodes[k].t;
    const Mat& Js = J[3 * k];
    const Mat& Jm = J[3 * k + 1];
    const Mat& Je = J[3 * k + 2];
    const Vec& pi1 = arc.nodes[k + 1].pi;
    const Vec r1 = rate(pi1, Je);
    const Vec r2 = rate(pi1 - 0.5 * dt * r1, Jm);
    const Vec r3 = rate(pi1 - 0.5 * dt * r2, Jm);
    const Vec r4 = rate(pi1 - dt * r3, Js);
    arc.nodes[k].pi = pi1 - dt / 6.0 * (r1 + 2.0 * r2 + 2.0 * r3 + r4);
    AdjointCell& cell = arc.cells[k];
    cell.dxi[0] = slopes.col(static_cast<Eigen::Index>(2 * k));
    cell.dxi[1] = slopes.col(static_cast<Eigen::Index>(2 * k + 1));
    cell.dpi[0] = rate(arc.nodes[k].pi, Js);
    cell.dpi[1] = r1;
    if (!arc.nodes[k].pi.allFinite() || arc.nodes[k].pi.lpNorm<Eigen::Infinity>() > kTrajectoryNormGuard) {
      throw DomainError("adjoint norm exceeded 1e12" + at_time(arc.nodes[k].t));
    }
  }
  return arc;
}

void pull_back_adjoint(const TransformContext& ctx, AdjointArc& arc, const Trajectory& traj) {
  const SystemSpec& s = ctx.system();
  if (arc.size() != traj.size()) throw InputError("adjoint", "adjoint and trajectory grids differ");
  for (std::size_t k = 0; k < arc.size(); ++k) {
    if (arc.nodes[k].t != traj.nodes[k].t) throw InputError("adjoint", "adjoint and trajectory grids differ");
  }
  std::vector<Vec> xs, us;
  for (const auto& node : traj.nodes) {
    for (std::size_t side = 0; side < (node.jump ? 2u : 1u); ++side) {
      xs.push_back(node.x[side]);
      us.push_back(node.u[side]);
    }
  }
  Mat X(static_cast<Eigen::Index>(s.n()), static_cast<Eigen::Index>(xs.size()));
  Mat Z(static_cast<Eigen::Index>(s.m()), static_cast<Eigen::Index>(xs.size()));
  for (std::size_t c = 0; c < xs.size(); ++c) {
    X.col(static_cast<Eigen::Index>(c)) = xs[c];
    Z.col(static_cast<Eigen::Index>(c)) = us[c];
  }
  std::vector<std::uint8_t> status;
  const std::vector<Mat> D = dphi_batch(ctx, X, Z, status);
  std::size_t c = 0;
  for (std::size_t k = 0; k < arc.size(); ++k) {
    AdjointNode& node = arc.nodes[k];
    for (std::size_t side = 0; side < (node.jump ? 2u : 1u); ++side, ++c) {
      if (status[c] != kEvalOk) throw DomainError(std::string("dphi") + at_time(node.t));
      node.p[side] = D[c].transpose() * node.pi;
    }
    if (!node.jump) node.p[1] = node.p[0];
  }
  const TrajectoryNode& last = traj.back();
  const Vec g = grad_gamma(s, last.x_at(Side::Pointwise), last.u_at(Side::Pointwise));
  arc.terminal_residual = (arc.nodes.back().p_at(Side::Pointwise) - g).lpNorm<Eigen::Infinity>();
  arc.pulled_back = true;
  if (!(arc.terminal_residual <= 1e-7)) {
    throw DomainError("pulled-back adjoint misses grad gamma at T by " + std::to_string(arc.terminal_residual));
  }
}

namespace {

// g~ values, Jacobians and Hessians in (x, u) for every impulse field.
class LiftedTape {
 public:
  explicit LiftedTape(const SystemSpec& s) : s_(s) {
    const std::size_t n = s.n(), m = s.m(), dim = s.dim();
    std::vector<Expr> out;
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t r = 0; r < n; ++r) out.push_back(s.g_tilde()[a][r]);
    }
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < dim; ++c) out.push_back(diff1(s.g_tilde()[a][r], c));
      }
    }
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < dim; ++c) {
          for (std::size_t d = 0; d < dim; ++d) out.push_back(diff2(s.g_tilde()[a][r], c, d));
        }
      }
    }
    tape_ = Tape(out, s.num_vars());
    buffer_.resize(out.size());
  }

  // Throws DomainError when evaluation fails.
  void eval(const Vec& x, const Vec& z) {
    const auto vars = s_.pack(x, z);
    tape_.eval(vars, buffer_);
  }

  // Augmented field value, Jacobian and Hessian entries (zero rows for z).
  double g(std::size_t a, std::size_t r) const {
    const std::size_t n = s_.n();
    if (r >= n) return r - n == a ? 1.0 : 0.0;
    return buffer_[a * n + r];
  }
  double jac(std::size_t a, std::size_t r, std::size_t c) const {
    const std::size_t n = s_.n(), m = s_.m(), dim = s_.dim();
    if (r >= n) return 0.0;
    return buffer_[m * n + (a * n + r) * dim + c];
  }
  double hess(std::size_t a, std::size_t r, std::size_t c, std::size_t d) const {
    const std::size_t n = s_.n(), m = s_.m(), dim = s_.dim();
    if (r >= n) return 0.0;
    return buffer_[m * n + m * n * dim + ((a * n + r) * dim + c) * dim + d];
  }

  // [G_i, G_j] = DG_j G_i - DG_i G_j with G_a(y, w) = (g_a(y), -Dg_a(y)^T w).
  Vec bracket(std::size_t i, std::size_t j, const Vec& w) const {
    const std::size_t dim = s_.dim();
    Vec out = Vec::Zero(static_cast<Eigen::Index>(2 * dim));
    // Dg_b g_a as two separate sums so that swapping i and j negates exactly.
    auto along = [&](std::size_t b, std::size_t a) {
      Vec v = Vec::Zero(static_cast<Eigen::Index>(2 * dim));
      Vec Jaw(static_cast<Eigen::Index>(dim));  // Dg_a^T w
      for (std::size_t c = 0; c < dim; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < dim; ++r) acc += jac(a, r, c) * w[static_cast<Eigen::Index>(r)];
        Jaw[static_cast<Eigen::Index>(c)] = acc;
      }
      for (std::size_t r = 0; r < dim; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dim; ++c) acc += jac(b, r, c) * g(a, c);
        v[static_cast<Eigen::Index>(r)] = acc;
      }
      // w-block of DG_b applied to G_a:
      //   -(sum_r w_r d^2 g_b^r / dy_s dy_c) g_a^c + Dg_b^T Dg_a^T w
      for (std::size_t sidx = 0; sidx < dim; ++sidx) {
        double acc = 0.0;
        for (std::size_t r = 0; r < dim; ++r) {
          const double wr = w[static_cast<Eigen::Index>(r)];
          if (wr == 0.0) continue;
          for (std::size_t c = 0; c < dim; ++c) acc -= wr * hess(b, r, sidx, c) * g(a, c);
        }
        for (std::size_t r = 0; r < dim; ++r) acc += jac(b, r, sidx) * Jaw[static_cast<Eigen::Index>(r)];
        v[static_cast<Eigen::Index>(dim + sidx)] = acc;
      }
      return v;
    };
    out = along(j, i) - along(i, j);
    return out;
  }

 private:
  const SystemSpec& s_;
  Tape tape_;
  std::vector<double> buffer_;
};

void check_lifted_point(const SystemSpec& s, const LiftedPoint& p) {
  if (static_cast<std::size_t>(p.x.size()) != s.n() || static_cast<std::size_t>(p.z.size()) != s.m() ||
      static_cast<std::size_t>(p.w.size()) != s.dim()) {
    throw InputError("", "lifted point has the wrong dimensions");
  }
}

}  // namespace

Vec lifted_bracket(const SystemSpec& s, std::size_t i, std::size_t j, const LiftedPoint& point) {
  if (i >= s.m() || j >= s.m()) throw InputError("alpha", "impulse field index out of range");
  check_lifted_point(s, point);
  LiftedTape tape(s);
  tape.eval(point.x, point.z);
  return tape.bracket(i, j, point.w);
}

LiftedReport audit_lifted_commutativity(const SystemSpec& s, std::span<const LiftedPoint> samples, double tol) {
  LiftedReport report;
  report.tol = tol;
  report.samples = samples.size();
  const std::size_t m = s.m();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) report.pairs.push_back({i, j, 0.0, 0});
  }
  if (report.pairs.empty()) return report;
  LiftedTape tape(s);
  for (std::size_t k = 0; k < samples.size(); ++k) {
    check_lifted_point(s, samples[k]);
    try {
      tape.eval(samples[k].x, samples[k].z);
    } catch (const DomainError&) {
      ++report.domain_errors;
      continue;
    }
    for (auto& pair : report.pairs) {
      const double v = tape.bracket(pair.i, pair.j, samples[k].w).lpNorm<Eigen::Infinity>();
      if (v > pair.max_norm) {
        pair.max_norm = v;
        pair.argmax = k;
      }
    }
  }
  for (const auto& pair : report.pairs) report.max_norm = std::max(report.max_norm, pair.max_norm);
  report.pass = report.max_norm <= tol && report.domain_errors == 0;
  return report;
}

std::vector<LiftedPoint> sample_lifted_points(const SystemSpec& s, std::size_t count, double radius) {
  const auto base = sample_state_box(s, count, radius);
  static constexpr unsigned kPrimes[] = {53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127};
  std::vector<LiftedPoint> out;
  out.reserve(count);
  for (std::size_t k = 0; k < base.size(); ++k) {
    LiftedPoint p{base[k].x, base[k].u, Vec(static_cast<Eigen::Index>(s.dim()))};
    for (std::size_t c = 0; c < s.dim(); ++c) {
      const unsigned prime = kPrimes[c % std::size(kPrimes)];
      p.w[static_cast<Eigen::Index>(c)] = 2.0 * halton(k + 1 + 7 * (c / std::size(kPrimes)), prime) - 1.0;
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace impulse
