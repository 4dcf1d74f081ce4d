#include "impulse/propagate.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "impulse/error.hpp"
#include "impulse/parallel.hpp"
#include "impulse/tape.hpp"

namespace impulse {

namespace {

void check_step(double h, double T) {
  if (!(h > 0.0) || !std::isfinite(h)) throw InputError("step", "step must be positive");
  if (h > T) throw InputError("step", "step exceeds the horizon T");
}

void guard_norm(const Vec& v, double t) {
  if (!v.allFinite() || v.lpNorm<Eigen::Infinity>() > kTrajectoryNormGuard) {
    throw DomainError("trajectory norm exceeded 1e12 at t=" + std::to_string(t));
  }
}

// Integral over [0, h] of |a + (b - a) s / h|.
double abs_linear_integral(double a, double b, double h) {
  if ((a >= 0 && b >= 0) || (a <= 0 && b <= 0)) return 0.5 * h * std::abs(a + b);
  return 0.5 * h * (a * a + b * b) / (std::abs(a) + std::abs(b));
}

struct Setup {
  std::vector<double> grid;
  std::vector<TrajectoryNode> nodes;
  std::vector<TrajectoryCell> cells;
};

// Grid, control values on both sides of every node and per-cell data.
Setup prepare(const SystemSpec& s, const ControlSignal& u, const OrdinarySignal& a, double h) {
  if (u.dim() != s.m() || a.dim() != s.l()) throw InputError("control", "signal dimensions do not match the system");
  if (u.T() != s.T() || a.T() != s.T()) throw InputError("control", "signal horizon does not match T");
  check_step(h, s.T());
  std::vector<double> bps = u.breakpoints();
  bps.insert(bps.end(), a.breakpoints().begin(), a.breakpoints().end());
  Setup st;
  st.grid = build_grid(s.T(), h, bps);
  const std::size_t N = st.grid.size();
  st.nodes.resize(N);
  for (std::size_t k = 0; k < N; ++k) {
    TrajectoryNode& node = st.nodes[k];
    node.t = st.grid[k];
    const std::size_t b = u.breakpoint_index(node.t);
    if (b != ControlSignal::npos) {
      node.pointwise = u.pointwise_side(b);
      node.jump = u.has_jump(b);
      if (node.jump) {
        node.u = {u.left(b), u.right(b)};
      } else {
        node.u = {u.pointwise(b), u.pointwise(b)};
      }
    } else {
      const Vec v = u.value_at(node.t);
      node.u = {v, v};
    }
  }
  st.cells.resize(N - 1);
  for (std::size_t k = 0; k + 1 < N; ++k) {
    const double mid = 0.5 * (st.grid[k] + st.grid[k + 1]);
    st.cells[k].piece = u.piece_index(mid);
    st.cells[k].a = a.value_at(mid);
  }
  return st;
}

Vec eval_F(const TransformContext& ctx, const Vec& xi, const Vec& eta, const Vec& a) {
  std::vector<std::uint8_t> status;
  Mat F = transformed_F_batch(ctx, xi, eta, a, status);
  if (status[0] != kEvalOk) throw DomainError(std::string("transformed drift: ") + eval_status_message(status[0]));
  return F.col(0);
}

// Smooth augmented right-hand side f~(x,u,a) + sum_k du_k g~_k(x,u).
class AugmentedRhs {
 public:
  explicit AugmentedRhs(const SystemSpec& s)
      : s_(s), vars_(s.num_vars()), f_(s.n()), g_(s.n() * s.m()) {}

  Vec operator()(const Vec& x, const Vec& u, const Vec& du, const Vec& a) {
    const std::size_t n = s_.n(), m = s_.m(), l = s_.l();
    for (std::size_t j = 0; j < n; ++j) vars_[j] = x[static_cast<Eigen::Index>(j)];
    for (std::size_t k = 0; k < m; ++k) vars_[n + k] = u[static_cast<Eigen::Index>(k)];
    for (std::size_t k = 0; k < l; ++k) vars_[n + m + k] = a[static_cast<Eigen::Index>(k)];
    s_.tapes().f_values.eval(vars_, f_);
    Vec out(static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) out[static_cast<Eigen::Index>(j)] = f_[j];
    bool moving = false;
    for (std::size_t k = 0; k < m; ++k) moving = moving || du[static_cast<Eigen::Index>(k)] != 0.0;
    if (!moving) return out;
    s_.tapes().g_values.eval(vars_, g_);
    for (std::size_t k = 0; k < m; ++k) {
      const double rate = du[static_cast<Eigen::Index>(k)];
      for (std::size_t j = 0; j < n; ++j) out[static_cast<Eigen::Index>(j)] += rate * g_[k * n + j];
    }
    return out;
  }

 private:
  const SystemSpec& s_;
  std::vector<double> vars_, f_, g_;
};

Vec initial_state(const SystemSpec& s, const Vec& x0) {
  if (x0.size() == 0) return s.x0();
  if (static_cast<std::size_t>(x0.size()) != s.n()) throw InputError("x0", "wrong dimension");
  return x0;
}

Mat columns(const std::vector<Vec>& v) {
  Mat M(v.empty() ? 0 : v[0].size(), static_cast<Eigen::Index>(v.size()));
  for (std::size_t k = 0; k < v.size(); ++k) M.col(static_cast<Eigen::Index>(k)) = v[k];
  return M;
}

}  // namespace

std::vector<double> Trajectory::times() const {
  std::vector<double> t;
  t.reserve(nodes.size());
  for (const auto& n : nodes) t.push_back(n.t);
  return t;
}

Vec Trajectory::state_at(double t, Side side) const {
  if (nodes.empty() || t < nodes.front().t || t > nodes.back().t) throw InputError("t", "time outside the trajectory");
  auto it = std::lower_bound(nodes.begin(), nodes.end(), t, [](const TrajectoryNode& n, double v) { return n.t < v; });
  if (it->t == t) return it->x_at(side);
  const TrajectoryNode& hi = *it;
  const TrajectoryNode& lo = *(it - 1);
  const double theta = (t - lo.t) / (hi.t - lo.t);
  return (1.0 - theta) * lo.x[1] + theta * hi.x[0];
}

std::vector<double> build_grid(double T, double h, std::span<const double> breakpoints) {
  check_step(h, T);
  std::vector<double> bps(breakpoints.begin(), breakpoints.end());
  bps.push_back(0.0);
  bps.push_back(T);
  std::sort(bps.begin(), bps.end());
  bps.erase(std::unique(bps.begin(), bps.end()), bps.end());
  const std::size_t N = static_cast<std::size_t>(std::ceil(T / h - 1e-9));
  std::vector<double> grid = bps;
  const double snap = 1e-3 * h;
  for (std::size_t i = 1; i < N; ++i) {
    const double t = static_cast<double>(i) * h;
    if (t >= T) break;
    auto it = std::lower_bound(bps.begin(), bps.end(), t);
    bool near = false;
    if (it != bps.end() && *it - t < snap) near = true;
    if (it != bps.begin() && t - *(it - 1) < snap) near = true;
    if (!near) grid.push_back(t);
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

Trajectory integrate_impulsive(const TransformContext& ctx, const ControlSignal& u, const OrdinarySignal& a, double h,
                               const Vec& x0_override) {
  const SystemSpec& s = ctx.system();
  Setup st = prepare(s, u, a, h);
  const std::size_t N = st.grid.size();
  const Vec x0 = initial_state(s, x0_override);

  std::vector<Vec> xi(N);
  {
    std::vector<std::uint8_t> status;
    Mat start = phi_batch(ctx, x0, st.nodes[0].u_at(Side::Pointwise), status);
    if (status[0] != kEvalOk) throw DomainError(std::string("phi at t=0: ") + eval_status_message(status[0]));
    xi[0] = start.col(0);
  }
  Trajectory traj;
  traj.u = u;
  traj.a = a;
  for (std::size_t k = 0; k + 1 < N; ++k) {
    const double t = st.grid[k], dt = st.grid[k + 1] - t;
    const std::size_t p = st.cells[k].piece;
    const Vec& av = st.cells[k].a;
    const Vec u0 = u.piece_value(p, t), um = u.piece_value(p, t + 0.5 * dt), u1 = u.piece_value(p, t + dt);
    const Vec k1 = eval_F(ctx, xi[k], u0, av);
    const Vec k2 = eval_F(ctx, xi[k] + 0.5 * dt * k1, um, av);
    const Vec k3 = eval_F(ctx, xi[k] + 0.5 * dt * k2, um, av);
    const Vec k4 = eval_F(ctx, xi[k] + dt * k3, u1, av);
    xi[k + 1] = xi[k] + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    guard_norm(xi[k + 1], st.grid[k + 1]);
  }

  // Reconstruct (x, u) = phi^{-1}(xi, u) on every distinct side.
  std::vector<Vec> cols_xi, cols_u;
  std::vector<std::size_t> owner;
  for (std::size_t k = 0; k < N; ++k) {
    for (std::size_t side = 0; side < (st.nodes[k].jump ? 2u : 1u); ++side) {
      cols_xi.push_back(xi[k]);
      cols_u.push_back(st.nodes[k].u[side]);
      owner.push_back(k);
    }
  }
  std::vector<std::uint8_t> status;
  const Mat X = phi_inverse_batch(ctx, columns(cols_xi), columns(cols_u), status);
  std::size_t c = 0;
  for (std::size_t k = 0; k < N; ++k) {
    TrajectoryNode& node = st.nodes[k];
    node.xi = {xi[k], xi[k]};
    for (std::size_t side = 0; side < (node.jump ? 2u : 1u); ++side, ++c) {
      if (status[c] != kEvalOk) {
        throw DomainError("reconstruction at t=" + std::to_string(node.t) + ": " + eval_status_message(status[c]));
      }
      node.x[side] = X.col(static_cast<Eigen::Index>(c));
      guard_norm(node.x[side], node.t);
    }
    if (!node.jump) node.x[1] = node.x[0];
  }
  traj.nodes = std::move(st.nodes);
  traj.cells = std::move(st.cells);
  traj.step = h;
  traj.method = "transformed-rk4";
  return traj;
}

Trajectory integrate_smooth(const TransformContext& ctx, const ControlSignal& u, const OrdinarySignal& a, double h,
                            const Vec& x0_override) {
  const SystemSpec& s = ctx.system();
  if (!u.is_continuous()) throw InputError("control", "integrate_smooth needs a continuous control");
  Setup st = prepare(s, u, a, h);
  const std::size_t N = st.grid.size();
  AugmentedRhs rhs(s);
  std::vector<Vec> x(N);
  x[0] = initial_state(s, x0_override);
  for (std::size_t k = 0; k + 1 < N; ++k) {
    const double t = st.grid[k], dt = st.grid[k + 1] - t;
    const std::size_t p = st.cells[k].piece;
    const Vec& av = st.cells[k].a;
    const Vec du = u.piece_slope(p);
    const Vec u0 = u.piece_value(p, t), um = u.piece_value(p, t + 0.5 * dt), u1 = u.piece_value(p, t + dt);
    const Vec k1 = rhs(x[k], u0, du, av);
    const Vec k2 = rhs(x[k] + 0.5 * dt * k1, um, du, av);
    const Vec k3 = rhs(x[k] + 0.5 * dt * k2, um, du, av);
    const Vec k4 = rhs(x[k] + dt * k3, u1, du, av);
    x[k + 1] = x[k] + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    guard_norm(x[k + 1], st.grid[k + 1]);
  }
  std::vector<Vec> us(N);
  for (std::size_t k = 0; k < N; ++k) us[k] = st.nodes[k].u[0];
  std::vector<std::uint8_t> status;
  const Mat XI = phi_batch(ctx, columns(x), columns(us), status);
  Trajectory traj;
  traj.u = u;
  traj.a = a;
  for (std::size_t k = 0; k < N; ++k) {
    if (status[k] != kEvalOk) throw DomainError("phi at t=" + std::to_string(st.grid[k]) + ": " + eval_status_message(status[k]));
    TrajectoryNode& node = st.nodes[k];
    node.x = {x[k], x[k]};
    const Vec v = XI.col(static_cast<Eigen::Index>(k));
    node.xi = {v, v};
  }
  traj.nodes = std::move(st.nodes);
  traj.cells = std::move(st.cells);
  traj.step = h;
  traj.method = "augmented-rk4";
  return traj;
}

namespace {

std::vector<double> union_times(const Trajectory& a, const Trajectory& b) {
  if (a.nodes.empty() || b.nodes.empty() || a.nodes.front().t != b.nodes.front().t ||
      a.nodes.back().t != b.nodes.back().t) {
    throw InputError("trajectory", "trajectories do not share a time window");
  }
  std::vector<double> t = a.times();
  const std::vector<double> tb = b.times();
  t.insert(t.end(), tb.begin(), tb.end());
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return t;
}

}  // namespace

double l1_state_distance(const Trajectory& a, const Trajectory& b) {
  const std::vector<double> t = union_times(a, b);
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < t.size(); ++k) {
    const Vec d0 = a.state_at(t[k], Side::Right) - b.state_at(t[k], Side::Right);
    const Vec d1 = a.state_at(t[k + 1], Side::Left) - b.state_at(t[k + 1], Side::Left);
    for (Eigen::Index i = 0; i < d0.size(); ++i) total += abs_linear_integral(d0[i], d1[i], t[k + 1] - t[k]);
  }
  return total;
}

double sup_state_distance(const Trajectory& a, const Trajectory& b) {
  double worst = 0.0;
  for (double t : union_times(a, b)) {
    for (Side side : {Side::Left, Side::Right}) {
      worst = std::max(worst, (a.state_at(t, side) - b.state_at(t, side)).lpNorm<Eigen::Infinity>());
    }
  }
  return worst;
}

ApproximationTable approximation_check(const TransformContext& ctx, const ControlSignal& u, const OrdinarySignal& a,
                                       std::span<const int> ks, double h) {
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] < 1 || (i > 0 && ks[i] <= ks[i - 1])) throw InputError("ks", "k values must be positive and increasing");
  }
  const Trajectory reference = integrate_impulsive(ctx, u, a, h);
  ApproximationTable table;
  table.rows.resize(ks.size());
  parallel_for(ks.size(), [&](std::size_t i) {
    const Trajectory smooth = integrate_smooth(ctx, mollify(u, ks[i]), a, h);
    table.rows[i].k = ks[i];
    table.rows[i].distance = l1_state_distance(smooth, reference);
  });
  for (std::size_t i = 1; i < table.rows.size(); ++i) {
    const double prev = table.rows[i - 1].distance;
    table.rows[i].ratio = prev > 0.0 ? table.rows[i].distance / prev : 0.0;
    if (table.rows[i].distance > prev) table.decreasing = false;
  }
  return table;
}

RobustnessReport robustness_gap(const TransformContext& ctx, std::span<const RobustnessPair> pairs,
                                const OrdinarySignal& a, double h, double tol) {
  RobustnessReport report;
  report.rows.resize(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    const RobustnessPair& p = pairs[i];
    const Trajectory x = integrate_smooth(ctx, p.u, a, h, p.x0);
    const Trajectory y = integrate_smooth(ctx, p.u_hat, a, h, p.x0_hat);
    const double T = x.back().t;
    RobustnessRow& row = report.rows[i];
    row.lhs = (x.back().x_at(Side::Pointwise) - y.back().x_at(Side::Pointwise)).lpNorm<1>() + l1_state_distance(x, y);
    row.rhs = (p.x0 - p.x0_hat).lpNorm<1>() + (p.u.value_at(0.0) - p.u_hat.value_at(0.0)).lpNorm<1>() +
              (p.u.value_at(T) - p.u_hat.value_at(T)).lpNorm<1>() + l1_distance(p.u, p.u_hat);
    if (row.rhs > 0.0) {
      row.ratio = row.lhs / row.rhs;
    } else {
      row.ratio = 0.0;
      row.inconsistent = row.lhs > tol;
    }
  });
  for (const auto& row : report.rows) {
    report.max_ratio = std::max(report.max_ratio, row.ratio);
    if (row.inconsistent) ++report.inconsistent;
  }
  return report;
}

std::vector<RobustnessPair> random_robustness_pairs(const SystemSpec& s, std::size_t count, std::uint64_t seed,
                                                    std::size_t pieces, double radius) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto random_state = [&] {
    Vec x = s.x0();
    for (Eigen::Index j = 0; j < x.size(); ++j) x[j] += radius * (2.0 * unit(rng) - 1.0);
    return x;
  };
  auto random_control = [&] {
    std::vector<double> t;
    std::vector<Vec> v;
    for (std::size_t k = 0; k <= pieces; ++k) {
      t.push_back(k == pieces ? s.T() : s.T() * static_cast<double>(k) / static_cast<double>(pieces));
      Vec val(static_cast<Eigen::Index>(s.m()));
      for (std::size_t i = 0; i < s.m(); ++i) {
        const Interval& I = s.U()[i];
        val[static_cast<Eigen::Index>(i)] = I.lo + (I.hi - I.lo) * unit(rng);
      }
      v.push_back(val);
    }
    return ControlSignal::linear(std::move(t), std::move(v));
  };
  std::vector<RobustnessPair> out;
  for (std::size_t i = 0; i < count; ++i) {
    RobustnessPair p;
    p.x0 = random_state();
    p.u = random_control();
    p.x0_hat = random_state();
    p.u_hat = random_control();
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace impulse
