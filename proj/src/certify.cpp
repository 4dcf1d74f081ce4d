#include "impulse/certify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <json.hpp>
#include <random>

#include "impulse/error.hpp"
#include "impulse/parallel.hpp"
#include "impulse/tape.hpp"

namespace impulse {

namespace {

using Index = Eigen::Index;

Index idx(std::size_t v) { return static_cast<Index>(v); }

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Running minimum with its location; ties keep the earliest candidate.
struct Worst {
  double value = std::numeric_limits<double>::infinity();
  Location where;
  bool seen = false;

  void offer(double v, const Location& loc) {
    if (!seen || v < value) {
      value = v;
      where = loc;
      seen = true;
    }
  }
  void merge(const Worst& other) {
    if (other.seen) offer(other.value, other.where);
  }
};

// Applies a min-type result to a record.
void finish_min(ConditionRecord& r, const Worst& w, double tol) {
  if (w.seen) {
    r.margin = w.value;
    r.argmin = w.where;
    r.pass = w.value >= -tol;
  } else {
    r.margin = 0.0;
    r.pass = true;
    r.notes.push_back("vacuous: no admissible check point");
  }
}

void finish_cross(ConditionRecord& r, double worst, double tol, const std::string& what) {
  r.cross_check = worst;
  r.cross_check_tol = tol;
  if (!(worst <= tol)) {
    r.pass = false;
    r.notes.push_back(what + " disagree by " + fmt(worst) + " (tolerance " + fmt(tol) + ")");
  }
}

Location at(double t) {
  Location l;
  l.t = t;
  return l;
}

std::vector<double> point_times(std::span<const CheckPoint> points) {
  std::vector<double> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(p.t);
  return out;
}

// f~ at several (x, u, a) columns through the compiled tape.
Mat eval_f_columns(const SystemSpec& s, const Mat& X, const Mat& U, const Mat& A, std::vector<std::uint8_t>& status) {
  const std::size_t L = static_cast<std::size_t>(X.cols()), n = s.n(), m = s.m(), l = s.l();
  std::vector<double> vars(s.num_vars() * L), out(n * L);
  for (std::size_t k = 0; k < L; ++k) {
    for (std::size_t v = 0; v < n; ++v) vars[v * L + k] = X(idx(v), idx(k));
    for (std::size_t v = 0; v < m; ++v) vars[(n + v) * L + k] = U(idx(v), idx(k));
    for (std::size_t v = 0; v < l; ++v) vars[(n + m + v) * L + k] = A(idx(v), idx(k));
  }
  status.assign(L, kEvalOk);
  if (L) s.tapes().f_values.eval_batch(L, vars, out, status);
  Mat F(idx(n), idx(L));
  for (std::size_t k = 0; k < L; ++k) {
    for (std::size_t j = 0; j < n; ++j) F(idx(j), idx(k)) = out[j * L + k];
  }
  return F;
}

bool one_sided_ok(const SystemSpec& s, const Vec& u, std::size_t i, double sigma) {
  Vec v = u;
  v[idx(i)] += sigma;
  return s.in_U(v);
}

std::vector<std::size_t> two_sided_indices(const SystemSpec& s, const Vec& u, double sigma0) {
  std::vector<std::size_t> J;
  for (std::size_t i = 0; i < s.m(); ++i) {
    if (one_sided_ok(s, u, i, sigma0) && one_sided_ok(s, u, i, -sigma0)) J.push_back(i);
  }
  return J;
}

SampledArc pi2_arc(const AdjointArc& arc) {
  SampledArc out;
  for (const auto& node : arc.nodes) {
    out.t.push_back(node.t);
    out.v.push_back(node.pi.tail(idx(arc.m)));
  }
  return out;
}

}  // namespace

const ConditionRecord& CertificateReport::at(const std::string& id) const {
  for (const auto& r : conditions) {
    if (r.condition == id) return r;
  }
  throw InputError("condition", "no condition named " + id);
}

std::vector<double> check_times(const Trajectory& traj, std::size_t max_count) {
  std::vector<double> mids;
  for (std::size_t k = 0; k + 1 < traj.size(); ++k) mids.push_back(0.5 * (traj.nodes[k].t + traj.nodes[k + 1].t));
  if (max_count == 0 || mids.size() <= max_count) return mids;
  std::vector<double> out;
  out.reserve(max_count);
  for (std::size_t j = 0; j < max_count; ++j) out.push_back(mids[j * mids.size() / max_count]);
  return out;
}

std::vector<Vec> box_lattice(const std::vector<Interval>& box, std::size_t count) {
  if (count < 2) throw InputError("grid", "lattice needs at least two points per dimension");
  std::vector<std::vector<double>> axes;
  for (const auto& iv : box) {
    std::vector<double> axis;
    if (iv.lo == iv.hi) {
      axis.push_back(iv.lo);
    } else {
      for (std::size_t i = 0; i < count; ++i) {
        axis.push_back(i + 1 == count ? iv.hi : iv.lo + (iv.hi - iv.lo) * static_cast<double>(i) / static_cast<double>(count - 1));
      }
    }
    axes.push_back(std::move(axis));
  }
  std::vector<Vec> out;
  std::vector<std::size_t> digit(box.size(), 0);
  while (true) {
    Vec v(idx(box.size()));
    for (std::size_t d = 0; d < box.size(); ++d) v[idx(d)] = axes[d][digit[d]];
    out.push_back(std::move(v));
    std::size_t d = 0;
    while (d < box.size() && ++digit[d] == axes[d].size()) digit[d++] = 0;
    if (d == box.size()) break;
  }
  return out;
}

std::vector<CheckPoint> evaluate_check_points(const TransformContext& ctx, const Trajectory& traj,
                                              const AdjointArc& arc, std::span<const double> times,
                                              std::size_t grid_u) {
  const SystemSpec& s = ctx.system();
  const std::size_t n = s.n(), m = s.m();
  if (traj.size() < 2 || arc.size() != traj.size() || arc.cells.size() + 1 != traj.size() || !arc.pulled_back) {
    throw InputError("adjoint", "check points need a pulled-back adjoint on the trajectory grid");
  }
  const std::size_t C = traj.size() - 1, P = times.size();
  std::vector<CheckPoint> points(P);
  Mat XI(idx(n), idx(P)), UU(idx(m), idx(P));
  for (std::size_t q = 0; q < P; ++q) {
    const double t = times[q];
    if (!(t >= traj.nodes.front().t && t <= traj.back().t)) throw InputError("t", "check time outside [0, T]");
    auto it = std::upper_bound(traj.nodes.begin(), traj.nodes.end(), t,
                               [](double v, const TrajectoryNode& nd) { return v < nd.t; });
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(it - traj.nodes.begin()) - 1, C - 1);
    CheckPoint& cp = points[q];
    cp.t = t;
    cp.cell = k;
    cp.xi = arc.xi_in_cell(traj, k, t);
    cp.pi = arc.pi_in_cell(k, t);
    cp.u = traj.u_in_cell(k, t);
    cp.a = traj.cells[k].a;
    XI.col(idx(q)) = cp.xi;
    UU.col(idx(q)) = cp.u;
  }
  std::vector<std::uint8_t> status;
  const Mat X = phi_inverse_batch(ctx, XI, UU, status);
  for (std::size_t q = 0; q < P; ++q) {
    if (status[q] != kEvalOk) throw DomainError("phi^{-1} failed at check time t=" + fmt(times[q]));
  }
  const std::vector<Mat> D = dphi_batch(ctx, X, UU, status);
  for (std::size_t q = 0; q < P; ++q) {
    if (status[q] != kEvalOk) throw DomainError("dphi failed at check time t=" + fmt(times[q]));
    CheckPoint& cp = points[q];
    cp.x = X.col(idx(q));
    cp.p = D[q].transpose() * cp.pi;
    cp.reference = cp.p.dot(eval_aug_f(s, cp.x, cp.u, cp.a));
  }
  if (grid_u == 0 || P == 0) return points;

  const std::vector<Vec> lattice = box_lattice(s.U(), grid_u);
  const std::size_t Lu = lattice.size();
  // Several points per flow batch keep the lane loops long.
  const std::size_t per_chunk = std::max<std::size_t>(1, 512 / Lu);
  const std::size_t chunks = (P + per_chunk - 1) / per_chunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t q0 = c * per_chunk, q1 = std::min(P, q0 + per_chunk);
    const std::size_t L = (q1 - q0) * Lu;
    Mat XIb(idx(n), idx(L)), Ub(idx(m), idx(L));
    for (std::size_t q = q0; q < q1; ++q) {
      for (std::size_t j = 0; j < Lu; ++j) {
        XIb.col(idx((q - q0) * Lu + j)) = points[q].xi;
        Ub.col(idx((q - q0) * Lu + j)) = lattice[j];
      }
    }
    std::vector<std::uint8_t> st1, st2;
    const Mat Xb = phi_inverse_batch(ctx, XIb, Ub, st1);
    const std::vector<Mat> Db = dphi_batch(ctx, Xb, Ub, st2);
    for (std::size_t q = q0; q < q1; ++q) {
      CheckPoint& cp = points[q];
      cp.lattice.resize(Lu);
      const Vec pi1 = cp.pi.head(idx(n));
      for (std::size_t j = 0; j < Lu; ++j) {
        const std::size_t lane = (q - q0) * Lu + j;
        LatticeSample& ls = cp.lattice[j];
        ls.u = lattice[j];
        ls.x = Xb.col(idx(lane));
        ls.status = st1[lane] != kEvalOk ? st1[lane] : st2[lane];
        if (ls.status == kEvalOk) ls.p1 = Db[lane].topLeftCorner(idx(n), idx(n)).transpose() * pi1;
      }
    }
  });
  return points;
}

std::pair<ConditionRecord, ConditionRecord> check_hamiltonian_min(const TransformContext& ctx,
                                                                  std::span<const CheckPoint> points,
                                                                  const CertifyOptions& opt) {
  const SystemSpec& s = ctx.system();
  const std::size_t n = s.n(), m = s.m(), l = s.l();
  const std::vector<Vec> alat = box_lattice(s.A(), opt.grid_a);
  const std::size_t La = alat.size();

  struct Slot {
    Worst u, a;
    std::size_t checked_u = 0, skipped_u = 0, checked_a = 0, skipped_a = 0;
  };
  std::vector<Slot> slots(points.size());
  parallel_for(points.size(), [&](std::size_t q) {
    const CheckPoint& cp = points[q];
    if (cp.lattice.empty()) throw InputError("lattice", "check points were evaluated without a u-lattice");
    const std::size_t Lu = cp.lattice.size();
    const std::size_t L = Lu * La + La;
    Mat X(idx(n), idx(L)), U(idx(m), idx(L)), A(idx(l), idx(L));
    for (std::size_t j = 0; j < Lu; ++j) {
      for (std::size_t i = 0; i < La; ++i) {
        const std::size_t c = j * La + i;
        X.col(idx(c)) = cp.lattice[j].x;
        U.col(idx(c)) = cp.lattice[j].u;
        A.col(idx(c)) = alat[i];
      }
    }
    for (std::size_t i = 0; i < La; ++i) {
      const std::size_t c = Lu * La + i;
      X.col(idx(c)) = cp.x;
      U.col(idx(c)) = cp.u;
      A.col(idx(c)) = alat[i];
    }
    std::vector<std::uint8_t> st;
    const Mat F = eval_f_columns(s, X, U, A, st);
    Slot& slot = slots[q];
    for (std::size_t j = 0; j < Lu; ++j) {
      const LatticeSample& ls = cp.lattice[j];
      for (std::size_t i = 0; i < La; ++i) {
        const std::size_t c = j * La + i;
        if (ls.status != kEvalOk || st[c] != kEvalOk) {
          ++slot.skipped_u;
          continue;
        }
        ++slot.checked_u;
        Location loc = at(cp.t);
        loc.u = ls.u;
        loc.a = alat[i];
        slot.u.offer(ls.p1.dot(F.col(idx(c))) - cp.reference, loc);
      }
    }
    const Vec p1 = cp.p.head(idx(n));
    for (std::size_t i = 0; i < La; ++i) {
      const std::size_t c = Lu * La + i;
      if (st[c] != kEvalOk) {
        ++slot.skipped_a;
        continue;
      }
      ++slot.checked_a;
      Location loc = at(cp.t);
      loc.a = alat[i];
      slot.a.offer(p1.dot(F.col(idx(c))) - cp.reference, loc);
    }
  });

  ConditionRecord ru, ra;
  ru.condition = "H-MIN-U";
  ra.condition = "H-MIN-A";
  Worst wu, wa;
  for (const Slot& slot : slots) {
    wu.merge(slot.u);
    wa.merge(slot.a);
    ru.checked += slot.checked_u;
    ru.skipped += slot.skipped_u;
    ra.checked += slot.checked_a;
    ra.skipped += slot.skipped_a;
  }
  finish_min(ru, wu, opt.tol);
  finish_min(ra, wa, opt.tol);
  ru.times = ra.times = point_times(points);
  if (ru.skipped) ru.notes.push_back(std::to_string(ru.skipped) + " lattice points skipped after domain errors");
  if (ra.skipped) ra.notes.push_back(std::to_string(ra.skipped) + " lattice points skipped after domain errors");
  return {ru, ra};
}

ConditionRecord check_transport(const TransformContext& ctx, std::span<const CheckPoint> points,
                                const CertifyOptions& opt) {
  const SystemSpec& s = ctx.system();
  const std::size_t n = s.n(), m = s.m(), l = s.l();
  struct Slot {
    Worst w;
    double cross = 0.0;
    std::size_t checked = 0, skipped = 0, extended = 0;
  };
  std::vector<Slot> slots(points.size());
  parallel_for(points.size(), [&](std::size_t q) {
    const CheckPoint& cp = points[q];
    if (cp.lattice.empty()) throw InputError("lattice", "check points were evaluated without a u-lattice");
    const std::size_t Lu = cp.lattice.size();
    Mat U2(idx(m), idx(Lu)), X(idx(n), idx(Lu + 1)), U(idx(m), idx(Lu + 1)), A(idx(l), idx(Lu + 1));
    for (std::size_t j = 0; j < Lu; ++j) {
      U2.col(idx(j)) = cp.lattice[j].u;
      X.col(idx(j)) = cp.lattice[j].x;
      U.col(idx(j)) = cp.lattice[j].u;
      A.col(idx(j)) = cp.a;
    }
    X.col(idx(Lu)) = cp.x;
    U.col(idx(Lu)) = cp.u;
    A.col(idx(Lu)) = cp.a;
    std::vector<std::uint8_t> st, fst;
    std::vector<bool> extended;
    const Mat T = transport_batch(ctx, cp.x, cp.u, U2, cp.a, st, extended);
    const Mat F = eval_f_columns(s, X, U, A, fst);
    Slot& slot = slots[q];
    if (fst[Lu] != kEvalOk) {
      slot.skipped += Lu;
      return;
    }
    const Vec p1 = cp.p.head(idx(n));
    const Vec fstar = F.col(idx(Lu));
    for (std::size_t j = 0; j < Lu; ++j) {
      const LatticeSample& ls = cp.lattice[j];
      if (st[j] != kEvalOk || fst[j] != kEvalOk || ls.status != kEvalOk) {
        ++slot.skipped;
        continue;
      }
      ++slot.checked;
      if (extended[j]) ++slot.extended;
      const double margin = p1.dot(T.col(idx(j)) - fstar);
      const double slice = ls.p1.dot(F.col(idx(j))) - cp.reference;
      slot.cross = std::max(slot.cross, std::abs(margin - slice));
      Location loc = at(cp.t);
      loc.u = ls.u;
      slot.w.offer(margin, loc);
    }
  });
  ConditionRecord r;
  r.condition = "TRANSPORT";
  Worst w;
  double cross = 0.0;
  std::size_t extended = 0;
  for (const Slot& slot : slots) {
    w.merge(slot.w);
    cross = std::max(cross, slot.cross);
    r.checked += slot.checked;
    r.skipped += slot.skipped;
    extended += slot.extended;
  }
  finish_min(r, w, opt.tol);
  finish_cross(r, cross, opt.transport_tol, "transport and H-MIN-U (a = a*) margins");
  r.times = point_times(points);
  if (r.skipped) r.notes.push_back(std::to_string(r.skipped) + " lattice points skipped: transport undefined");
  if (extended) r.notes.push_back(std::to_string(extended) + " transports used the extension of the fields outside U");
  return r;
}

std::optional<double> first_inadmissible_time(const SystemSpec& s, const Trajectory& traj, const VariationMap& nu,
                                              double sigma0) {
  const double t0 = nu.t0(), T = traj.u.T();
  std::vector<double> times{t0};
  for (const auto& node : traj.nodes) {
    if (node.t > t0 && node.t <= T) times.push_back(node.t);
  }
  for (double k : nu.knots()) {
    if (k > t0 && k <= T) times.push_back(k);
  }
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  for (double t : times) {
    for (Side side : {Side::Left, Side::Right}) {
      if (t == t0 && side == Side::Left) continue;
      if (t == T && side == Side::Right) continue;
      const Vec v = traj.u.value_at(t, side) + sigma0 * nu.value_at(t, side);
      if (!s.in_U(v)) return t;
    }
  }
  return std::nullopt;
}

ConditionRecord check_variation_bv(const TransformContext& ctx, const Trajectory& traj, const AdjointArc& arc,
                                   const VariationMap& nu, const CertifyOptions& opt) {
  const SystemSpec& s = ctx.system();
  const std::size_t m = s.m();
  if (nu.dim() != m) throw InputError("variation", "variation has the wrong dimension");
  if (nu.T() != traj.u.T()) throw InputError("variation", "variation must end at T");
  if (const auto bad = first_inadmissible_time(s, traj, nu, opt.sigma0)) {
    throw InadmissibleVariation(*bad, "variation leaves U at t=" + fmt(*bad));
  }
  const double t = nu.t0();
  const std::vector<double> times{t};
  const CheckPoint cp = evaluate_check_points(ctx, traj, arc, times, 0).front();
  const Vec nu_t = nu.value_at(t);
  const Vec pi2 = cp.pi.tail(idx(m));
  ConditionRecord r;
  r.condition = "VARIATION-BV";
  r.margin = pi2.dot(nu_t) + radon_integral(pi2_arc(arc), nu);
  r.pass = r.margin >= -opt.tol;
  r.argmin = at(t);
  r.argmin.h = nu_t;
  r.checked = 1;
  r.times = times;
  double original = 0.0;
  for (std::size_t i = 0; i < m; ++i) original += nu_t[idx(i)] * cp.p.dot(eval_aug_g(s, i, cp.x, cp.u));
  finish_cross(r, std::abs(original - pi2.dot(nu_t)), opt.bracket_tol, "p1.sum g~ nu + p2.nu and pi2.nu");
  return r;
}

ConditionRecord check_variation_defaults(const TransformContext& ctx, const Trajectory& traj,
                                         std::span<const CheckPoint> points, const CertifyOptions& opt) {
  const SystemSpec& s = ctx.system();
  const std::size_t m = s.m();
  const double T = traj.u.T();
  struct Slot {
    Worst w;
    double cross = 0.0;
    std::size_t checked = 0, skipped = 0;
  };
  std::vector<Slot> slots(points.size());
  parallel_for(points.size(), [&](std::size_t q) {
    const CheckPoint& cp = points[q];
    Slot& slot = slots[q];
    for (std::size_t i = 0; i < m; ++i) {
      const double pg = cp.p.dot(eval_aug_g(s, i, cp.x, cp.u));
      for (double sign : {1.0, -1.0}) {
        Vec e = Vec::Zero(idx(m));
        e[idx(i)] = sign;
        const VariationMap nu = VariationMap::constant(cp.t, T, e);
        if (first_inadmissible_time(s, traj, nu, opt.sigma0)) {
          ++slot.skipped;
          continue;
        }
        ++slot.checked;
        // A constant map carries no measure on [t, T].
        const double margin = sign * cp.pi[idx(s.n() + i)];
        slot.cross = std::max(slot.cross, std::abs(sign * pg - margin));
        Location loc = at(cp.t);
        loc.h = e;
        slot.w.offer(margin, loc);
      }
    }
  });
  ConditionRecord r;
  r.condition = "VARIATION-BV";
  Worst w;
  double cross = 0.0;
  for (const Slot& slot : slots) {
    w.merge(slot.w);
    cross = std::max(cross, slot.cross);
    r.checked += slot.checked;
    r.skipped += slot.skipped;
  }
  finish_min(r, w, opt.tol);
  finish_cross(r, cross, opt.bracket_tol, "p1.sum g~ nu + p2.nu and pi2.nu");
  r.times = point_times(points);
  r.notes.push_back("nu = +/- e_i held constant on [t, T]; inadmissible variations are skipped");
  return r;
}

std::pair<ConditionRecord, ConditionRecord> check_nc_first(const TransformContext& ctx, const Trajectory& traj,
                                                           std::span<const CheckPoint> points,
                                                           const CertifyOptions& opt) {
  const SystemSpec& s = ctx.system();
  const std::size_t n = s.n(), m = s.m();
  const double T = traj.u.T();
  const double sign = opt.nc1 == Nc1Orientation::Derived ? 1.0 : -1.0;
  const Tape& bgf = s.tapes().bracket_gf;

  // Central differences of F~ in eta_i at every point and index.
  const std::size_t P = points.size();
  Mat XI(idx(n), idx(2 * m * P)), ETA(idx(m), idx(2 * m * P)), AV(idx(s.l()), idx(2 * m * P));
  std::vector<double> width(m * P);
  for (std::size_t q = 0; q < P; ++q) {
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t c = 2 * (q * m + i);
      Vec up = points[q].u, down = points[q].u;
      const double h = 6e-6 * std::max(1.0, std::abs(up[idx(i)]));
      up[idx(i)] += h;
      down[idx(i)] -= h;
      width[q * m + i] = up[idx(i)] - down[idx(i)];
      XI.col(idx(c)) = XI.col(idx(c + 1)) = points[q].xi;
      ETA.col(idx(c)) = up;
      ETA.col(idx(c + 1)) = down;
      AV.col(idx(c)) = AV.col(idx(c + 1)) = points[q].a;
    }
  }
  std::vector<std::uint8_t> fst;
  const Mat F = transformed_F_batch(ctx, XI, ETA, AV, fst);

  struct Slot {
    Worst w1, w2;
    double raw_min = INFINITY, raw_max = -INFINITY, cross = 0.0;
    std::size_t checked1 = 0, skipped1 = 0, checked2 = 0, skipped2 = 0;
  };
  std::vector<Slot> slots(P);
  parallel_for(P, [&](std::size_t q) {
    const CheckPoint& cp = points[q];
    Slot& slot = slots[q];
    const Vec p1 = cp.p.head(idx(n)), pi1 = cp.pi.head(idx(n));
    std::vector<double> br(bgf.num_outputs());
    bool br_ok = true;
    try {
      bgf.eval(s.pack(cp.x, cp.u, cp.a), br);
    } catch (const DomainError&) {
      br_ok = false;
    }
    for (std::size_t i = 0; i < m; ++i) {
      Vec e = Vec::Zero(idx(m));
      e[idx(i)] = 1.0;
      if (first_inadmissible_time(s, traj, VariationMap::constant(cp.t, T, e), opt.sigma0)) {
        ++slot.skipped1;
      } else {
        ++slot.checked1;
        const double m1 = cp.p.dot(eval_aug_g(s, i, cp.x, cp.u));
        slot.raw_min = std::min(slot.raw_min, m1);
        slot.raw_max = std::max(slot.raw_max, m1);
        Location loc = at(cp.t);
        loc.u = cp.u;
        loc.h = e;
        slot.w1.offer(sign * m1, loc);
      }

      const std::size_t c = 2 * (q * m + i);
      if (!br_ok || fst[c] != kEvalOk || fst[c + 1] != kEvalOk || !one_sided_ok(s, cp.u, i, opt.sigma0)) {
        ++slot.skipped2;
        continue;
      }
      ++slot.checked2;
      double m2 = 0.0;
      for (std::size_t j = 0; j < n; ++j) m2 += p1[idx(j)] * br[i * n + j];
      const double fd = pi1.dot(F.col(idx(c)) - F.col(idx(c + 1))) / width[q * m + i];
      slot.cross = std::max(slot.cross, std::abs(m2 - fd));
      Location loc = at(cp.t);
      loc.u = cp.u;
      loc.a = cp.a;
      loc.h = e;
      slot.w2.offer(m2, loc);
    }
  });

  ConditionRecord r1, r2;
  r1.condition = "NC-I";
  r2.condition = "NC-II";
  Worst w1, w2;
  double raw_min = INFINITY, raw_max = -INFINITY, cross = 0.0;
  for (const Slot& slot : slots) {
    w1.merge(slot.w1);
    w2.merge(slot.w2);
    raw_min = std::min(raw_min, slot.raw_min);
    raw_max = std::max(raw_max, slot.raw_max);
    cross = std::max(cross, slot.cross);
    r1.checked += slot.checked1;
    r1.skipped += slot.skipped1;
    r2.checked += slot.checked2;
    r2.skipped += slot.skipped2;
  }
  finish_min(r1, w1, opt.tol);
  finish_min(r2, w2, opt.tol);
  finish_cross(r2, cross, opt.bracket_tol, "p.[g_i,f] and pi1.dF~/deta_i");
  r1.times = r2.times = point_times(points);
  r1.notes.push_back(opt.nc1 == Nc1Orientation::Derived ? "orientation derived: margin = p.g_i, required >= -tol"
                                                       : "orientation printed: margin = -p.g_i, required >= -tol");
  if (r1.checked) r1.notes.push_back("raw p.g_i ranges over [" + fmt(raw_min) + ", " + fmt(raw_max) + "]");
  return {r1, r2};
}

Mat bracket_matrix(const SystemSpec& s, const CheckPoint& cp) {
  const std::size_t n = s.n(), m = s.m();
  const Tape& tape = s.tapes().bracket_ggf;
  std::vector<double> out(tape.num_outputs());
  tape.eval(s.pack(cp.x, cp.u, cp.a), out);
  Mat Q = Mat::Zero(idx(m), idx(m));
  const Vec p1 = cp.p.head(idx(n));
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t k = 0; k < m; ++k) {
      double acc = 0.0;
      for (std::size_t r = 0; r < n; ++r) acc += p1[idx(r)] * out[(j * m + k) * n + r];
      Q(idx(j), idx(k)) = acc;
    }
  }
  return Q;
}

std::pair<ConditionRecord, ConditionRecord> check_nc_second(const TransformContext& ctx,
                                                            std::span<const CheckPoint> points,
                                                            const CertifyOptions& opt) {
  const SystemSpec& s = ctx.system();
  const std::size_t n = s.n(), m = s.m();
  for (const Vec& h : opt.directions) {
    if (static_cast<std::size_t>(h.size()) != m) throw InputError("directions", "direction has the wrong dimension");
  }
  struct Slot {
    Worst sym, psd;
    double cross = 0.0;
    std::size_t checked = 0, skipped = 0, dir_checked = 0, dir_skipped = 0;
  };
  std::vector<Slot> slots(points.size());
  parallel_for(points.size(), [&](std::size_t q) {
    const CheckPoint& cp = points[q];
    Slot& slot = slots[q];
    const std::vector<std::size_t> J = two_sided_indices(s, cp.u, opt.sigma0);
    if (J.empty()) {
      ++slot.skipped;
      return;
    }
    Mat Qfull;
    try {
      Qfull = bracket_matrix(s, cp);
    } catch (const DomainError&) {
      ++slot.skipped;
      return;
    }
    ++slot.checked;
    std::vector<bool> inJ(m, false);
    for (std::size_t j : J) inJ[j] = true;
    Mat Q = Mat::Zero(idx(m), idx(m));
    for (std::size_t j : J) {
      for (std::size_t k : J) Q(idx(j), idx(k)) = Qfull(idx(j), idx(k));
    }

    double asym = 0.0;
    Location asym_at = at(cp.t);
    for (std::size_t j : J) {
      for (std::size_t k : J) {
        const double d = std::abs(Q(idx(j), idx(k)) - Q(idx(k), idx(j)));
        if (d > asym) asym = d;
      }
    }
    asym_at.u = cp.u;
    asym_at.a = cp.a;
    // The sym record tracks the largest asymmetry; stored negated as a minimum.
    slot.sym.offer(-asym, asym_at);

    std::vector<Vec> dirs;
    if (!opt.directions.empty()) {
      for (const Vec& h : opt.directions) {
        bool supported = true;
        for (std::size_t i = 0; i < m; ++i) supported = supported && (inJ[i] || h[idx(i)] == 0.0);
        if (supported) {
          dirs.push_back(h);
        } else {
          ++slot.dir_skipped;
        }
      }
    } else {
      for (std::size_t i : J) {
        Vec e = Vec::Zero(idx(m));
        e[idx(i)] = 1.0;
        dirs.push_back(e);
        dirs.push_back(-e);
      }
      const double r = 1.0 / std::sqrt(2.0);
      for (std::size_t a = 0; a < J.size(); ++a) {
        for (std::size_t b = a + 1; b < J.size(); ++b) {
          for (double sgn : {1.0, -1.0}) {
            Vec h = Vec::Zero(idx(m));
            h[idx(J[a])] = r;
            h[idx(J[b])] = sgn * r;
            dirs.push_back(h);
          }
        }
      }
      std::mt19937_64 rng(opt.seed ^ (0x9E3779B97F4A7C15ull * (q + 1)));
      std::normal_distribution<double> normal;
      for (std::size_t d = 0; d < opt.random_directions; ++d) {
        Vec h = Vec::Zero(idx(m));
        for (std::size_t i : J) h[idx(i)] = normal(rng);
        const double norm = h.norm();
        if (norm > 0.0) dirs.push_back(h / norm);
      }
    }
    for (const Vec& h : dirs) {
      ++slot.dir_checked;
      Location loc = at(cp.t);
      loc.u = cp.u;
      loc.a = cp.a;
      loc.h = h;
      slot.psd.offer(h.dot(Q * h), loc);
    }

    // eta-Hessian of F~ on J by central differences.
    const std::size_t nJ = J.size();
    std::vector<Vec> etas{cp.u};
    std::vector<double> step(m, 0.0);
    for (std::size_t j : J) step[j] = opt.hessian_step * std::max(1.0, std::abs(cp.u[idx(j)]));
    auto shifted = [&](std::size_t j, double sj, std::size_t k, double sk) {
      Vec e = cp.u;
      e[idx(j)] += sj * step[j];
      if (k < m) e[idx(k)] += sk * step[k];
      return e;
    };
    for (std::size_t j : J) {
      etas.push_back(shifted(j, 1.0, m, 0.0));
      etas.push_back(shifted(j, -1.0, m, 0.0));
    }
    for (std::size_t a = 0; a < nJ; ++a) {
      for (std::size_t b = a + 1; b < nJ; ++b) {
        for (double sa : {1.0, -1.0}) {
          for (double sb : {1.0, -1.0}) etas.push_back(shifted(J[a], sa, J[b], sb));
        }
      }
    }
    const std::size_t L = etas.size();
    Mat XI = cp.xi.replicate(1, idx(L)), ETA(idx(m), idx(L)), AV = cp.a.replicate(1, idx(L));
    for (std::size_t c = 0; c < L; ++c) ETA.col(idx(c)) = etas[c];
    std::vector<std::uint8_t> fst;
    const Mat F = transformed_F_batch(ctx, XI, ETA, AV, fst);
    for (std::uint8_t v : fst) {
      if (v != kEvalOk) {
        slot.cross = INFINITY;
        return;
      }
    }
    const Vec pi1 = cp.pi.head(idx(n));
    Vec pf(idx(L));
    for (std::size_t c = 0; c < L; ++c) pf[idx(c)] = pi1.dot(F.col(idx(c)));
    Mat H = Mat::Zero(idx(m), idx(m));
    for (std::size_t a = 0; a < nJ; ++a) {
      const std::size_t j = J[a];
      H(idx(j), idx(j)) = (pf[idx(1 + 2 * a)] - 2.0 * pf[0] + pf[idx(2 + 2 * a)]) / (step[j] * step[j]);
    }
    std::size_t c = 1 + 2 * nJ;
    for (std::size_t a = 0; a < nJ; ++a) {
      for (std::size_t b = a + 1; b < nJ; ++b, c += 4) {
        const double v = (pf[idx(c)] - pf[idx(c + 1)] - pf[idx(c + 2)] + pf[idx(c + 3)]) / (4.0 * step[J[a]] * step[J[b]]);
        H(idx(J[a]), idx(J[b])) = H(idx(J[b]), idx(J[a])) = v;
      }
    }
    for (std::size_t j : J) {
      for (std::size_t k : J) slot.cross = std::max(slot.cross, std::abs(Q(idx(j), idx(k)) - H(idx(j), idx(k))));
    }
  });

  ConditionRecord rs, rp;
  rs.condition = "NC-III-SYM";
  rp.condition = "NC-III-PSD";
  Worst sym, psd;
  double cross = 0.0;
  std::size_t dir_checked = 0, dir_skipped = 0;
  for (const Slot& slot : slots) {
    sym.merge(slot.sym);
    psd.merge(slot.psd);
    cross = std::max(cross, slot.cross);
    rs.checked += slot.checked;
    rs.skipped += slot.skipped;
    dir_checked += slot.dir_checked;
    dir_skipped += slot.dir_skipped;
  }
  if (sym.seen) {
    rs.margin = -sym.value;
    rs.argmin = sym.where;
    rs.pass = rs.margin <= opt.tol;
  } else {
    rs.notes.push_back("vacuous: no two-sidedly admissible index at any check point");
  }
  rs.notes.push_back("margin is max |Q - Q^T| over J(t); passes when <= tol");
  finish_min(rp, psd, opt.tol);
  rp.checked = dir_checked;
  rp.skipped = dir_skipped + rs.skipped;
  finish_cross(rs, cross, opt.hessian_tol, "Q and pi1.d2F~/deta2");
  rp.cross_check = rs.cross_check;
  rp.cross_check_tol = rs.cross_check_tol;
  if (!(cross <= opt.hessian_tol)) {
    rp.pass = false;
    rp.notes.push_back("Q failed its Hessian cross-check");
  }
  rs.times = rp.times = point_times(points);
  return {rs, rp};
}

Certificate certify(const TransformContext& ctx, const ControlSignal& u, const OrdinarySignal& a,
                    const CertifyOptions& opt) {
  const SystemSpec& s = ctx.system();
  validate_control(u, s, "candidate-u");
  validate_ordinary(a, s, "candidate-a");
  if (opt.grid_u < 2 || opt.grid_a < 2) throw InputError("grid", "lattice needs at least two points per dimension");
  if (!(opt.tol >= 0.0)) throw InputError("tol", "tolerance must be nonnegative");

  auto stage = [](const char* name, auto&& body) {
    try {
      return body();
    } catch (const InputError&) {
      throw;
    } catch (const StageError&) {
      throw;
    } catch (const Error& e) {
      throw StageError(name, e.what());
    }
  };

  Certificate out;
  out.trajectory = stage("integrate_impulsive", [&] { return integrate_impulsive(ctx, u, a, opt.step); });
  out.adjoint = stage("solve_transformed_adjoint", [&] { return solve_transformed_adjoint(ctx, out.trajectory); });
  stage("pull_back_adjoint", [&] {
    pull_back_adjoint(ctx, out.adjoint, out.trajectory);
    return 0;
  });
  const std::vector<double> times = check_times(out.trajectory, opt.check_times);
  const std::vector<CheckPoint> points = stage("check_points", [&] {
    return evaluate_check_points(ctx, out.trajectory, out.adjoint, times, opt.grid_u);
  });

  auto& conds = out.report.conditions;
  stage("H-MIN", [&] {
    auto [ru, ra] = check_hamiltonian_min(ctx, points, opt);
    conds.push_back(std::move(ru));
    conds.push_back(std::move(ra));
    return 0;
  });
  stage("TRANSPORT", [&] {
    conds.push_back(check_transport(ctx, points, opt));
    return 0;
  });
  stage("VARIATION-BV", [&] {
    conds.push_back(check_variation_defaults(ctx, out.trajectory, points, opt));
    return 0;
  });
  stage("NC-I/NC-II", [&] {
    auto [r1, r2] = check_nc_first(ctx, out.trajectory, points, opt);
    conds.push_back(std::move(r1));
    conds.push_back(std::move(r2));
    return 0;
  });
  stage("NC-III", [&] {
    auto [rs, rp] = check_nc_second(ctx, points, opt);
    conds.push_back(std::move(rs));
    conds.push_back(std::move(rp));
    return 0;
  });
  out.report.overall_pass = std::all_of(conds.begin(), conds.end(), [](const ConditionRecord& r) { return r.pass; });
  return out;
}

std::string report_to_json(const CertificateReport& report) {
  using nlohmann::ordered_json;
  auto vec = [](const Vec& v) {
    ordered_json a = ordered_json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
  };
  ordered_json doc;
  doc["overall_pass"] = report.overall_pass;
  ordered_json list = ordered_json::array();
  for (const auto& r : report.conditions) {
    ordered_json c;
    c["condition"] = r.condition;
    c["pass"] = r.pass;
    c["margin"] = r.margin;
    ordered_json where;
    where["t"] = r.argmin.t;
    if (r.argmin.u) where["u"] = vec(*r.argmin.u);
    if (r.argmin.a) where["a"] = vec(*r.argmin.a);
    if (r.argmin.h) where["h"] = vec(*r.argmin.h);
    c["argmin"] = where;
    c["counts"] = {{"checked", r.checked}, {"skipped", r.skipped}};
    if (r.cross_check) c["cross_check"] = {{"value", *r.cross_check}, {"tol", r.cross_check_tol}};
    c["notes"] = r.notes;
    c["times"] = r.times;
    list.push_back(std::move(c));
  }
  doc["conditions"] = std::move(list);
  return doc.dump(2) + "\n";
}

}  // namespace impulse
