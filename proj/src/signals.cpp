#include "impulse/signals.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "impulse/error.hpp"

namespace impulse {

const char* side_name(Side s) noexcept {
  switch (s) {
    case Side::Left: return "left";
    case Side::Right: return "right";
    default: return "pointwise";
  }
}

namespace {

void require(bool ok, const std::string& path, const std::string& msg) {
  if (!ok) throw InputError(path, msg);
}

void check_times(const std::vector<double>& t, const std::string& path) {
  require(t.size() >= 2, path, "at least two breakpoints (0 and T) are required");
  require(t.front() == 0.0, path, "first breakpoint must be 0");
  for (std::size_t k = 0; k < t.size(); ++k) require(std::isfinite(t[k]), path, "breakpoints must be finite");
  for (std::size_t k = 1; k < t.size(); ++k) require(t[k] > t[k - 1], path, "breakpoints not increasing");
}

Vec lerp(const Vec& a, const Vec& b, double theta) { return (1.0 - theta) * a + theta * b; }

std::string format_time(double t) {
  std::ostringstream os;
  os.precision(17);
  os << t;
  return os.str();
}

// Integral over [0, h] of |a + (b - a) s / h| for a scalar linear function.
double abs_linear_integral(double a, double b, double h) {
  if ((a >= 0 && b >= 0) || (a <= 0 && b <= 0)) return 0.5 * h * std::abs(a + b);
  return 0.5 * h * (a * a + b * b) / (std::abs(a) + std::abs(b));
}

}  // namespace

// ---------------------------------------------------------------------------
// ControlSignal

ControlSignal ControlSignal::make(SignalKind kind, std::vector<double> breakpoints, std::vector<Vec> left,
                                  std::vector<Vec> right, std::vector<Side> pointwise) {
  check_times(breakpoints, "/breakpoints");
  const std::size_t K = breakpoints.size();
  require(left.size() == K, "/left", "one value per breakpoint is required");
  require(right.size() == K, "/right", "one value per breakpoint is required");
  const Eigen::Index m = left[0].size();
  require(m > 0, "/left/0", "values must be nonempty");
  for (std::size_t k = 0; k < K; ++k) {
    require(left[k].size() == m, "/left/" + std::to_string(k), "inconsistent dimension");
    require(right[k].size() == m, "/right/" + std::to_string(k), "inconsistent dimension");
    require(left[k].allFinite() && right[k].allFinite(), "/left/" + std::to_string(k), "values must be finite");
  }
  if (pointwise.empty()) {
    pointwise.assign(K, Side::Right);
    pointwise.back() = Side::Left;
  }
  require(pointwise.size() == K, "/pointwise_side", "one side per breakpoint is required");
  for (Side s : pointwise) require(s != Side::Pointwise, "/pointwise_side", "side must be left or right");
  if (kind == SignalKind::PiecewiseConstant) {
    for (std::size_t k = 0; k + 1 < K; ++k) {
      require(left[k + 1] == right[k], "/left/" + std::to_string(k + 1),
              "piecewise-constant signal must hold right[k] until the next breakpoint");
    }
  }
  ControlSignal u;
  u.kind_ = kind;
  u.dim_ = static_cast<std::size_t>(m);
  u.t_ = std::move(breakpoints);
  u.left_ = std::move(left);
  u.right_ = std::move(right);
  u.side_ = std::move(pointwise);
  return u;
}

ControlSignal ControlSignal::linear(std::vector<double> times, std::vector<Vec> values) {
  std::vector<Vec> copy = values;
  return make(SignalKind::PiecewiseLinear, std::move(times), std::move(copy), std::move(values));
}

ControlSignal ControlSignal::constant(double T, const Vec& value) {
  return make(SignalKind::PiecewiseConstant, {0.0, T}, {value, value}, {value, value});
}

ControlSignal ControlSignal::step(double T, double tau, const Vec& before, const Vec& after, Side side) {
  if (tau == 0.0) {
    return make(SignalKind::PiecewiseConstant, {0.0, T}, {before, after}, {after, after}, {side, Side::Left});
  }
  if (tau == T) {
    return make(SignalKind::PiecewiseConstant, {0.0, T}, {before, before}, {before, after}, {Side::Right, side});
  }
  return make(SignalKind::PiecewiseConstant, {0.0, tau, T}, {before, before, after}, {before, after, after},
              {Side::Right, side, Side::Left});
}

std::size_t ControlSignal::breakpoint_index(double t) const noexcept {
  auto it = std::lower_bound(t_.begin(), t_.end(), t);
  if (it != t_.end() && *it == t) return static_cast<std::size_t>(it - t_.begin());
  return npos;
}

std::size_t ControlSignal::piece_index(double t) const {
  if (!(t >= 0.0 && t <= T())) throw InputError("t", "time " + format_time(t) + " outside the horizon");
  auto it = std::upper_bound(t_.begin(), t_.end(), t);
  std::size_t k = static_cast<std::size_t>(it - t_.begin());
  if (k == 0) return 0;
  return std::min(k - 1, t_.size() - 2);
}

Vec ControlSignal::piece_value(std::size_t k, double t) const {
  if (kind_ == SignalKind::PiecewiseConstant) return right_[k];
  const double theta = (t - t_[k]) / (t_[k + 1] - t_[k]);
  return lerp(right_[k], left_[k + 1], theta);
}

Vec ControlSignal::piece_slope(std::size_t k) const {
  if (kind_ == SignalKind::PiecewiseConstant) return Vec::Zero(static_cast<Eigen::Index>(dim_));
  return (left_[k + 1] - right_[k]) / (t_[k + 1] - t_[k]);
}

Vec ControlSignal::value_at(double t, Side side) const {
  if (!(t >= 0.0 && t <= T())) throw InputError("t", "time " + format_time(t) + " outside the horizon");
  const std::size_t b = breakpoint_index(t);
  if (b != npos) {
    if (side == Side::Pointwise) side = side_[b];
    return side == Side::Left ? left_[b] : right_[b];
  }
  return piece_value(piece_index(t), t);
}

bool ControlSignal::has_jump(std::size_t k) const {
  if (left_[k] == right_[k]) return false;
  if (k == 0) return side_[0] == Side::Left;
  if (k + 1 == t_.size()) return side_[k] == Side::Right;
  return true;
}

bool ControlSignal::is_continuous() const {
  for (std::size_t k = 0; k < t_.size(); ++k) {
    if (has_jump(k)) return false;
  }
  return true;
}

double ControlSignal::total_variation() const {
  double tv = 0.0;
  for (std::size_t k = 0; k < t_.size(); ++k) {
    if (has_jump(k)) tv += (right_[k] - left_[k]).lpNorm<1>();
    if (k + 1 < t_.size()) tv += (left_[k + 1] - right_[k]).lpNorm<1>();
  }
  return tv;
}

void validate_control(const ControlSignal& u, const SystemSpec& s, const std::string& path) {
  require(u.dim() == s.m(), path, "control dimension " + std::to_string(u.dim()) + " does not match m");
  require(u.T() == s.T(), path + "/breakpoints", "last breakpoint must equal the horizon T");
  for (std::size_t k = 0; k < u.size(); ++k) {
    for (Side side : {Side::Left, Side::Right}) {
      const Vec& v = side == Side::Left ? u.left(k) : u.right(k);
      for (std::size_t i = 0; i < s.m(); ++i) {
        if (!s.U()[i].contains(v[static_cast<Eigen::Index>(i)])) {
          throw InputError(path + "/" + side_name(side) + "/" + std::to_string(k),
                           "u" + std::to_string(i + 1) + " outside U at t=" + format_time(u.breakpoints()[k]) + " (" +
                               side_name(side) + ")");
        }
      }
    }
  }
  const Vec& start = u.pointwise(0);
  require((start - s.u0()).lpNorm<Eigen::Infinity>() <= 1e-12, path, "u(0) differs from the system's u0");
}

ControlSignal mollify(const ControlSignal& u, int k) {
  if (k < 1) throw InputError("k", "mollification index must be positive");
  if (u.is_continuous()) return u;
  const auto& t = u.breakpoints();
  const std::size_t K = t.size();
  const double width = 1.0 / k;
  std::vector<double> times;
  std::vector<Vec> values;
  auto push = [&](double time, const Vec& v) {
    times.push_back(time);
    values.push_back(v);
  };
  for (std::size_t b = 0; b < K; ++b) {
    const double tau = t[b];
    if (!u.has_jump(b)) {
      push(tau, u.pointwise(b));
      continue;
    }
    if (u.pointwise_side(b) == Side::Right) {
      const double w = std::min(width, (tau - t[b - 1]) / 3.0);
      push(tau - w, u.piece_value(b - 1, tau - w));
      push(tau, u.right(b));
    } else {
      const double w = std::min(width, (t[b + 1] - tau) / 3.0);
      push(tau, u.left(b));
      push(tau + w, u.piece_value(b, tau + w));
    }
  }
  return ControlSignal::linear(std::move(times), std::move(values));
}

double l1_distance(const ControlSignal& a, const ControlSignal& b) {
  if (a.dim() != b.dim() || a.T() != b.T()) throw InputError("", "signals are not comparable");
  std::vector<double> grid = a.breakpoints();
  grid.insert(grid.end(), b.breakpoints().begin(), b.breakpoints().end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    const double lo = grid[k], hi = grid[k + 1];
    const std::size_t pa = a.piece_index(0.5 * (lo + hi)), pb = b.piece_index(0.5 * (lo + hi));
    const Vec d0 = a.piece_value(pa, lo) - b.piece_value(pb, lo);
    const Vec d1 = a.piece_value(pa, hi) - b.piece_value(pb, hi);
    for (Eigen::Index i = 0; i < d0.size(); ++i) total += abs_linear_integral(d0[i], d1[i], hi - lo);
  }
  return total;
}

// ---------------------------------------------------------------------------
// OrdinarySignal

OrdinarySignal OrdinarySignal::make(std::vector<double> breakpoints, std::vector<Vec> values) {
  check_times(breakpoints, "/breakpoints");
  require(values.size() + 1 == breakpoints.size(), "/values", "one value per piece is required");
  for (std::size_t k = 0; k < values.size(); ++k) {
    require(values[k].size() == values[0].size() && values[0].size() > 0, "/values/" + std::to_string(k),
            "inconsistent dimension");
    require(values[k].allFinite(), "/values/" + std::to_string(k), "values must be finite");
  }
  OrdinarySignal a;
  a.t_ = std::move(breakpoints);
  a.values_ = std::move(values);
  return a;
}

OrdinarySignal OrdinarySignal::constant(double T, const Vec& value) { return make({0.0, T}, {value}); }

std::size_t OrdinarySignal::piece_index(double t) const {
  if (!(t >= 0.0 && t <= T())) throw InputError("t", "time " + format_time(t) + " outside the horizon");
  auto it = std::upper_bound(t_.begin(), t_.end(), t);
  const std::size_t k = static_cast<std::size_t>(it - t_.begin());
  return std::min(k - 1, values_.size() - 1);
}

Vec OrdinarySignal::value_at(double t) const { return values_[piece_index(t)]; }

void validate_ordinary(const OrdinarySignal& a, const SystemSpec& s, const std::string& path) {
  require(a.dim() == s.l(), path, "ordinary control dimension does not match l");
  require(a.T() == s.T(), path + "/breakpoints", "last breakpoint must equal the horizon T");
  for (std::size_t k = 0; k < a.values().size(); ++k) {
    for (std::size_t i = 0; i < s.l(); ++i) {
      if (!s.A()[i].contains(a.values()[k][static_cast<Eigen::Index>(i)])) {
        throw InputError(path + "/values/" + std::to_string(k),
                         "a" + std::to_string(i + 1) + " outside A at t=" + format_time(a.breakpoints()[k]));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// VariationMap

VariationMap VariationMap::make(std::vector<double> knots, std::vector<Vec> left, std::vector<Vec> right) {
  require(knots.size() >= 2, "knots", "at least two knots are required");
  for (std::size_t k = 1; k < knots.size(); ++k) require(knots[k] > knots[k - 1], "knots", "knots not increasing");
  require(left.size() == knots.size() && right.size() == knots.size(), "knots", "one value per knot is required");
  VariationMap nu;
  nu.s_ = std::move(knots);
  nu.left_ = std::move(left);
  nu.right_ = std::move(right);
  nu.left_.front() = nu.right_.front();
  nu.right_.back() = nu.left_.back();
  return nu;
}

VariationMap VariationMap::constant(double t0, double T, const Vec& value) {
  return make({t0, T}, {value, value}, {value, value});
}

Vec VariationMap::slope(std::size_t k) const { return (left_[k + 1] - right_[k]) / (s_[k + 1] - s_[k]); }

Vec VariationMap::value_at(double s) const { return value_at(s, Side::Pointwise); }

Vec VariationMap::value_at(double s, Side side) const {
  if (!(s >= t0() && s <= T())) throw InputError("s", "time outside the variation window");
  auto it = std::lower_bound(s_.begin(), s_.end(), s);
  if (it != s_.end() && *it == s) {
    const std::size_t k = static_cast<std::size_t>(it - s_.begin());
    if (side == Side::Left) return left_[k];
    if (side == Side::Right) return right_[k];
    return k + 1 == s_.size() ? left_[k] : right_[k];
  }
  const std::size_t k = static_cast<std::size_t>(it - s_.begin()) - 1;
  const double theta = (s - s_[k]) / (s_[k + 1] - s_[k]);
  return lerp(right_[k], left_[k + 1], theta);
}

std::vector<std::pair<double, Vec>> VariationMap::jumps() const {
  std::vector<std::pair<double, Vec>> out;
  for (std::size_t k = 1; k + 1 < s_.size(); ++k) {
    if (left_[k] != right_[k]) out.emplace_back(s_[k], right_[k] - left_[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Radon integral

Vec SampledArc::at(double time) const {
  if (t.empty() || time < t.front() || time > t.back()) throw InputError("grid", "arc does not cover the time");
  auto it = std::lower_bound(t.begin(), t.end(), time);
  const std::size_t k = static_cast<std::size_t>(it - t.begin());
  if (t[k] == time) return v[k];
  const double theta = (time - t[k - 1]) / (t[k] - t[k - 1]);
  return lerp(v[k - 1], v[k], theta);
}

double radon_integral(const SampledArc& p2, const VariationMap& nu) {
  if (p2.t.size() != p2.v.size() || p2.t.empty()) throw InputError("grid", "malformed sampled arc");
  if (p2.t.front() > nu.t0() || p2.t.back() < nu.T()) throw InputError("grid", "grid does not cover window");
  double total = 0.0;
  for (const auto& [tau, delta] : nu.jumps()) total += p2.at(tau).dot(delta);

  const auto& knots = nu.knots();
  for (std::size_t k = 0; k + 1 < knots.size(); ++k) {
    const Vec rate = nu.slope(k);
    if (rate.isZero(0.0)) continue;
    const double lo = knots[k], hi = knots[k + 1];
    // Trapezoid rule on the grid nodes inside (lo, hi) plus the interval ends.
    std::vector<double> nodes{lo};
    for (double s : p2.t) {
      if (s > lo && s < hi) nodes.push_back(s);
    }
    nodes.push_back(hi);
    Vec prev = p2.at(nodes[0]);
    for (std::size_t i = 1; i < nodes.size(); ++i) {
      const Vec cur = p2.at(nodes[i]);
      total += 0.5 * (nodes[i] - nodes[i - 1]) * (prev + cur).dot(rate);
      prev = cur;
    }
  }
  return total;
}

}  // namespace impulse
