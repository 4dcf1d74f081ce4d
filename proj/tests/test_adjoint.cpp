#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "canonical.hpp"
#include "impulse/adjoint.hpp"
#include "impulse/error.hpp"
#include "oracles.hpp"

using namespace impulse;
using testing_support::canonical;
using testing_support::edited;
using testing_support::vec;

namespace {

OrdinarySignal const_a(const SystemSpec& s, double v) {
  return OrdinarySignal::constant(s.T(), Vec::Constant(static_cast<Eigen::Index>(s.l()), v));
}

SystemSpec drifting_comm2() {
  return edited(canonical("s_comm2"), [](SystemDefinition& d) {
    d.f = {"a1*x2+u1", "sin(x1)-u2*x2"};
    d.gamma = "x1*x2+u1^2-0.5*u2";
  });
}

// p from the original adjoint along a smooth trajectory.
std::vector<Vec> oracle_p(const SystemSpec& s, const Trajectory& tr) {
  std::vector<Vec> rate, aval;
  for (std::size_t k = 0; k + 1 < tr.size(); ++k) {
    rate.push_back(tr.u.piece_slope(tr.cells[k].piece));
    aval.push_back(tr.cells[k].a);
  }
  const auto& last = tr.back();
  Vec yT(static_cast<Eigen::Index>(s.dim()));
  yT << last.x[0], last.u[0];
  const Vec pT = grad_gamma(s, last.x[0], last.u[0]);
  return oracle::original_adjoint(s, tr.times(), rate, aval, yT, pT, 2);
}

}  // namespace

TEST_CASE("grad_Psi closed forms", "[adjoint]") {
  {
    const auto s = canonical("s_const");
    TransformContext ctx(s);
    for (double xi : {-1.0, 0.0, 2.5}) {
      for (double eta : {-1.5, 0.0, 1.0}) {
        const Vec g = grad_Psi(ctx, vec({xi}), vec({eta}));
        CHECK(std::abs(g[0] - 1.0) <= 1e-12);
        CHECK(std::abs(g[1] - 1.0) <= 1e-12);
      }
    }
  }
  {
    const auto s = canonical("s_lin");
    TransformContext ctx(s);
    for (double xi : {-1.0, 0.5, 2.0}) {
      for (double eta : {-0.7, 0.0, 0.9}) {
        const Vec g = grad_Psi(ctx, vec({xi}), vec({eta}));
        CHECK(std::abs(g[0] - std::exp(eta)) <= 1e-8);
        CHECK(std::abs(g[1] - xi * std::exp(eta)) <= 1e-8);
      }
    }
  }
  const auto s = edited(canonical("s_lin"), [](SystemDefinition& d) { d.gamma = "3"; });
  TransformContext ctx(s);
  CHECK(grad_Psi(ctx, vec({0.4}), vec({0.2})).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("transformed Jacobian matches closed forms", "[adjoint]") {
  const auto s = canonical("s_lin");
  TransformContext ctx(s);
  for (double eta : {-0.8, 0.0, 0.6}) {
    const Mat J = transformed_jacobian(ctx, vec({1.3}), vec({eta}), vec({0.7}));
    CHECK(std::abs(J(0, 0)) <= 1e-8);
    CHECK(std::abs(J(0, 1) + 0.7 * std::exp(-eta)) <= 1e-8);
  }
}

TEST_CASE("transformed adjoint closed forms", "[adjoint]") {
  {
    const auto s = canonical("s_const");
    TransformContext ctx(s);
    const auto u = ControlSignal::step(1.0, 0.0, vec({0}), vec({-2}), Side::Left);
    const auto tr = integrate_impulsive(ctx, u, const_a(s, -1.0), 1e-2);
    auto arc = solve_transformed_adjoint(ctx, tr);
    for (const auto& node : arc.nodes) {
      CHECK(std::abs(node.pi[0] - 1.0) <= 1e-10);
      CHECK(std::abs(node.pi[1] - 1.0) <= 1e-10);
    }
    pull_back_adjoint(ctx, arc, tr);
    CHECK(arc.terminal_residual <= 1e-7);
    for (const auto& node : arc.nodes) {
      for (int side = 0; side < 2; ++side) {
        CHECK(std::abs(node.p[side][0] - 1.0) <= 1e-10);
        CHECK(std::abs(node.p[side][1]) <= 1e-10);
      }
    }
  }
  {
    const auto s = canonical("s_lin");
    TransformContext ctx(s);
    const auto u = ControlSignal::step(1.0, 0.4, vec({0}), vec({0.5}));
    const auto tr = integrate_impulsive(ctx, u, const_a(s, 0.0), 1e-2);
    auto arc = solve_transformed_adjoint(ctx, tr);
    const Vec expect = grad_Psi(ctx, tr.back().xi[0], tr.back().u_at(Side::Pointwise));
    for (const auto& node : arc.nodes) CHECK((node.pi - expect).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
  {
    const auto s = canonical("s_lin");
    TransformContext ctx(s);
    const auto tr = integrate_impulsive(ctx, ControlSignal::constant(1.0, vec({0})), const_a(s, 0.0), 1e-2);
    auto arc = solve_transformed_adjoint(ctx, tr);
    pull_back_adjoint(ctx, arc, tr);
    for (const auto& node : arc.nodes) {
      CHECK(std::abs(node.pi[0] - 1.0) <= 1e-10);
      CHECK(std::abs(node.pi[1] - 1.0) <= 1e-10);
      CHECK(std::abs(node.p[0][0] - 1.0) <= 1e-10);
      CHECK(std::abs(node.p[0][1]) <= 1e-10);
    }
  }
  {
    const auto s = edited(canonical("s_lin"), [](SystemDefinition& d) { d.gamma = "2.5"; });
    TransformContext ctx(s);
    const auto tr = integrate_impulsive(ctx, ControlSignal::step(1.0, 0.5, vec({0}), vec({1})), const_a(s, 1.0), 1e-2);
    auto arc = solve_transformed_adjoint(ctx, tr);
    pull_back_adjoint(ctx, arc, tr);
    for (const auto& node : arc.nodes) {
      CHECK(node.pi.lpNorm<Eigen::Infinity>() == 0.0);
      CHECK(node.p[0].lpNorm<Eigen::Infinity>() == 0.0);
      CHECK(node.p[1].lpNorm<Eigen::Infinity>() == 0.0);
    }
  }
}

TEST_CASE("pull-back agrees with the original adjoint for smooth controls", "[adjoint]") {
  for (const auto& s : {canonical("s_lin"), drifting_comm2()}) {
    TransformContext ctx(s);
    std::vector<Vec> v;
    const double levels[] = {0.0, 0.6, -0.3, 0.4};
    for (double lv : levels) v.push_back(Vec::Constant(static_cast<Eigen::Index>(s.m()), lv));
    const auto u = ControlSignal::linear({0.0, 0.3, 0.7, 1.0}, v);
    const auto a = OrdinarySignal::make({0.0, 0.6, 1.0}, {Vec::Constant(static_cast<Eigen::Index>(s.l()), 1.0),
                                                           Vec::Constant(static_cast<Eigen::Index>(s.l()), -0.5)});
    for (int route = 0; route < 2; ++route) {
      const auto tr = route == 0 ? integrate_smooth(ctx, u, a, 1e-3) : integrate_impulsive(ctx, u, a, 1e-3);
      auto arc = solve_transformed_adjoint(ctx, tr);
      pull_back_adjoint(ctx, arc, tr);
      CHECK(arc.terminal_residual <= 1e-7);
      const auto p = oracle_p(s, tr);
      double worst = 0.0;
      for (std::size_t k = 0; k < tr.size(); ++k) worst = std::max(worst, (arc.nodes[k].p[0] - p[k]).lpNorm<Eigen::Infinity>());
      CHECK(worst <= 1e-5);
    }
  }
}

TEST_CASE("pairing with classical variations changes at rate pi2 . dnu/dt", "[adjoint]") {
  // S_lin: F~ = a exp(-eta), so d omega/dt = -a exp(-u) nu.
  const auto s = canonical("s_lin");
  TransformContext ctx(s);
  const auto u = ControlSignal::linear({0.0, 1.0}, {vec({0.0}), vec({0.5})});
  auto nu = [](double t) { return 0.3 * std::sin(3.0 * t); };
  auto dnu = [](double t) { return 0.9 * std::cos(3.0 * t); };
  double previous = 0.0;
  for (double h : {1e-2, 5e-3}) {
    const auto tr = integrate_smooth(ctx, u, const_a(s, 1.0), h);
    const auto arc = solve_transformed_adjoint(ctx, tr);
    std::vector<double> omega(tr.size(), 0.0);
    for (std::size_t k = 0; k + 1 < tr.size(); ++k) {
      const double t0 = tr.nodes[k].t, dt = tr.nodes[k + 1].t - t0;
      auto rate = [&](double t) { return -std::exp(-u.value_at(t)[0]) * nu(t); };
      omega[k + 1] = omega[k] + dt / 6.0 * (rate(t0) + 4.0 * rate(t0 + 0.5 * dt) + rate(t0 + dt));
    }
    double worst = 0.0;
    for (std::size_t k = 0; k + 1 < tr.size(); ++k) {
      const double t0 = tr.nodes[k].t, t1 = tr.nodes[k + 1].t;
      auto pairing = [&](std::size_t i) { return arc.nodes[i].pi[0] * omega[i] + arc.nodes[i].pi[1] * nu(tr.nodes[i].t); };
      const double quotient = (pairing(k + 1) - pairing(k)) / (t1 - t0);
      const double pi2_mid = 0.5 * (arc.nodes[k].pi[1] + arc.nodes[k + 1].pi[1]);
      worst = std::max(worst, std::abs(quotient - pi2_mid * dnu(0.5 * (t0 + t1))));
    }
    CHECK(worst <= 5e-4);
    if (previous > 0.0) CHECK(previous / worst >= 3.0);
    previous = worst;
  }
}

TEST_CASE("pull-back rejects mismatched grids", "[adjoint]") {
  const auto s = canonical("s_const");
  TransformContext ctx(s);
  const auto u = ControlSignal::constant(1.0, vec({0}));
  const auto coarse = integrate_impulsive(ctx, u, const_a(s, 0), 0.1);
  const auto fine = integrate_impulsive(ctx, u, const_a(s, 0), 0.05);
  auto arc = solve_transformed_adjoint(ctx, coarse);
  CHECK_THROWS_AS(pull_back_adjoint(ctx, arc, fine), InputError);
}

TEST_CASE("lifted commutativity audit", "[adjoint]") {
  {
    const auto s = canonical("s_comm2");
    const auto samples = sample_lifted_points(s, 50, 2.0);
    const auto r = audit_lifted_commutativity(s, samples);
    CHECK(r.pass);
    CHECK(r.max_norm <= 1e-8);
    CHECK(r.pairs.size() == 1);
  }
  {
    const auto s = canonical("s_noncomm");
    const auto samples = sample_lifted_points(s, 50, 2.0);
    const auto r = audit_lifted_commutativity(s, samples);
    CHECK_FALSE(r.pass);
    CHECK(r.max_norm >= 0.5);
  }
  {
    const auto s = canonical("s_lin");
    const auto r = audit_lifted_commutativity(s, sample_lifted_points(s, 10, 1.0));
    CHECK(r.pass);
    CHECK(r.pairs.empty());
  }
}

TEST_CASE("lifted bracket matches a finite-difference oracle and is antisymmetric", "[adjoint]") {
  const auto s = edited(canonical("s_noncomm"), [](SystemDefinition& d) {
    d.g = {{"sin(x2)+u2", "x1*u1"}, {"x1*x2", "exp(0.3*u1)-x2"}};
  });
  const std::size_t dim = s.dim();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    LiftedPoint p{vec({unit(rng), unit(rng)}), vec({0.5 * unit(rng), 0.5 * unit(rng)}),
                  vec({unit(rng), unit(rng), unit(rng), unit(rng)})};
    const Vec none;
    auto lifted = [&](std::size_t i) {
      return [&, i](const Vec& v) {
        const Vec y = v.head(static_cast<Eigen::Index>(dim)), w = v.tail(static_cast<Eigen::Index>(dim));
        const Mat Dg = oracle::fd_jacobian([&](const Vec& q) { return oracle::field_at(s, s.g_field(i), q, none); }, y, 1e-5);
        Vec out(2 * static_cast<Eigen::Index>(dim));
        out << oracle::field_at(s, s.g_field(i), y, none), -(Dg.transpose() * w);
        return out;
      };
    };
    Vec point(2 * static_cast<Eigen::Index>(dim));
    point << p.x, p.z, p.w;
    const Mat D0 = oracle::fd_jacobian(lifted(0), point, 1e-4);
    const Mat D1 = oracle::fd_jacobian(lifted(1), point, 1e-4);
    const Vec expect = D1 * lifted(0)(point) - D0 * lifted(1)(point);
    const Vec got = lifted_bracket(s, 0, 1, p);
    CHECK((got - expect).lpNorm<Eigen::Infinity>() <= 1e-5);
    CHECK(lifted_bracket(s, 1, 0, p) == -got);
    CHECK(lifted_bracket(s, 1, 1, p).lpNorm<Eigen::Infinity>() == 0.0);
  }
}
