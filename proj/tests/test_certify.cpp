#include <catch_amalgamated.hpp>

#include <cmath>
#include <json.hpp>

#include "canonical.hpp"
#include "impulse/certify.hpp"
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

// The S_const optimum: jump to the lower bound right after 0, a at its lower bound.
ControlSignal s_const_optimal_u() { return ControlSignal::step(1.0, 0.0, vec({0}), vec({-2}), Side::Left); }

SystemSpec drifting_comm2() {
  return edited(canonical("s_comm2"), [](SystemDefinition& d) {
    d.f = {"a1*x2+u1", "sin(x1)-u2*x2"};
    d.gamma = "x1*x2+u1^2-0.5*u2";
  });
}

CertifyOptions fast(std::size_t checks = 25) {
  CertifyOptions o;
  o.check_times = checks;
  return o;
}

}  // namespace

TEST_CASE("box lattice and check times", "[certify]") {
  const auto L = box_lattice({{-1.0, 1.0}, {0.0, 0.0}, {2.0, 3.0}}, 3);
  REQUIRE(L.size() == 9);
  CHECK(L[0] == vec({-1, 0, 2}));
  CHECK(L[1] == vec({0, 0, 2}));
  CHECK(L[8] == vec({1, 0, 3}));
  CHECK_THROWS_AS(box_lattice({{0.0, 1.0}}, 1), InputError);

  const auto s = canonical("s_const");
  TransformContext ctx(s);
  const auto tr = integrate_impulsive(ctx, ControlSignal::constant(1.0, vec({0})), const_a(s, 0), 0.1);
  const auto all = check_times(tr, 0);
  REQUIRE(all.size() == 10);
  CHECK(std::abs(all[0] - 0.05) <= 1e-15);
  CHECK(check_times(tr, 4).size() == 4);
  for (double t : all) {
    for (const auto& node : tr.nodes) CHECK(t != node.t);
  }
}

TEST_CASE("S_const optimum passes every condition", "[certify]") {
  const auto s = canonical("s_const");
  TransformContext ctx(s);
  const auto cert = certify(ctx, s_const_optimal_u(), const_a(s, -1.0), fast());
  const auto& rep = cert.report;
  CHECK(std::abs(cert.trajectory.back().x_at(Side::Pointwise)[0] + 3.0) <= 1e-10);
  for (const auto& r : rep.conditions) {
    INFO(r.condition << " margin " << r.margin);
    CHECK(r.pass);
    CHECK(r.margin >= -1e-6);
  }
  CHECK(rep.overall_pass);
  REQUIRE(rep.conditions.size() == 8);
  CHECK(std::abs(rep.at("H-MIN-U").margin) <= 1e-10);
  CHECK(std::abs(rep.at("H-MIN-A").margin) <= 1e-12);
  CHECK(std::abs(rep.at("TRANSPORT").margin) <= 1e-10);
  // p . g = pi2 = 1 everywhere; decreasing variations leave U.
  CHECK(std::abs(rep.at("NC-I").margin - 1.0) <= 1e-10);
  CHECK(std::abs(rep.at("VARIATION-BV").margin - 1.0) <= 1e-10);
  CHECK(rep.at("VARIATION-BV").skipped == rep.at("VARIATION-BV").checked);
  CHECK(std::abs(rep.at("NC-II").margin) <= 1e-10);
  // u* sits on the bound, so no index is two-sidedly admissible.
  CHECK(rep.at("NC-III-PSD").checked == 0);
}

TEST_CASE("S_const suboptimal candidates fail", "[certify]") {
  const auto s = canonical("s_const");
  TransformContext ctx(s);
  {
    const auto rep = certify(ctx, s_const_optimal_u(), const_a(s, 1.0), fast()).report;
    CHECK_FALSE(rep.overall_pass);
    CHECK_FALSE(rep.at("H-MIN-A").pass);
    CHECK(std::abs(rep.at("H-MIN-A").margin + 2.0) <= 1e-6);
    REQUIRE(rep.at("H-MIN-A").argmin.a);
    CHECK((*rep.at("H-MIN-A").argmin.a)[0] == -1.0);
  }
  {
    const auto rep = certify(ctx, s_const_optimal_u(), const_a(s, 0.0), fast()).report;
    CHECK(std::abs(rep.at("H-MIN-A").margin + 1.0) <= 1e-10);
    CHECK(std::abs(rep.at("H-MIN-U").margin + 1.0) <= 1e-10);
  }
  {
    // Interior jump level: a decreasing variation is admissible and lowers the cost.
    const auto u = ControlSignal::step(1.0, 0.0, vec({0}), vec({-1.9}), Side::Left);
    const auto rep = certify(ctx, u, const_a(s, -1.0), fast()).report;
    CHECK_FALSE(rep.overall_pass);
    CHECK(rep.at("VARIATION-BV").margin <= -1e-3);
    CHECK(std::abs(rep.at("VARIATION-BV").margin + 1.0) <= 1e-10);
  }
}

TEST_CASE("printed NC-I orientation flips the verdict", "[certify]") {
  const auto s = canonical("s_const");
  TransformContext ctx(s);
  auto opt = fast();
  opt.nc1 = Nc1Orientation::Printed;
  const auto rep = certify(ctx, s_const_optimal_u(), const_a(s, -1.0), opt).report;
  CHECK_FALSE(rep.at("NC-I").pass);
  CHECK(std::abs(rep.at("NC-I").margin + 1.0) <= 1e-10);
  CHECK_FALSE(rep.overall_pass);
}

TEST_CASE("constant cost and drift-free Hamiltonian give zero margins", "[certify]") {
  {
    const auto s = edited(canonical("s_lin"), [](SystemDefinition& d) { d.gamma = "4"; });
    TransformContext ctx(s);
    const auto rep = certify(ctx, ControlSignal::step(1.0, 0.5, vec({0}), vec({0.5})), const_a(s, 0.3), fast()).report;
    CHECK(rep.overall_pass);
    for (const auto& r : rep.conditions) CHECK(r.margin == 0.0);
  }
  {
    const auto s = edited(canonical("s_comm2"), [](SystemDefinition& d) { d.f = {"1", "0.5"}; });
    TransformContext ctx(s);
    const auto u = ControlSignal::linear({0.0, 1.0}, {vec({0, 0}), vec({0.3, -0.2})});
    const auto rep = certify(ctx, u, const_a(s, 0.0), fast(10)).report;
    CHECK(std::abs(rep.at("H-MIN-A").margin) <= 1e-12);
  }
}

TEST_CASE("S_lin closed forms", "[certify]") {
  // u* = 0, a = 1: xi = 1 + t, pi1 = 1, pi2 = 1 + t, F~ = a exp(-eta).
  const auto s = canonical("s_lin");
  TransformContext ctx(s);
  auto opt = fast(20);
  const auto cert = certify(ctx, ControlSignal::constant(1.0, vec({0})), const_a(s, 1.0), opt);
  const auto& rep = cert.report;
  CHECK(std::abs(rep.at("H-MIN-U").margin - (-1.0 - std::exp(1.0))) <= 1e-8);
  CHECK(std::abs(rep.at("H-MIN-A").margin + 2.0) <= 1e-8);
  CHECK(std::abs(rep.at("TRANSPORT").margin - (std::exp(-1.0) - 1.0)) <= 1e-8);
  REQUIRE(rep.at("TRANSPORT").argmin.u);
  CHECK((*rep.at("TRANSPORT").argmin.u)[0] == 1.0);
  CHECK(std::abs(rep.at("NC-II").margin + 1.0) <= 1e-8);
  CHECK_FALSE(rep.at("NC-II").pass);
  // Q = pi1 exp(-eta) = 1 for every unit direction.
  CHECK(std::abs(rep.at("NC-III-PSD").margin - 1.0) <= 1e-8);
  CHECK(rep.at("NC-III-SYM").margin == 0.0);
  const auto times = check_times(cert.trajectory, opt.check_times);
  CHECK(std::abs(rep.at("NC-I").margin - (1.0 + times.front())) <= 1e-8);
  CHECK(std::abs(rep.at("VARIATION-BV").margin + (1.0 + times.back())) <= 1e-8);
  for (const char* id : {"TRANSPORT", "NC-II", "NC-III-SYM"}) {
    REQUIRE(rep.at(id).cross_check);
    CHECK(*rep.at(id).cross_check <= rep.at(id).cross_check_tol);
  }
}

TEST_CASE("variation checks at a single time", "[certify]") {
  {
    const auto s = canonical("s_const");
    TransformContext ctx(s);
    auto opt = fast();
    auto tr = integrate_impulsive(ctx, s_const_optimal_u(), const_a(s, -1.0), 1e-2);
    auto arc = solve_transformed_adjoint(ctx, tr);
    pull_back_adjoint(ctx, arc, tr);
    const auto r = check_variation_bv(ctx, tr, arc, VariationMap::constant(0.5, 1.0, vec({1})), opt);
    CHECK(std::abs(r.margin - 1.0) <= 1e-10);
    CHECK(r.pass);
    CHECK(*r.cross_check <= 1e-6);
    const auto zero = check_variation_bv(ctx, tr, arc, VariationMap::constant(0.5, 1.0, vec({0})), opt);
    CHECK(zero.margin == 0.0);
    CHECK_THROWS_AS(check_variation_bv(ctx, tr, arc, VariationMap::constant(0.5, 1.0, vec({-1})), opt),
                    InadmissibleVariation);
  }
  {
    const auto s = canonical("s_const");
    TransformContext ctx(s);
    const auto up = ControlSignal::step(1.0, 0.0, vec({0}), vec({2}), Side::Left);
    auto tr = integrate_impulsive(ctx, up, const_a(s, -1.0), 1e-2);
    auto arc = solve_transformed_adjoint(ctx, tr);
    pull_back_adjoint(ctx, arc, tr);
    try {
      check_variation_bv(ctx, tr, arc, VariationMap::constant(0.5, 1.0, vec({1})), fast());
      FAIL("expected an inadmissible variation");
    } catch (const InadmissibleVariation& e) {
      CHECK(e.time() == 0.5);
    }
  }
  {
    // S_lin with u* = 0, a = 1: pi2(t) = 1 + t.
    const auto s = canonical("s_lin");
    TransformContext ctx(s);
    auto tr = integrate_impulsive(ctx, ControlSignal::constant(1.0, vec({0})), const_a(s, 1.0), 1e-2);
    auto arc = solve_transformed_adjoint(ctx, tr);
    pull_back_adjoint(ctx, arc, tr);
    const auto ramp = VariationMap::make({0.5, 1.0}, {vec({0}), vec({1})}, {vec({0}), vec({1})});
    CHECK(std::abs(check_variation_bv(ctx, tr, arc, ramp, fast()).margin - 1.75) <= 1e-8);
    const auto jump = VariationMap::make({0.5, 0.7, 1.0}, {vec({0}), vec({0}), vec({1})}, {vec({0}), vec({1}), vec({1})});
    CHECK(std::abs(check_variation_bv(ctx, tr, arc, jump, fast()).margin - 1.7) <= 1e-8);
    const auto neg = VariationMap::constant(0.25, 1.0, vec({-1}));
    CHECK(std::abs(check_variation_bv(ctx, tr, arc, neg, fast()).margin + 1.25) <= 1e-8);
  }
}

TEST_CASE("dual routes agree on a drifting commutative system", "[certify]") {
  const auto s = drifting_comm2();
  TransformContext ctx(s);
  const auto u = ControlSignal::make(SignalKind::PiecewiseLinear, {0.0, 0.4, 1.0},
                                     {vec({0.0, 0.0}), vec({0.5, 0.3}), vec({-0.4, 0.6})},
                                     {vec({0.0, 0.0}), vec({-0.3, 0.1}), vec({-0.4, 0.6})});
  const auto a = OrdinarySignal::make({0.0, 0.5, 1.0}, {vec({0.7}), vec({-0.4})});
  auto opt = fast(30);
  opt.grid_u = 5;
  opt.grid_a = 3;
  const auto cert = certify(ctx, u, a, opt);
  const auto& rep = cert.report;
  CHECK(*rep.at("TRANSPORT").cross_check <= 1e-5);
  CHECK(*rep.at("NC-II").cross_check <= 1e-6);
  CHECK(*rep.at("NC-III-SYM").cross_check <= 1e-5);
  CHECK(rep.at("NC-III-SYM").margin <= 1e-7);
  CHECK(*rep.at("VARIATION-BV").cross_check <= 1e-6);
  CHECK(rep.at("NC-III-PSD").checked > 0);

  // Q against nested finite-difference brackets of tree-walked fields.
  const auto times = check_times(cert.trajectory, 5);
  const auto points = evaluate_check_points(ctx, cert.trajectory, cert.adjoint, times, 0);
  for (const auto& cp : points) {
    const Mat Q = bracket_matrix(s, cp);
    Vec y(4);
    y << cp.x, cp.u;
    auto bracket = [&](const oracle::Field& A, const oracle::Field& B) -> oracle::Field {
      return [A, B](const Vec& q) {
        const Mat DA = oracle::fd_jacobian(A, q, 1e-4), DB = oracle::fd_jacobian(B, q, 1e-4);
        return Vec(DB * A(q) - DA * B(q));
      };
    };
    oracle::Field f = [&](const Vec& q) { return oracle::field_at(s, s.f_field(), q, cp.a); };
    for (std::size_t j = 0; j < 2; ++j) {
      for (std::size_t k = 0; k < 2; ++k) {
        oracle::Field gj = [&, j](const Vec& q) { return oracle::field_at(s, s.g_field(j), q, Vec()); };
        oracle::Field gk = [&, k](const Vec& q) { return oracle::field_at(s, s.g_field(k), q, Vec()); };
        const Vec b = bracket(gj, bracket(gk, f))(y);
        CHECK(std::abs(cp.p.dot(b) - Q(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k))) <= 1e-4);
      }
    }
  }
}

TEST_CASE("NC-III directions", "[certify]") {
  const auto s = canonical("s_lin");
  TransformContext ctx(s);
  auto opt = fast(10);
  opt.directions = {vec({0.0})};
  const auto rep = certify(ctx, ControlSignal::constant(1.0, vec({0})), const_a(s, 1.0), opt).report;
  CHECK(rep.at("NC-III-PSD").margin == 0.0);
  opt.directions = {vec({0.0, 1.0})};
  CHECK_THROWS_AS(certify(ctx, ControlSignal::constant(1.0, vec({0})), const_a(s, 1.0), opt), InputError);
}

TEST_CASE("upstream failures name the stage", "[certify]") {
  const auto s = edited(canonical("s_lin"), [](SystemDefinition& d) { d.f = {"a1*x1^2"}; d.T = 2.0; });
  TransformContext ctx(s);
  try {
    certify(ctx, ControlSignal::constant(2.0, vec({0})), OrdinarySignal::constant(2.0, vec({1.0})), fast());
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "integrate_impulsive");
  }
  CHECK_THROWS_AS(certify(ctx, ControlSignal::constant(2.0, vec({3})), OrdinarySignal::constant(2.0, vec({1.0})), fast()),
                  InputError);
}

TEST_CASE("report JSON schema and determinism", "[certify]") {
  const auto s = canonical("s_const");
  TransformContext ctx(s);
  const auto a = certify(ctx, s_const_optimal_u(), const_a(s, 1.0), fast(10)).report;
  const auto b = certify(ctx, s_const_optimal_u(), const_a(s, 1.0), fast(10)).report;
  const std::string text = report_to_json(a);
  CHECK(text == report_to_json(b));
  const auto doc = nlohmann::json::parse(text);
  CHECK(doc["overall_pass"] == false);
  REQUIRE(doc["conditions"].size() == 8);
  const auto& h = doc["conditions"][1];
  CHECK(h["condition"] == "H-MIN-A");
  CHECK(h["pass"] == false);
  CHECK(std::abs(h["margin"].get<double>() + 2.0) <= 1e-6);
  CHECK(h["argmin"].contains("t"));
  CHECK(h["argmin"]["a"][0] == -1.0);
  CHECK(h["counts"]["checked"].get<int>() > 0);
  CHECK(h["counts"].contains("skipped"));
}
