#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "canonical.hpp"
#include "impulse/error.hpp"
#include "impulse/signals.hpp"

using namespace impulse;
using testing_support::canonical;
using testing_support::vec;

namespace {

std::string write_temp(const std::string& name, const std::string& body) {
  const std::string path = std::string("/tmp/impulse_signals_") + name;
  std::ofstream(path, std::ios::binary) << body;
  return path;
}

}  // namespace

TEST_CASE("step value_at honours the declared sides", "[signals]") {
  const Vec u0 = vec({0.0}), up = vec({2.0});
  const auto u = ControlSignal::step(1.0, 0.5, u0, up, Side::Right);
  CHECK(u.value_at(0.5)[0] == 2.0);
  CHECK(u.value_at(0.5, Side::Left)[0] == 0.0);
  CHECK(u.value_at(0.5, Side::Right)[0] == 2.0);
  CHECK(u.value_at(0.25)[0] == 0.0);
  CHECK(u.value_at(1.0)[0] == 2.0);
  CHECK(u.has_jump(1));
  CHECK_FALSE(u.is_continuous());
  CHECK(u.total_variation() == 2.0);
  CHECK_THROWS_AS(u.value_at(1.5), InputError);
  CHECK_THROWS_AS(u.value_at(-0.1), InputError);

  const auto left = ControlSignal::step(1.0, 0.5, u0, up, Side::Left);
  CHECK(left.value_at(0.5)[0] == 0.0);
}

TEST_CASE("piecewise-linear interpolation", "[signals]") {
  const auto u = ControlSignal::linear({0.0, 1.0}, {vec({0.0}), vec({1.0})});
  CHECK(u.value_at(0.25)[0] == Catch::Approx(0.25).margin(1e-15));
  CHECK(u.value_at(1.0)[0] == 1.0);
  CHECK(u.piece_slope(0)[0] == 1.0);
  CHECK(u.is_continuous());
}

TEST_CASE("one-sided values are returned bit-exactly", "[signals]") {
  const double a = 0.1 + 0.2, b = std::nextafter(1.0 / 3.0, 1.0), c = -std::sqrt(2.0);
  const auto u = ControlSignal::make(SignalKind::PiecewiseLinear, {0.0, 0.37, 1.0}, {vec({a}), vec({b}), vec({c})},
                                     {vec({a}), vec({c}), vec({c})});
  CHECK(u.value_at(0.37, Side::Left)[0] == b);
  CHECK(u.value_at(0.37, Side::Right)[0] == c);
  CHECK(u.value_at(0.0)[0] == a);
  CHECK(u.value_at(1.0)[0] == c);
  CHECK(u.piece_value(0, 0.37)[0] == b);
  CHECK(u.piece_value(1, 0.37)[0] == c);
}

TEST_CASE("endpoint jumps only count on the pointwise side", "[signals]") {
  const auto jump0 = ControlSignal::step(1.0, 0.0, vec({0.0}), vec({-2.0}), Side::Left);
  CHECK(jump0.value_at(0.0)[0] == 0.0);
  CHECK(jump0.value_at(0.0, Side::Right)[0] == -2.0);
  CHECK(jump0.value_at(0.5)[0] == -2.0);
  CHECK(jump0.has_jump(0));

  const auto hidden = ControlSignal::make(SignalKind::PiecewiseConstant, {0.0, 1.0}, {vec({5.0}), vec({1.0})},
                                          {vec({1.0}), vec({1.0})});
  CHECK_FALSE(hidden.has_jump(0));
  CHECK(hidden.is_continuous());
}

TEST_CASE("structural validation", "[signals]") {
  CHECK_THROWS_WITH(ControlSignal::linear({0.0, 0.6, 0.4, 1.0}, {vec({0}), vec({0}), vec({0}), vec({0})}),
                    Catch::Matchers::ContainsSubstring("breakpoints not increasing"));
  CHECK_THROWS_AS(ControlSignal::linear({0.1, 1.0}, {vec({0}), vec({0})}), InputError);
  CHECK_THROWS_AS(ControlSignal::make(SignalKind::PiecewiseConstant, {0.0, 0.5, 1.0}, {vec({0}), vec({0}), vec({2})},
                                      {vec({0}), vec({1}), vec({2})}),
                  InputError);
}

TEST_CASE("validate_control against a system", "[signals]") {
  const auto s = canonical("s_const");  // U = [-2, 2], u0 = 0
  validate_control(ControlSignal::step(1.0, 0.5, vec({0}), vec({2})), s);
  try {
    validate_control(ControlSignal::step(1.0, 0.5, vec({0}), vec({3})), s);
    FAIL("expected an error");
  } catch (const InputError& e) {
    const std::string what = e.what();
    CHECK_THAT(what, Catch::Matchers::ContainsSubstring("u1 outside U"));
    CHECK_THAT(what, Catch::Matchers::ContainsSubstring("t=0.5"));
  }
  CHECK_THROWS_WITH(validate_control(ControlSignal::constant(1.0, vec({1.0})), s),
                    Catch::Matchers::ContainsSubstring("u0"));
  CHECK_THROWS_AS(validate_control(ControlSignal::constant(2.0, vec({0.0})), s), InputError);
}

TEST_CASE("mollify: continuous input is unchanged", "[signals]") {
  const auto u = ControlSignal::linear({0.0, 0.3, 1.0}, {vec({0}), vec({1}), vec({-1})});
  const auto v = mollify(u, 5);
  CHECK(v.breakpoints() == u.breakpoints());
  CHECK(l1_distance(u, v) == 0.0);
}

TEST_CASE("mollify: unit step L1 distance is 1/(2k)", "[signals]") {
  const auto u = ControlSignal::step(1.0, 0.5, vec({0}), vec({1}));
  const auto v = mollify(u, 10);
  CHECK(v.is_continuous());
  CHECK(l1_distance(u, v) == Catch::Approx(0.05).margin(1e-15));
  CHECK(v.value_at(0.5)[0] == u.value_at(0.5)[0]);
  CHECK(v.value_at(0.0)[0] == u.value_at(0.0)[0]);
  CHECK(v.value_at(1.0)[0] == u.value_at(1.0)[0]);
  CHECK(v.value_at(0.3)[0] == 0.0);
  CHECK(v.value_at(0.7)[0] == 1.0);
  for (int k : {20, 40, 80}) CHECK(l1_distance(u, mollify(u, k)) == Catch::Approx(0.5 / k).margin(1e-14));
}

TEST_CASE("mollify: stacked jumps sum their triangle areas", "[signals]") {
  const auto u = ControlSignal::make(SignalKind::PiecewiseConstant, {0.0, 0.3, 0.6, 1.0},
                                     {vec({0, 0}), vec({0, 0}), vec({1, 0.5}), vec({-1, 0.5})},
                                     {vec({0, 0}), vec({1, 0.5}), vec({-1, 0.5}), vec({-1, 0.5})});
  const double mass = 1.0 + 0.5 + 2.0;
  for (int k : {10, 25}) {
    CHECK(l1_distance(u, mollify(u, k)) == Catch::Approx(mass / (2.0 * k)).margin(1e-14));
  }
  // Close jumps shrink the ramp to a third of the gap.
  const auto close = ControlSignal::make(SignalKind::PiecewiseConstant, {0.0, 0.5, 0.53, 1.0},
                                         {vec({0}), vec({0}), vec({1}), vec({0})},
                                         {vec({0}), vec({1}), vec({0}), vec({0})});
  const auto v = mollify(close, 10);
  CHECK(v.is_continuous());
  CHECK(l1_distance(close, v) == Catch::Approx(0.5 * 0.1 + 0.5 * 0.01).margin(1e-14));
}

TEST_CASE("mollify: left-pointwise jump at t = 0 keeps u(0)", "[signals]") {
  const auto u = ControlSignal::step(1.0, 0.0, vec({0}), vec({-2}), Side::Left);
  const auto v = mollify(u, 10);
  CHECK(v.value_at(0.0)[0] == 0.0);
  CHECK(v.value_at(0.1)[0] == -2.0);
  CHECK(l1_distance(u, v) == Catch::Approx(0.1).margin(1e-14));
}

TEST_CASE("l1_distance of linear pieces with sign change", "[signals]") {
  const auto a = ControlSignal::linear({0.0, 1.0}, {vec({-1}), vec({1})});
  const auto b = ControlSignal::constant(1.0, vec({0}));
  CHECK(l1_distance(a, b) == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("radon_integral examples", "[signals]") {
  SampledArc arc;
  for (int i = 0; i <= 1000; ++i) {
    arc.t.push_back(i / 1000.0);
    arc.v.push_back(vec({i / 1000.0}));
  }
  CHECK(radon_integral(arc, VariationMap::constant(0.0, 1.0, vec({3.0}))) == 0.0);

  SampledArc constant_arc{{0.0, 1.0}, {vec({2.5}), vec({2.5})}};
  const auto jump = VariationMap::make({0.2, 0.6, 1.0}, {vec({0}), vec({0}), vec({1.5})}, {vec({0}), vec({1.5}), vec({1.5})});
  CHECK(radon_integral(constant_arc, jump) == Catch::Approx(2.5 * 1.5).margin(1e-15));

  const auto ramp = VariationMap::make({0.0, 1.0}, {vec({0}), vec({1})}, {vec({0}), vec({1})});
  CHECK(std::abs(radon_integral(arc, ramp) - 0.5) <= 1e-6);

  SampledArc short_arc{{0.5, 1.0}, {vec({1}), vec({1})}};
  CHECK_THROWS_AS(radon_integral(short_arc, ramp), InputError);
}

TEST_CASE("variation map endpoint conventions", "[signals]") {
  const auto nu = VariationMap::make({0.5, 0.7, 1.0}, {vec({9}), vec({1}), vec({2})}, {vec({1}), vec({3}), vec({7})});
  CHECK(nu.value_at(0.5)[0] == 1.0);
  CHECK(nu.value_at(1.0)[0] == 2.0);
  CHECK(nu.value_at(0.7)[0] == 3.0);
  CHECK(nu.value_at(0.7, Side::Left)[0] == 1.0);
  REQUIRE(nu.jumps().size() == 1);
  CHECK(nu.jumps()[0].second[0] == 2.0);
}

TEST_CASE("signal JSON documents", "[signals]") {
  const auto s = canonical("s_const");
  const std::string step = R"({"kind":"pwc","breakpoints":[0,0.5,1],"left":[[0],[0],[2]],"right":[[0],[2],[2]],
                               "pointwise_side":["right","right","left"]})";
  const auto u = load_control_file(write_temp("step.json", step), s);
  CHECK(u.value_at(0.5)[0] == 2.0);

  const auto round = parse_control(control_to_json(u));
  CHECK(round.breakpoints() == u.breakpoints());
  for (std::size_t k = 0; k < u.size(); ++k) {
    CHECK(round.left(k) == u.left(k));
    CHECK(round.right(k) == u.right(k));
    CHECK(round.pointwise_side(k) == u.pointwise_side(k));
  }

  const std::string unsorted = R"({"kind":"pwc","breakpoints":[0,0.7,0.5,1],"left":[[0],[0],[0],[0]],
                                   "right":[[0],[0],[0],[0]]})";
  CHECK_THROWS_WITH(load_control_file(write_temp("unsorted.json", unsorted), s),
                    Catch::Matchers::ContainsSubstring("breakpoints not increasing"));

  const std::string outside = R"({"kind":"pwc","breakpoints":[0,0.25,1],"left":[[0],[0],[3]],"right":[[0],[3],[3]]})";
  CHECK_THROWS_WITH(load_control_file(write_temp("outside.json", outside), s),
                    Catch::Matchers::ContainsSubstring("u1 outside U at t=0.25"));

  CHECK_THROWS_AS(load_control_file(write_temp("bad.json", "{\"kind\":"), s), InputError);
  CHECK_THROWS_AS(load_control_file("/nonexistent/x.json", s), InputError);

  const auto a = load_ordinary_file(write_temp("a.json", R"({"values":[[1]]})"), s);
  CHECK(a.value_at(0.3)[0] == 1.0);
  const auto a2 = load_ordinary_file(write_temp("a2.json", R"({"breakpoints":[0,0.5,1],"values":[[1],[-1]]})"), s);
  CHECK(a2.value_at(0.5)[0] == -1.0);
  CHECK(a2.value_at(1.0)[0] == -1.0);
  CHECK_THROWS_AS(load_ordinary_file(write_temp("a3.json", R"({"values":[[2]]})"), s), InputError);
}
