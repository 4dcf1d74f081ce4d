#include <catch_amalgamated.hpp>

#include <bit>
#include <cmath>
#include <cstring>

#include "impulse/error.hpp"
#include "impulse/simd.hpp"
#include "impulse/tape.hpp"
#include "random_expr.hpp"

using namespace impulse;

namespace {

bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

}  // namespace

TEST_CASE("tape matches tree evaluation bit for bit") {
  testing_support::RandomExpr gen(3, 5);
  std::vector<Expr> outs;
  for (int i = 0; i < 40; ++i) outs.push_back(gen.make(4));
  Tape tape(outs, 3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p = gen.point();
    std::vector<double> out(outs.size());
    tape.eval(p, out);
    for (std::size_t o = 0; o < outs.size(); ++o) CHECK(same_bits(out[o], evaluate(outs[o], p)));
  }
}

TEST_CASE("shared sub-expressions are compiled once") {
  const VarTable names({"x1"});
  Expr s = parse("sin(x1)", names);
  Expr e = s * s + s;
  Tape tape(std::vector<Expr>{e}, 1);
  CHECK(tape.size() == 3);
}

TEST_CASE("scalar and AVX2 kernels agree") {
  if (!simd::available(simd::Backend::Avx2)) {
    SUCCEED("AVX2 not available on this CPU");
    return;
  }
  testing_support::RandomExpr gen(3, 11);
  std::vector<Expr> outs;
  for (int i = 0; i < 60; ++i) outs.push_back(gen.make(5));
  Tape tape(outs, 3);
  for (std::size_t lanes : {1u, 3u, 4u, 7u, 64u, 257u}) {
    std::vector<double> vars(3 * lanes);
    for (std::size_t k = 0; k < lanes; ++k) {
      auto p = gen.point();
      for (std::size_t v = 0; v < 3; ++v) vars[v * lanes + k] = p[v];
    }
    std::vector<double> a(outs.size() * lanes), b(outs.size() * lanes);
    std::vector<std::uint8_t> sa(lanes), sb(lanes);
    CHECK(tape.eval_batch(simd::Backend::Scalar, lanes, vars, a, sa));
    CHECK(tape.eval_batch(simd::Backend::Avx2, lanes, vars, b, sb));
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(same_bits(a[i], b[i]));
  }
}

TEST_CASE("domain failures are flagged per lane on both kernels") {
  const VarTable names({"x1", "x2"});
  std::vector<Expr> outs = {parse("log(x1)", names), parse("sqrt(x2)", names), parse("1/(x1-x2)", names),
                            parse("exp(x1*400)", names), parse("x1+x2", names)};
  Tape tape(outs, 2);
  // lane: 0 ok, 1 log domain, 2 sqrt domain, 3 division by zero, 4 overflow
  const std::vector<double> x1 = {1.0, -1.0, 2.0, 3.0, 2.0};
  const std::vector<double> x2 = {4.0, 1.0, -1.0, 3.0, 1.0};
  std::vector<double> vars(x1);
  vars.insert(vars.end(), x2.begin(), x2.end());
  const std::uint8_t expected[] = {kEvalOk, kEvalLogDomain, kEvalSqrtDomain, kEvalDivByZero, kEvalNonFinite};
  for (auto backend : {simd::Backend::Scalar, simd::Backend::Avx2}) {
    if (!simd::available(backend)) continue;
    std::vector<double> out(outs.size() * 5);
    std::vector<std::uint8_t> status(5);
    CHECK_FALSE(tape.eval_batch(backend, 5, vars, out, status));
    for (std::size_t k = 0; k < 5; ++k) {
      INFO(simd::name(backend) << " lane " << k);
      CHECK(status[k] == expected[k]);
    }
    CHECK(out[4 * 5 + 0] == 5.0);
  }
  std::vector<double> one(outs.size());
  CHECK_THROWS_AS(tape.eval(std::vector<double>{-1.0, 1.0}, one), DomainError);
}

TEST_CASE("IMPULSE_SIMD override and forcing") {
  const auto before = simd::active();
  simd::force(simd::Backend::Scalar);
  CHECK(simd::active() == simd::Backend::Scalar);
  simd::force(before);
  CHECK(simd::active() == before);
}
