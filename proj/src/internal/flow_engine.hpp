#pragma once

// Lane-parallel RK4 integration of the impulse flow
//
//   dy/dt = sum_k w_k g_k(y),   y = (x, z),   t in [0, 1],
//
// optionally carrying a sensitivity matrix S (dim x cols per lane) with
//
//   dS/dt = (sum_k w_k Dg_k(y)) S + G(y) C,   G = [g_1 .. g_m].
//
// The z-block moves linearly, z(t) = z0 + t w, and is evaluated in closed form.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "impulse/system.hpp"

namespace impulse::detail {

struct FlowBatch {
  std::size_t lanes = 0;
  std::size_t cols = 0;              // sensitivity columns, 0 for a plain flow
  std::vector<double> x;             // lanes * n, overwritten with x(1)
  std::vector<double> z0;            // lanes * m
  std::vector<double> w;             // lanes * m
  std::vector<double> S;             // lanes * dim * cols, row-major per lane, overwritten with S(1)
  std::vector<double> C;             // m * cols, shared by all lanes; empty means zero
  std::vector<std::uint8_t> status;  // lanes, kEvalOk on success

  void resize(std::size_t n, std::size_t m, std::size_t lanes_, std::size_t cols_) {
    lanes = lanes_;
    cols = cols_;
    x.assign(lanes * n, 0.0);
    z0.assign(lanes * m, 0.0);
    w.assign(lanes * m, 0.0);
    S.assign(lanes * (n + m) * cols, 0.0);
    status.assign(lanes, 0);
  }
};

void run_flow(const SystemSpec& s, std::size_t steps, FlowBatch& b);

}  // namespace impulse::detail
