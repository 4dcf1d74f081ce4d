#include "internal/flow_engine.hpp"

#include <algorithm>
#include <cmath>

#include "impulse/simd.hpp"
#include "impulse/tape.hpp"

namespace impulse::detail {

namespace {

// Internally every quantity is stored structure-of-arrays: row r of a block
// holds that component for all lanes, so the lane loops are contiguous.
class FlowRhs {
 public:
  FlowRhs(const SystemSpec& s, FlowBatch& b, const std::vector<double>& z0, const std::vector<double>& w)
      : n_(s.n()),
        m_(s.m()),
        dim_(s.dim()),
        L_(b.lanes),
        cols_(b.cols),
        stride_((b.lanes + simd::kLaneBlock - 1) / simd::kLaneBlock * simd::kLaneBlock),
        tape_(b.cols ? s.tapes().g_jacobian : s.tapes().g_values),
        backend_(simd::active()),
        b_(b),
        z0_(z0),
        w_(w),
        ws_(tape_.num_slots() * stride_, 0.0),
        st_(stride_, kEvalOk),
        jac_(cols_ ? n_ * dim_ * L_ : 0, 0.0) {
    for (std::size_t o = 0; o < m_ * n_; ++o) value_row_.push_back(tape_.output_slot(o) * stride_);
    if (cols_) {
      for (std::size_t o = 0; o < m_ * n_ * dim_; ++o) deriv_row_.push_back(tape_.output_slot(m_ * n_ + o) * stride_);
    }
  }

  // KX = sum_k w_k g~_k(X, z(t)),  KS = J S + G C.
  void operator()(double t, const double* X, const double* S, double* KX, double* KS) {
    const std::size_t L = L_;
    double* ws = ws_.data();
    for (std::size_t v = 0; v < n_; ++v) std::copy(X + v * L, X + (v + 1) * L, ws + v * stride_);
    for (std::size_t a = 0; a < m_; ++a) {
      double* row = ws + (n_ + a) * stride_;
      const double* z0 = z0_.data() + a * L;
      const double* w = w_.data() + a * L;
      for (std::size_t k = 0; k < L; ++k) row[k] = z0[k] + t * w[k];
    }
    for (std::size_t v = 0; v < dim_; ++v) {
      double* row = ws + v * stride_;
      for (std::size_t k = L; k < stride_; ++k) row[k] = row[L - 1];
    }
    tape_.run(backend_, ws, L, stride_, st_.data());
    for (std::size_t k = 0; k < L; ++k) {
      if (st_[k] != kEvalOk && b_.status[k] == kEvalOk) b_.status[k] = st_[k];
    }
    if (L == 1) {
      single_lane(S, KX, KS);
      return;
    }

    for (std::size_t j = 0; j < n_; ++j) {
      double* out = KX + j * L;
      std::fill(out, out + L, 0.0);
      for (std::size_t a = 0; a < m_; ++a) {
        const double* w = w_.data() + a * L;
        const double* g = ws + value_row_[a * n_ + j];
        for (std::size_t k = 0; k < L; ++k) out[k] += w[k] * g[k];
      }
    }
    if (!cols_) return;

    for (std::size_t j = 0; j < n_; ++j) {
      for (std::size_t d = 0; d < dim_; ++d) {
        double* J = jac_.data() + (j * dim_ + d) * L;
        std::fill(J, J + L, 0.0);
        for (std::size_t a = 0; a < m_; ++a) {
          const double* w = w_.data() + a * L;
          const double* dg = ws + deriv_row_[(a * n_ + j) * dim_ + d];
          for (std::size_t k = 0; k < L; ++k) J[k] += w[k] * dg[k];
        }
      }
    }
    for (std::size_t j = 0; j < n_; ++j) {
      for (std::size_t c = 0; c < cols_; ++c) {
        double* out = KS + (j * cols_ + c) * L;
        std::fill(out, out + L, 0.0);
        for (std::size_t d = 0; d < dim_; ++d) {
          const double* J = jac_.data() + (j * dim_ + d) * L;
          const double* Sd = S + (d * cols_ + c) * L;
          for (std::size_t k = 0; k < L; ++k) out[k] += J[k] * Sd[k];
        }
        if (!b_.C.empty()) {
          for (std::size_t a = 0; a < m_; ++a) {
            const double coef = b_.C[a * cols_ + c];
            const double* g = ws + value_row_[a * n_ + j];
            for (std::size_t k = 0; k < L; ++k) out[k] += g[k] * coef;
          }
        }
      }
    }
    for (std::size_t a = 0; a < m_; ++a) {
      for (std::size_t c = 0; c < cols_; ++c) {
        double* out = KS + ((n_ + a) * cols_ + c) * L;
        std::fill(out, out + L, b_.C.empty() ? 0.0 : b_.C[a * cols_ + c]);
      }
    }
  }

 private:
  // Same arithmetic as the lane loops, without their per-loop overhead.
  void single_lane(const double* S, double* KX, double* KS) {
    const double* ws = ws_.data();
    const double* w = w_.data();
    for (std::size_t j = 0; j < n_; ++j) {
      double acc = 0.0;
      for (std::size_t a = 0; a < m_; ++a) acc += w[a] * ws[value_row_[a * n_ + j]];
      KX[j] = acc;
    }
    if (!cols_) return;
    double* J = jac_.data();
    for (std::size_t j = 0; j < n_; ++j) {
      for (std::size_t d = 0; d < dim_; ++d) {
        double acc = 0.0;
        for (std::size_t a = 0; a < m_; ++a) acc += w[a] * ws[deriv_row_[(a * n_ + j) * dim_ + d]];
        J[j * dim_ + d] = acc;
      }
    }
    const bool forced = !b_.C.empty();
    for (std::size_t j = 0; j < n_; ++j) {
      for (std::size_t c = 0; c < cols_; ++c) {
        double acc = 0.0;
        for (std::size_t d = 0; d < dim_; ++d) acc += J[j * dim_ + d] * S[d * cols_ + c];
        if (forced) {
          for (std::size_t a = 0; a < m_; ++a) acc += ws[value_row_[a * n_ + j]] * b_.C[a * cols_ + c];
        }
        KS[j * cols_ + c] = acc;
      }
    }
    for (std::size_t a = 0; a < m_; ++a) {
      for (std::size_t c = 0; c < cols_; ++c) KS[(n_ + a) * cols_ + c] = forced ? b_.C[a * cols_ + c] : 0.0;
    }
  }

  std::size_t n_, m_, dim_, L_, cols_, stride_;
  const Tape& tape_;
  simd::Backend backend_;
  FlowBatch& b_;
  const std::vector<double>& z0_;
  const std::vector<double>& w_;
  std::vector<double> ws_;
  std::vector<std::uint8_t> st_;
  std::vector<double> jac_;
  std::vector<std::size_t> value_row_, deriv_row_;
};

// Lane-major (lanes x width) to structure-of-arrays (width x lanes) and back.
std::vector<double> to_soa(const std::vector<double>& v, std::size_t lanes, std::size_t width) {
  std::vector<double> out(v.size());
  for (std::size_t k = 0; k < lanes; ++k) {
    for (std::size_t r = 0; r < width; ++r) out[r * lanes + k] = v[k * width + r];
  }
  return out;
}

void from_soa(const std::vector<double>& soa, std::vector<double>& v, std::size_t lanes, std::size_t width) {
  for (std::size_t k = 0; k < lanes; ++k) {
    for (std::size_t r = 0; r < width; ++r) v[k * width + r] = soa[r * lanes + k];
  }
}

void axpy(std::vector<double>& out, const std::vector<double>& base, double h, const std::vector<double>& k) {
  const std::size_t size = out.size();
  double* o = out.data();
  const double* b = base.data();
  const double* kk = k.data();
  for (std::size_t i = 0; i < size; ++i) o[i] = b[i] + h * kk[i];
}

}  // namespace

void run_flow(const SystemSpec& s, std::size_t steps, FlowBatch& b) {
  if (b.lanes == 0) return;
  b.status.assign(b.lanes, kEvalOk);
  const std::size_t L = b.lanes, n = s.n(), m = s.m(), per_s = s.dim() * b.cols;
  const std::vector<double> z0 = to_soa(b.z0, L, m), w = to_soa(b.w, L, m);
  std::vector<double> x = to_soa(b.x, L, n), S = to_soa(b.S, L, per_s);
  FlowRhs rhs(s, b, z0, w);
  const double h = 1.0 / static_cast<double>(steps);
  const std::size_t nx = x.size(), ns = S.size();
  std::vector<double> k1x(nx), k2x(nx), k3x(nx), k4x(nx), tx(nx);
  std::vector<double> k1s(ns), k2s(ns), k3s(ns), k4s(ns), ts(ns);

  for (std::size_t i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) * h;
    rhs(t, x.data(), S.data(), k1x.data(), k1s.data());
    axpy(tx, x, 0.5 * h, k1x);
    axpy(ts, S, 0.5 * h, k1s);
    rhs(t + 0.5 * h, tx.data(), ts.data(), k2x.data(), k2s.data());
    axpy(tx, x, 0.5 * h, k2x);
    axpy(ts, S, 0.5 * h, k2s);
    rhs(t + 0.5 * h, tx.data(), ts.data(), k3x.data(), k3s.data());
    axpy(tx, x, h, k3x);
    axpy(ts, S, h, k3s);
    rhs(t + h, tx.data(), ts.data(), k4x.data(), k4s.data());
    for (std::size_t j = 0; j < nx; ++j) x[j] += h / 6.0 * (k1x[j] + 2.0 * k2x[j] + 2.0 * k3x[j] + k4x[j]);
    for (std::size_t j = 0; j < ns; ++j) S[j] += h / 6.0 * (k1s[j] + 2.0 * k2s[j] + 2.0 * k3s[j] + k4s[j]);
  }
  from_soa(x, b.x, L, n);
  from_soa(S, b.S, L, per_s);

  for (std::size_t k = 0; k < L; ++k) {
    if (b.status[k] != kEvalOk) continue;
    bool finite = true;
    for (std::size_t j = 0; j < n; ++j) finite = finite && std::isfinite(b.x[k * n + j]);
    for (std::size_t j = 0; j < per_s; ++j) finite = finite && std::isfinite(b.S[k * per_s + j]);
    if (!finite) b.status[k] = kEvalNonFinite;
  }
}

}  // namespace impulse::detail
