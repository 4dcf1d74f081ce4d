#include "impulse/transform.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <mutex>
#include <string>
#include <unordered_map>

#include "impulse/error.hpp"
#include "impulse/parallel.hpp"
#include "impulse/tape.hpp"
#include "internal/flow_engine.hpp"

namespace impulse {

// Pure memo keyed by the exact bit patterns of the inputs.
struct TransformContext::Memo {
  std::mutex mutex;
  std::unordered_map<std::string, std::vector<double>> table;
  static constexpr std::size_t kMaxEntries = 1u << 18;

  static std::string key(char tag, std::initializer_list<const Vec*> parts) {
    std::string k(1, tag);
    for (const Vec* v : parts) {
      k.append(reinterpret_cast<const char*>(v->data()), static_cast<std::size_t>(v->size()) * sizeof(double));
      k.push_back('|');
    }
    return k;
  }

  bool find(const std::string& k, std::vector<double>& out) {
    std::lock_guard<std::mutex> lock(mutex);
    auto it = table.find(k);
    if (it == table.end()) return false;
    out = it->second;
    return true;
  }

  void store(const std::string& k, const std::vector<double>& v) {
    std::lock_guard<std::mutex> lock(mutex);
    if (table.size() >= kMaxEntries) table.clear();
    table.emplace(k, v);
  }
};

TransformContext::TransformContext(SystemSpec system, TransformOptions options)
    : system_(std::move(system)), options_(options), memo_(std::make_shared<Memo>()) {
  if (options_.steps < 10) throw InputError("flow_steps", "at least 10 RK4 steps per unit flow time are required");
}

TransformContext TransformContext::with_steps(std::size_t steps) const {
  TransformOptions o = options_;
  o.steps = steps;
  return TransformContext(system_, o);
}

namespace {

using detail::FlowBatch;

void check_dims(const SystemSpec& s, const Vec& x, const Vec& z) {
  if (static_cast<std::size_t>(x.size()) != s.n() || static_cast<std::size_t>(z.size()) != s.m()) {
    throw InputError("", "point has the wrong dimensions");
  }
}

template <class Fn>
Vec memoized(const TransformContext& ctx, const std::string& key, Fn compute) {
  if (!ctx.options().memoize) return compute();
  std::vector<double> hit;
  if (ctx.memo()->find(key, hit)) return Eigen::Map<const Vec>(hit.data(), static_cast<Eigen::Index>(hit.size()));
  Vec v = compute();
  ctx.memo()->store(key, std::vector<double>(v.data(), v.data() + v.size()));
  return v;
}

void throw_if_failed(std::uint8_t status, const char* what) {
  if (status != kEvalOk) throw DomainError(std::string(what) + ": " + eval_status_message(status));
}

// One-lane flow with optional sensitivities.
FlowBatch single_flow(const TransformContext& ctx, const Vec& x, const Vec& z0, const Vec& w, std::size_t cols,
                      const std::vector<double>& S0, const std::vector<double>& C) {
  const SystemSpec& s = ctx.system();
  FlowBatch b;
  b.resize(s.n(), s.m(), 1, cols);
  for (std::size_t j = 0; j < s.n(); ++j) b.x[j] = x[static_cast<Eigen::Index>(j)];
  for (std::size_t a = 0; a < s.m(); ++a) {
    b.z0[a] = z0[static_cast<Eigen::Index>(a)];
    b.w[a] = w[static_cast<Eigen::Index>(a)];
  }
  if (cols) b.S = S0;
  b.C = C;
  detail::run_flow(s, ctx.steps(), b);
  return b;
}

Vec head_x(const FlowBatch& b, std::size_t n, std::size_t lane = 0) {
  return Eigen::Map<const Vec>(b.x.data() + lane * n, static_cast<Eigen::Index>(n));
}

// Evaluates f~ for every lane at (x, z, a); x lane-major (L*n), Z and A columns.
std::vector<double> eval_f_lanes(const SystemSpec& s, const std::vector<double>& x, const Mat& Z, const Mat& A,
                                 std::vector<std::uint8_t>& status) {
  const std::size_t n = s.n(), m = s.m(), l = s.l(), L = static_cast<std::size_t>(Z.cols());
  std::vector<double> vars(s.num_vars() * L);
  for (std::size_t k = 0; k < L; ++k) {
    const Eigen::Index c = static_cast<Eigen::Index>(k);
    for (std::size_t j = 0; j < n; ++j) vars[j * L + k] = x[k * n + j];
    for (std::size_t a = 0; a < m; ++a) vars[(n + a) * L + k] = Z(static_cast<Eigen::Index>(a), c);
    for (std::size_t a = 0; a < l; ++a) vars[(n + m + a) * L + k] = A(static_cast<Eigen::Index>(a), c);
  }
  std::vector<double> out(n * L);
  std::vector<std::uint8_t> st(L);
  s.tapes().f_values.eval_batch(L, vars, out, st);
  for (std::size_t k = 0; k < L; ++k) {
    if (st[k] != kEvalOk && status[k] == kEvalOk) status[k] = st[k];
  }
  // Return lane-major.
  std::vector<double> lm(n * L);
  for (std::size_t k = 0; k < L; ++k) {
    for (std::size_t j = 0; j < n; ++j) lm[k * n + j] = out[j * L + k];
  }
  return lm;
}

void merge_status(std::vector<std::uint8_t>& into, const std::vector<std::uint8_t>& from) {
  for (std::size_t k = 0; k < into.size(); ++k) {
    if (into[k] == kEvalOk) into[k] = from[k];
  }
}

// Pushes the tangent vectors (v_x, 0) at (x_k, z0_k) through the flow with
// coefficients w_k and returns the x-block of the transported vectors.
// On return `status` also carries failures of this stage; `zblock` receives
// the largest z-block magnitude seen.
std::vector<double> push_tangent(const TransformContext& ctx, const std::vector<double>& x,
                                 const std::vector<double>& z0, const std::vector<double>& w,
                                 const std::vector<double>& vx, std::vector<std::uint8_t>& status, double& zblock) {
  const SystemSpec& s = ctx.system();
  const std::size_t n = s.n(), m = s.m(), dim = s.dim(), L = status.size();
  FlowBatch b;
  b.resize(n, m, L, 1);
  b.x = x;
  b.z0 = z0;
  b.w = w;
  for (std::size_t k = 0; k < L; ++k) {
    for (std::size_t j = 0; j < n; ++j) b.S[k * dim + j] = vx[k * n + j];
  }
  detail::run_flow(s, ctx.steps(), b);
  merge_status(status, b.status);
  std::vector<double> out(n * L);
  zblock = 0.0;
  for (std::size_t k = 0; k < L; ++k) {
    for (std::size_t j = 0; j < n; ++j) out[k * n + j] = b.S[k * dim + j];
    if (status[k] != kEvalOk) continue;
    for (std::size_t a = 0; a < m; ++a) zblock = std::max(zblock, std::abs(b.S[k * dim + n + a]));
  }
  return out;
}

std::vector<double> lane_major(const Mat& M) {
  const std::size_t r = static_cast<std::size_t>(M.rows()), L = static_cast<std::size_t>(M.cols());
  std::vector<double> out(r * L);
  for (std::size_t k = 0; k < L; ++k) {
    for (std::size_t i = 0; i < r; ++i) out[k * r + i] = M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
  }
  return out;
}

Mat from_lane_major(const std::vector<double>& v, std::size_t rows, std::size_t L) {
  Mat M(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(L));
  for (std::size_t k = 0; k < L; ++k) {
    for (std::size_t i = 0; i < rows; ++i) M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = v[k * rows + i];
  }
  return M;
}

constexpr double kZBlockTolerance = 1e-10;

}  // namespace

AugPoint flow(const TransformContext& ctx, const Vec& x, const Vec& z_start, const Vec& w) {
  check_dims(ctx.system(), x, z_start);
  check_dims(ctx.system(), x, w);
  FlowBatch b = single_flow(ctx, x, z_start, w, 0, {}, {});
  throw_if_failed(b.status[0], "flow");
  return {head_x(b, ctx.system().n()), z_start + w};
}

AugPoint phi(const TransformContext& ctx, const Vec& x, const Vec& z) {
  check_dims(ctx.system(), x, z);
  Vec xi = memoized(ctx, TransformContext::Memo::key('P', {&x, &z}), [&] {
    FlowBatch b = single_flow(ctx, x, z, -z, 0, {}, {});
    throw_if_failed(b.status[0], "phi");
    return head_x(b, ctx.system().n());
  });
  return {xi, z};
}

AugPoint phi_inverse(const TransformContext& ctx, const Vec& xi, const Vec& eta) {
  check_dims(ctx.system(), xi, eta);
  Vec x = memoized(ctx, TransformContext::Memo::key('I', {&xi, &eta}), [&] {
    FlowBatch b = single_flow(ctx, xi, Vec::Zero(eta.size()), eta, 0, {}, {});
    throw_if_failed(b.status[0], "phi inverse");
    return head_x(b, ctx.system().n());
  });
  return {x, eta};
}

namespace {

Mat map_batch(const TransformContext& ctx, const Mat& P, const Mat& Z, bool inverse, std::vector<std::uint8_t>& status) {
  const SystemSpec& s = ctx.system();
  const std::size_t n = s.n(), m = s.m(), L = static_cast<std::size_t>(P.cols());
  if (static_cast<std::size_t>(P.rows()) != n || static_cast<std::size_t>(Z.rows()) != m ||
      static_cast<std::size_t>(Z.cols()) != L) {
    throw InputError("", "batch has inconsistent dimensions");
  }
  status.assign(L, kEvalOk);
  if (L == 0) return Mat(static_cast<Eigen::Index>(n), 0);
  FlowBatch b;
  b.resize(n, m, L, 0);
  b.x = lane_major(P);
  const std::vector<double> z = lane_major(Z);
  if (inverse) {
    b.w = z;
  } else {
    b.z0 = z;
    for (std::size_t i = 0; i < z.size(); ++i) b.w[i] = -z[i];
  }
  detail::run_flow(s, ctx.steps(), b);
  status = b.status;
  return from_lane_major(b.x, n, L);
}

}  // namespace

Mat phi_batch(const TransformContext& ctx, const Mat& X, const Mat& Z, std::vector<std::uint8_t>& status) {
  return map_batch(ctx, X, Z, false, status);
}

Mat phi_inverse_batch(const TransformContext& ctx, const Mat& XI, const Mat& ETA, std::vector<std::uint8_t>& status) {
  return map_batch(ctx, XI, ETA, true, status);
}

std::vector<Mat> dphi_batch(const TransformContext& ctx, const Mat& X, const Mat& Z, std::vector<std::uint8_t>& status) {
  const SystemSpec& s = ctx.system();
  const std::size_t n = s.n(), m = s.m(), dim = s.dim(), L = static_cast<std::size_t>(X.cols());
  if (static_cast<std::size_t>(X.rows()) != n || static_cast<std::size_t>(Z.rows()) != m ||
      static_cast<std::size_t>(Z.cols()) != L) {
    throw InputError("", "batch has inconsistent dimensions");
  }
  status.assign(L, kEvalOk);
  std::vector<Mat> out;
  if (L == 0) return out;
  FlowBatch b;
  b.resize(n, m, L, dim);
  b.x = lane_major(X);
  b.z0 = lane_major(Z);
  for (std::size_t i = 0; i < b.z0.size(); ++i) b.w[i] = -b.z0[i];
  b.C.assign(m * dim, 0.0);
  for (std::size_t a = 0; a < m; ++a) b.C[a * dim + n + a] = -1.0;
  for (std::size_t k = 0; k < L; ++k) {
    for (std::size_t i = 0; i < dim; ++i) b.S[k * dim * dim + i * dim + i] = 1.0;
  }
  detail::run_flow(s, ctx.steps(), b);
  status = b.status;
  out.reserve(L);
  for (std::size_t k = 0; k < L; ++k) {
    Mat J = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        b.S.data() + k * dim * dim, static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    J.bottomRows(static_cast<Eigen::Index>(m)).setZero();
    J.bottomRightCorner(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m)).setIdentity();
    out.push_back(std::move(J));
  }
  return out;
}

namespace {

// Flow sensitivities with S(0) = s0_block and forcing G*C, C = sign * [0 | I].
Mat flow_jacobian(const TransformContext& ctx, const Vec& x, const Vec& z0, const Vec& w, bool start_with_z,
                  double sign, const char* what) {
  const SystemSpec& s = ctx.system();
  const std::size_t n = s.n(), m = s.m(), dim = s.dim();
  std::vector<double> S0(dim * dim, 0.0), C(m * dim, 0.0);
  for (std::size_t i = 0; i < (start_with_z ? dim : n); ++i) S0[i * dim + i] = 1.0;
  for (std::size_t a = 0; a < m; ++a) C[a * dim + n + a] = sign;
  FlowBatch b = single_flow(ctx, x, z0, w, dim, S0, C);
  throw_if_failed(b.status[0], what);
  Mat J(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t c = 0; c < dim; ++c) J(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = b.S[i * dim + c];
  }
  return J;
}

}  // namespace

Mat dphi(const TransformContext& ctx, const Vec& x, const Vec& z) {
  check_dims(ctx.system(), x, z);
  const std::size_t n = ctx.system().n(), dim = ctx.system().dim();
  Vec flat = memoized(ctx, TransformContext::Memo::key('D', {&x, &z}), [&] {
    // The flow coefficient is -z, so the z columns pick up the forcing -g_k.
    Mat J = flow_jacobian(ctx, x, z, -z, true, -1.0, "dphi");
    J.bottomRows(static_cast<Eigen::Index>(dim - n)).setZero();
    J.bottomRightCorner(static_cast<Eigen::Index>(dim - n), static_cast<Eigen::Index>(dim - n)).setIdentity();
    return Vec(Eigen::Map<const Vec>(J.data(), J.size()));
  });
  return Eigen::Map<const Mat>(flat.data(), static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
}

Mat dphi_inverse(const TransformContext& ctx, const Vec& xi, const Vec& eta) {
  check_dims(ctx.system(), xi, eta);
  return flow_jacobian(ctx, xi, Vec::Zero(eta.size()), eta, false, 1.0, "phi inverse Jacobian");
}

namespace {

Mat transformed_F_chunk(const TransformContext& ctx, const Mat& XI, const Mat& ETA, const Mat& A,
                        std::vector<std::uint8_t>& status) {
  const SystemSpec& s = ctx.system();
  const std::size_t n = s.n(), m = s.m(), L = static_cast<std::size_t>(XI.cols());
  if (static_cast<std::size_t>(XI.rows()) != n || static_cast<std::size_t>(ETA.rows()) != m ||
      static_cast<std::size_t>(A.rows()) != s.l() || static_cast<std::size_t>(ETA.cols()) != L ||
      static_cast<std::size_t>(A.cols()) != L) {
    throw InputError("", "transformed_F batch has inconsistent dimensions");
  }
  status.assign(L, kEvalOk);
  if (L == 0) return Mat(static_cast<Eigen::Index>(n), 0);

  // (x, z) = phi^{-1}(xi, eta)
  FlowBatch inv;
  inv.resize(n, m, L, 0);
  inv.x = lane_major(XI);
  inv.w = lane_major(ETA);
  detail::run_flow(s, ctx.steps(), inv);
  merge_status(status, inv.status);

  // dphi(x, z) * (f~(x, z, a), 0), transported back along exp(-z g).
  const std::vector<double> fx = eval_f_lanes(s, inv.x, ETA, A, status);
  std::vector<double> neg_eta = inv.w;
  for (double& v : neg_eta) v = -v;
  double zblock = 0.0;
  const std::vector<double> F = push_tangent(ctx, inv.x, inv.w, neg_eta, fx, status, zblock);
  if (zblock > kZBlockTolerance) {
    throw DomainError("transformed drift has a nonzero z-block; the straightening transform is invalid");
  }
  return from_lane_major(F, n, L);
}

constexpr std::size_t kChunkLanes = 512;

}  // namespace

Mat transformed_F_batch(const TransformContext& ctx, const Mat& XI, const Mat& ETA, const Mat& A,
                        std::vector<std::uint8_t>& status) {
  const std::size_t L = static_cast<std::size_t>(XI.cols());
  if (L <= kChunkLanes) return transformed_F_chunk(ctx, XI, ETA, A, status);
  if (static_cast<std::size_t>(ETA.cols()) != L || static_cast<std::size_t>(A.cols()) != L) {
    throw InputError("", "transformed_F batch has inconsistent dimensions");
  }
  const std::size_t chunks = (L + kChunkLanes - 1) / kChunkLanes;
  Mat out(XI.rows(), static_cast<Eigen::Index>(L));
  status.assign(L, kEvalOk);
  parallel_for(chunks, [&](std::size_t c) {
    const Eigen::Index lo = static_cast<Eigen::Index>(c * kChunkLanes);
    const Eigen::Index w = static_cast<Eigen::Index>(std::min(kChunkLanes, L - c * kChunkLanes));
    std::vector<std::uint8_t> st;
    out.middleCols(lo, w) = transformed_F_chunk(ctx, XI.middleCols(lo, w), ETA.middleCols(lo, w), A.middleCols(lo, w), st);
    std::copy(st.begin(), st.end(), status.begin() + lo);
  });
  return out;
}

Vec transformed_F(const TransformContext& ctx, const Vec& xi, const Vec& eta, const Vec& a) {
  check_dims(ctx.system(), xi, eta);
  if (static_cast<std::size_t>(a.size()) != ctx.system().l()) throw InputError("a", "wrong dimension");
  return memoized(ctx, TransformContext::Memo::key('F', {&xi, &eta, &a}), [&] {
    std::vector<std::uint8_t> status;
    Mat F = transformed_F_batch(ctx, xi, eta, a, status);
    throw_if_failed(status[0], "transformed drift");
    return Vec(F.col(0));
  });
}

FlowboxReport verify_flowbox(const TransformContext& ctx, std::span<const StatePoint> samples, double tol) {
  const SystemSpec& s = ctx.system();
  const std::size_t n = s.n(), m = s.m(), dim = s.dim(), L = samples.size();
  FlowboxReport r;
  r.tol = tol;
  r.residuals.assign(L, std::nan(""));
  if (L == 0) return r;

  FlowBatch b;
  b.resize(n, m, L, dim);
  b.C.assign(m * dim, 0.0);
  for (std::size_t a = 0; a < m; ++a) b.C[a * dim + n + a] = -1.0;
  for (std::size_t k = 0; k < L; ++k) {
    check_dims(s, samples[k].x, samples[k].u);
    for (std::size_t j = 0; j < n; ++j) b.x[k * n + j] = samples[k].x[static_cast<Eigen::Index>(j)];
    for (std::size_t a = 0; a < m; ++a) {
      b.z0[k * m + a] = samples[k].u[static_cast<Eigen::Index>(a)];
      b.w[k * m + a] = -samples[k].u[static_cast<Eigen::Index>(a)];
    }
    for (std::size_t i = 0; i < dim; ++i) b.S[k * dim * dim + i * dim + i] = 1.0;
  }
  detail::run_flow(s, ctx.steps(), b);

  for (std::size_t k = 0; k < L; ++k) {
    if (b.status[k] != kEvalOk) {
      ++r.domain_errors;
      continue;
    }
    Mat J = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        b.S.data() + k * dim * dim, static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    J.bottomRows(static_cast<Eigen::Index>(m)).setZero();
    J.bottomRightCorner(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m)).setIdentity();
    double worst = 0.0;
    std::size_t worst_alpha = 0;
    try {
      for (std::size_t a = 0; a < m; ++a) {
        Vec res = J * eval_aug_g(s, a, samples[k].x, samples[k].u);
        res[static_cast<Eigen::Index>(n + a)] -= 1.0;
        const double v = res.lpNorm<Eigen::Infinity>();
        if (v > worst) {
          worst = v;
          worst_alpha = a;
        }
      }
    } catch (const DomainError&) {
      ++r.domain_errors;
      continue;
    }
    r.residuals[k] = worst;
    if (worst > r.max_residual) {
      r.max_residual = worst;
      r.argmax_sample = k;
      r.argmax_alpha = worst_alpha;
    }
  }
  r.pass = r.max_residual <= tol && r.domain_errors == 0;
  return r;
}

Mat transport_batch(const TransformContext& ctx, const Vec& x, const Vec& u1, const Mat& U2, const Vec& a,
                    std::vector<std::uint8_t>& status, std::vector<bool>& extended) {
  const SystemSpec& s = ctx.system();
  const std::size_t n = s.n(), m = s.m(), L = static_cast<std::size_t>(U2.cols());
  check_dims(s, x, u1);
  if (static_cast<std::size_t>(U2.rows()) != m || static_cast<std::size_t>(a.size()) != s.l()) {
    throw InputError("", "transport arguments have the wrong dimensions");
  }
  status.assign(L, kEvalOk);
  extended.assign(L, false);
  if (L == 0) return Mat(static_cast<Eigen::Index>(n), 0);

  FlowBatch out;
  out.resize(n, m, L, 0);
  for (std::size_t k = 0; k < L; ++k) {
    const Vec u2 = U2.col(static_cast<Eigen::Index>(k));
    extended[k] = !(s.in_U(u1) && s.in_U(u2));
    for (std::size_t j = 0; j < n; ++j) out.x[k * n + j] = x[static_cast<Eigen::Index>(j)];
    for (std::size_t q = 0; q < m; ++q) {
      out.z0[k * m + q] = u1[static_cast<Eigen::Index>(q)];
      out.w[k * m + q] = u2[static_cast<Eigen::Index>(q)] - u1[static_cast<Eigen::Index>(q)];
    }
  }
  detail::run_flow(s, ctx.steps(), out);
  merge_status(status, out.status);

  Mat A = a.replicate(1, static_cast<Eigen::Index>(L));
  const std::vector<double> fy = eval_f_lanes(s, out.x, U2, A, status);
  std::vector<double> z_back = lane_major(U2), w_back(out.w.size());
  for (std::size_t i = 0; i < w_back.size(); ++i) w_back[i] = -out.w[i];
  double zblock = 0.0;
  const std::vector<double> T = push_tangent(ctx, out.x, z_back, w_back, fy, status, zblock);
  return from_lane_major(T, n, L);
}

TransportResult transport(const TransformContext& ctx, const Vec& x, const Vec& u1, const Vec& u2, const Vec& a) {
  std::vector<std::uint8_t> status;
  std::vector<bool> extended;
  Mat U2 = u2;
  Mat T = transport_batch(ctx, x, u1, U2, a, status, extended);
  if (status[0] != kEvalOk) throw TransportUndefined(std::string("transport undefined: ") + eval_status_message(status[0]));
  return {T.col(0), extended[0]};
}

}  // namespace impulse
