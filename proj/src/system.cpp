#include "impulse/system.hpp"

#include <cmath>
#include <string>

#include "impulse/error.hpp"

namespace impulse {

struct SystemSpec::Data {
  SystemDefinition def;
  Vec x0, u0;
  VarTable names;
  std::vector<Expr> f;
  std::vector<std::vector<Expr>> g;
  Expr gamma;
  AugField f_field;
  std::vector<AugField> g_fields;
  std::vector<AugField> gf;
  std::vector<AugField> ggf;  // j*m + k
  SystemTapes tapes;
};

AugField make_bracket(const AugField& A, const AugField& B, std::size_t dim) {
  AugField r;
  r.kind = FieldKind::Bracket;
  r.uses_ordinary = A.uses_ordinary || B.uses_ordinary;
  r.label = "[" + A.label + "," + B.label + "]";
  r.components.resize(dim);
  for (std::size_t c = 0; c < dim; ++c) {
    // Both sums are formed separately so [B,A] is the exact negation of [A,B].
    Expr along_a = Expr::constant(0.0);
    Expr along_b = Expr::constant(0.0);
    for (std::size_t d = 0; d < dim; ++d) {
      along_a = along_a + diff1(B.components[c], d) * A.components[d];
      along_b = along_b + diff1(A.components[c], d) * B.components[d];
    }
    r.components[c] = along_a - along_b;
  }
  return r;
}

namespace {

void require(bool ok, const std::string& path, const std::string& message) {
  if (!ok) throw InputError(path, message);
}

Expr parse_at(const std::string& source, const VarTable& names, const std::string& path) {
  try {
    return parse(source, names);
  } catch (const ParseError& e) {
    throw InputError(path, e.what());
  }
}

bool references_range(const Expr& e, std::size_t first, std::size_t last) {
  std::vector<bool> used;
  collect_variables(e, used);
  for (std::size_t v = first; v < last && v < used.size(); ++v) {
    if (used[v]) return true;
  }
  return false;
}

std::vector<std::string> variable_names(std::size_t n, std::size_t m, std::size_t l) {
  std::vector<std::string> out;
  for (std::size_t i = 1; i <= n; ++i) out.push_back("x" + std::to_string(i));
  for (std::size_t i = 1; i <= m; ++i) out.push_back("u" + std::to_string(i));
  for (std::size_t i = 1; i <= l; ++i) out.push_back("a" + std::to_string(i));
  return out;
}

void check_box(const std::vector<Interval>& box, std::size_t expected, const std::string& name) {
  require(box.size() == expected, "/" + name, "expected " + std::to_string(expected) + " intervals");
  for (std::size_t i = 0; i < box.size(); ++i) {
    const std::string path = "/" + name + "/" + std::to_string(i);
    require(std::isfinite(box[i].lo) && std::isfinite(box[i].hi), path, "bounds must be finite");
    require(box[i].lo <= box[i].hi, path, "lower bound exceeds upper bound");
  }
}

void check_finite_vector(const std::vector<double>& v, std::size_t expected, const std::string& name) {
  require(v.size() == expected, "/" + name, "expected " + std::to_string(expected) + " entries");
  for (std::size_t i = 0; i < v.size(); ++i) {
    require(std::isfinite(v[i]), "/" + name + "/" + std::to_string(i), "value must be finite");
  }
}

Vec to_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }

}  // namespace

SystemSpec SystemSpec::build(const SystemDefinition& def) {
  require(def.n > 0, "/n", "must be a positive integer");
  require(def.m > 0, "/m", "must be a positive integer");
  require(def.l > 0, "/l", "must be a positive integer");
  require(std::isfinite(def.T) && def.T > 0.0, "/T", "horizon must be positive and finite");
  check_finite_vector(def.x0, def.n, "x0");
  check_finite_vector(def.u0, def.m, "u0");
  check_box(def.U, def.m, "U");
  check_box(def.A, def.l, "A");
  for (std::size_t i = 0; i < def.m; ++i) {
    require(def.U[i].contains(def.u0[i]), "/u0", "u0 outside U");
  }
  require(def.f.size() == def.n, "/f", "expected " + std::to_string(def.n) + " expressions");
  require(def.g.size() == def.m, "/g", "expected " + std::to_string(def.m) + " rows");

  const std::size_t n = def.n, m = def.m, l = def.l, dim = n + m, nv = n + m + l;
  auto d = std::make_shared<Data>();
  d->def = def;
  d->x0 = to_vec(def.x0);
  d->u0 = to_vec(def.u0);
  d->names = VarTable(variable_names(n, m, l));

  for (std::size_t j = 0; j < n; ++j) d->f.push_back(parse_at(def.f[j], d->names, "/f/" + std::to_string(j)));
  d->g.resize(m);
  for (std::size_t a = 0; a < m; ++a) {
    const std::string row = "/g/" + std::to_string(a);
    require(def.g[a].size() == n, row, "expected " + std::to_string(n) + " expressions");
    for (std::size_t j = 0; j < n; ++j) {
      const std::string path = row + "/" + std::to_string(j);
      Expr e = parse_at(def.g[a][j], d->names, path);
      require(!references_range(e, dim, nv), path, "g references ordinary control");
      d->g[a].push_back(e);
    }
  }
  d->gamma = parse_at(def.gamma, d->names, "/gamma");
  require(!references_range(d->gamma, dim, nv), "/gamma", "gamma references ordinary control");

  d->f_field.kind = FieldKind::Drift;
  d->f_field.uses_ordinary = true;
  d->f_field.label = "f";
  d->f_field.components = d->f;
  d->f_field.components.resize(dim, Expr::constant(0.0));
  for (std::size_t a = 0; a < m; ++a) {
    AugField g;
    g.kind = FieldKind::Impulse;
    g.alpha = a;
    g.label = "g" + std::to_string(a + 1);
    g.components = d->g[a];
    for (std::size_t b = 0; b < m; ++b) g.components.push_back(Expr::constant(a == b ? 1.0 : 0.0));
    d->g_fields.push_back(std::move(g));
  }
  for (std::size_t i = 0; i < m; ++i) d->gf.push_back(make_bracket(d->g_fields[i], d->f_field, dim));
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t k = 0; k < m; ++k) d->ggf.push_back(make_bracket(d->g_fields[j], d->gf[k], dim));
  }

  std::vector<Expr> out;
  for (std::size_t a = 0; a < m; ++a) out.insert(out.end(), d->g[a].begin(), d->g[a].end());
  d->tapes.g_values = Tape(out, nv);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t c = 0; c < dim; ++c) out.push_back(diff1(d->g[a][j], c));
    }
  }
  d->tapes.g_jacobian = Tape(out, nv);

  out = d->f;
  d->tapes.f_values = Tape(out, nv);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t c = 0; c < dim; ++c) out.push_back(diff1(d->f[j], c));
  }
  d->tapes.f_jacobian = Tape(out, nv);

  out = {d->gamma};
  for (std::size_t c = 0; c < dim; ++c) out.push_back(diff1(d->gamma, c));
  d->tapes.gamma_gradient = Tape(out, nv);

  out.clear();
  for (const auto& b : d->gf) out.insert(out.end(), b.components.begin(), b.components.begin() + n);
  d->tapes.bracket_gf = Tape(out, nv);
  out.clear();
  for (const auto& b : d->ggf) out.insert(out.end(), b.components.begin(), b.components.begin() + n);
  d->tapes.bracket_ggf = Tape(out, nv);

  return SystemSpec(std::move(d));
}

std::size_t SystemSpec::n() const noexcept { return d_->def.n; }
std::size_t SystemSpec::m() const noexcept { return d_->def.m; }
std::size_t SystemSpec::l() const noexcept { return d_->def.l; }
double SystemSpec::T() const noexcept { return d_->def.T; }
const Vec& SystemSpec::x0() const noexcept { return d_->x0; }
const Vec& SystemSpec::u0() const noexcept { return d_->u0; }
const std::vector<Interval>& SystemSpec::U() const noexcept { return d_->def.U; }
const std::vector<Interval>& SystemSpec::A() const noexcept { return d_->def.A; }
const VarTable& SystemSpec::names() const noexcept { return d_->names; }
const SystemDefinition& SystemSpec::definition() const noexcept { return d_->def; }
const std::vector<Expr>& SystemSpec::f_tilde() const noexcept { return d_->f; }
const std::vector<std::vector<Expr>>& SystemSpec::g_tilde() const noexcept { return d_->g; }
const Expr& SystemSpec::gamma() const noexcept { return d_->gamma; }
const AugField& SystemSpec::f_field() const noexcept { return d_->f_field; }
const SystemTapes& SystemSpec::tapes() const noexcept { return d_->tapes; }

const AugField& SystemSpec::g_field(std::size_t alpha) const {
  if (alpha >= m()) throw InputError("alpha", "impulse field index out of range");
  return d_->g_fields[alpha];
}

const AugField& SystemSpec::bracket_gf(std::size_t i) const {
  if (i >= m()) throw InputError("i", "impulse field index out of range");
  return d_->gf[i];
}

const AugField& SystemSpec::bracket_ggf(std::size_t j, std::size_t k) const {
  if (j >= m() || k >= m()) throw InputError("j,k", "impulse field index out of range");
  return d_->ggf[j * m() + k];
}

bool SystemSpec::in_U(const Vec& u, double slack) const {
  for (std::size_t i = 0; i < m(); ++i) {
    if (!d_->def.U[i].contains(u[static_cast<Eigen::Index>(i)], slack)) return false;
  }
  return true;
}

bool SystemSpec::in_A(const Vec& a, double slack) const {
  for (std::size_t i = 0; i < l(); ++i) {
    if (!d_->def.A[i].contains(a[static_cast<Eigen::Index>(i)], slack)) return false;
  }
  return true;
}

std::vector<double> SystemSpec::pack(const Vec& x, const Vec& u, const Vec& a) const {
  if (static_cast<std::size_t>(x.size()) != n() || static_cast<std::size_t>(u.size()) != m() ||
      (a.size() != 0 && static_cast<std::size_t>(a.size()) != l())) {
    throw InputError("", "point has the wrong dimensions");
  }
  std::vector<double> v(num_vars(), 0.0);
  for (std::size_t i = 0; i < n(); ++i) v[i] = x[static_cast<Eigen::Index>(i)];
  for (std::size_t i = 0; i < m(); ++i) v[n() + i] = u[static_cast<Eigen::Index>(i)];
  for (Eigen::Index i = 0; i < a.size(); ++i) v[dim() + static_cast<std::size_t>(i)] = a[i];
  return v;
}

Vec eval_aug_f(const SystemSpec& s, const Vec& x, const Vec& u, const Vec& a) {
  if (static_cast<std::size_t>(a.size()) != s.l()) throw InputError("a", "wrong dimension");
  const auto vars = s.pack(x, u, a);
  Vec out = Vec::Zero(static_cast<Eigen::Index>(s.dim()));
  s.tapes().f_values.eval(vars, std::span<double>(out.data(), s.n()));
  return out;
}

Vec eval_aug_g(const SystemSpec& s, std::size_t alpha, const Vec& x, const Vec& u) {
  if (alpha >= s.m()) throw InputError("alpha", "impulse field index out of range");
  const auto vars = s.pack(x, u);
  std::vector<double> all(s.m() * s.n());
  s.tapes().g_values.eval(vars, all);
  Vec out = Vec::Zero(static_cast<Eigen::Index>(s.dim()));
  for (std::size_t j = 0; j < s.n(); ++j) out[static_cast<Eigen::Index>(j)] = all[alpha * s.n() + j];
  out[static_cast<Eigen::Index>(s.n() + alpha)] = 1.0;
  return out;
}

Mat jacobian_aug_f(const SystemSpec& s, const Vec& x, const Vec& u, const Vec& a) {
  const std::size_t n = s.n(), dim = s.dim();
  const auto vars = s.pack(x, u, a);
  std::vector<double> out(n + n * dim);
  s.tapes().f_jacobian.eval(vars, out);
  Mat J = Mat::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t c = 0; c < dim; ++c) J(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) = out[n + j * dim + c];
  }
  return J;
}

Mat jacobian_aug_g(const SystemSpec& s, std::size_t alpha, const Vec& x, const Vec& u) {
  if (alpha >= s.m()) throw InputError("alpha", "impulse field index out of range");
  const std::size_t n = s.n(), m = s.m(), dim = s.dim();
  const auto vars = s.pack(x, u);
  std::vector<double> out(m * n + m * n * dim);
  s.tapes().g_jacobian.eval(vars, out);
  Mat J = Mat::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t c = 0; c < dim; ++c) {
      J(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) = out[m * n + (alpha * n + j) * dim + c];
    }
  }
  return J;
}

double eval_gamma(const SystemSpec& s, const Vec& x, const Vec& u) {
  const auto vars = s.pack(x, u);
  return evaluate(s.gamma(), vars);
}

Vec grad_gamma(const SystemSpec& s, const Vec& x, const Vec& u) {
  const auto vars = s.pack(x, u);
  std::vector<double> out(1 + s.dim());
  s.tapes().gamma_gradient.eval(vars, out);
  return Eigen::Map<const Vec>(out.data() + 1, static_cast<Eigen::Index>(s.dim()));
}

Vec lie_bracket(const SystemSpec& s, const AugField& A, const AugField& B, const Vec& x, const Vec& u,
                const std::optional<Vec>& a) {
  const bool needs_a = A.uses_ordinary || B.uses_ordinary;
  if (needs_a && !a) throw InputError("a", "brackets involving f need the ordinary control");
  if (!needs_a && a) throw InputError("a", "ordinary control given but neither field involves f");
  if (A.components.size() != s.dim() || B.components.size() != s.dim()) {
    throw InputError("", "field dimension does not match the system");
  }
  const auto vars = s.pack(x, u, a ? *a : Vec());
  AugField br = make_bracket(A, B, s.dim());
  Vec out(static_cast<Eigen::Index>(s.dim()));
  for (std::size_t c = 0; c < s.dim(); ++c) out[static_cast<Eigen::Index>(c)] = evaluate(br.components[c], vars);
  return out;
}

BracketReport check_commutativity(const SystemSpec& s, std::span<const StatePoint> samples, double tol) {
  if (samples.empty()) throw InputError("samples", "at least one sample is required");
  const std::size_t m = s.m(), dim = s.dim(), nv = s.num_vars(), lanes = samples.size();
  BracketReport report;
  report.samples = lanes;
  report.tol = tol;

  std::vector<Expr> outputs;
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a + 1; b < m; ++b) {
      BracketPairResult pr;
      pr.alpha = a;
      pr.beta = b;
      report.pairs.push_back(pr);
      AugField br = make_bracket(s.g_field(a), s.g_field(b), dim);
      outputs.insert(outputs.end(), br.components.begin(), br.components.end());
    }
  }
  if (report.pairs.empty()) return report;

  std::vector<double> vars(nv * lanes, 0.0);
  for (std::size_t k = 0; k < lanes; ++k) {
    const auto v = s.pack(samples[k].x, samples[k].u);
    for (std::size_t i = 0; i < nv; ++i) vars[i * lanes + k] = v[i];
  }
  Tape tape(outputs, nv);
  std::vector<double> out(outputs.size() * lanes);
  std::vector<std::uint8_t> status(lanes);
  tape.eval_batch(lanes, vars, out, status);

  for (std::size_t k = 0; k < lanes; ++k) {
    if (status[k] != kEvalOk) ++report.domain_errors;
  }
  for (std::size_t p = 0; p < report.pairs.size(); ++p) {
    auto& pr = report.pairs[p];
    pr.values.resize(lanes);
    pr.failures.resize(lanes);
    for (std::size_t k = 0; k < lanes; ++k) {
      if (status[k] != kEvalOk) {
        pr.failures[k] = eval_status_message(status[k]);
        continue;
      }
      Vec v(static_cast<Eigen::Index>(dim));
      for (std::size_t c = 0; c < dim; ++c) v[static_cast<Eigen::Index>(c)] = out[(p * dim + c) * lanes + k];
      const double norm = v.lpNorm<Eigen::Infinity>();
      if (norm > pr.max_norm) {
        pr.max_norm = norm;
        pr.argmax = k;
      }
      pr.values[k] = std::move(v);
    }
    pr.pass = pr.max_norm <= tol;
    report.pass = report.pass && pr.pass;
  }
  return report;
}

double halton(std::size_t index, unsigned base) {
  double f = 1.0, r = 0.0;
  while (index > 0) {
    f /= base;
    r += f * static_cast<double>(index % base);
    index /= base;
  }
  return r;
}

namespace {

std::vector<unsigned> first_primes(std::size_t count) {
  std::vector<unsigned> primes;
  for (unsigned c = 2; primes.size() < count; ++c) {
    bool prime = true;
    for (unsigned p : primes) {
      if (p * p > c) break;
      if (c % p == 0) {
        prime = false;
        break;
      }
    }
    if (prime) primes.push_back(c);
  }
  return primes;
}

}  // namespace

std::vector<StatePoint> sample_state_box(const SystemSpec& s, std::size_t count, double radius, std::size_t skip) {
  const std::size_t n = s.n(), m = s.m();
  const auto primes = first_primes(n + m);
  std::vector<StatePoint> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    StatePoint& p = out[k];
    p.x.resize(static_cast<Eigen::Index>(n));
    p.u.resize(static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < n; ++i) {
      const double h = halton(k + skip, primes[i]);
      p.x[static_cast<Eigen::Index>(i)] = s.x0()[static_cast<Eigen::Index>(i)] + radius * (2.0 * h - 1.0);
    }
    for (std::size_t i = 0; i < m; ++i) {
      const double h = halton(k + skip, primes[n + i]);
      const Interval& I = s.U()[i];
      p.u[static_cast<Eigen::Index>(i)] = I.lo + (I.hi - I.lo) * h;
    }
  }
  return out;
}

}  // namespace impulse
