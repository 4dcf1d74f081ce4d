#include "impulse/expr.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <unordered_map>
#include <unordered_set>

#include "impulse/error.hpp"

namespace impulse {

VarTable::VarTable(std::vector<std::string> names) : names_(std::move(names)) {}

std::optional<std::size_t> VarTable::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

bool is_function(Op op) noexcept {
  switch (op) {
    case Op::Sin:
    case Op::Cos:
    case Op::Exp:
    case Op::Log:
    case Op::Sqrt:
    case Op::Tanh:
      return true;
    default:
      return false;
  }
}

bool is_binary(Op op) noexcept {
  switch (op) {
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
    case Op::Pow:
      return true;
    default:
      return false;
  }
}

const char* function_name(Op op) noexcept {
  switch (op) {
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sqrt: return "sqrt";
    case Op::Tanh: return "tanh";
    default: return "";
  }
}

Expr::Expr() = default;

Expr Expr::constant(double value) {
  auto n = std::make_shared<ExprNode>();
  n->op = Op::Const;
  n->value = value;
  return Expr(std::move(n));
}

Expr Expr::variable(std::size_t index) {
  auto n = std::make_shared<ExprNode>();
  n->op = Op::Var;
  n->var = index;
  return Expr(std::move(n));
}

Expr Expr::raw_unary(Op op, Expr arg) {
  auto n = std::make_shared<ExprNode>();
  n->op = op;
  n->lhs = std::move(arg);
  return Expr(std::move(n));
}

Expr Expr::raw_binary(Op op, Expr lhs, Expr rhs) {
  auto n = std::make_shared<ExprNode>();
  n->op = op;
  n->lhs = std::move(lhs);
  n->rhs = std::move(rhs);
  return Expr(std::move(n));
}

// A default-constructed handle has no node and reads as the constant 0.
Op Expr::op() const noexcept { return node_ ? node_->op : Op::Const; }
double Expr::value() const noexcept { return node_ ? node_->value : 0.0; }
std::size_t Expr::var() const noexcept { return node_ ? node_->var : 0; }
const Expr& Expr::lhs() const noexcept { return node_ ? node_->lhs : *this; }
const Expr& Expr::rhs() const noexcept { return node_ ? node_->rhs : *this; }

// ---------------------------------------------------------------------------
// Evaluation

namespace {

double apply_function(Op op, double a) {
  switch (op) {
    case Op::Sin: return std::sin(a);
    case Op::Cos: return std::cos(a);
    case Op::Exp: return std::exp(a);
    case Op::Log:
      if (!(a > 0.0)) throw DomainError("log of nonpositive argument");
      return std::log(a);
    case Op::Sqrt:
      if (a < 0.0) throw DomainError("sqrt of negative argument");
      return std::sqrt(a);
    case Op::Tanh: return std::tanh(a);
    default: return a;
  }
}

double apply_binary(Op op, double a, double b) {
  switch (op) {
    case Op::Add: return a + b;
    case Op::Sub: return a - b;
    case Op::Mul: return a * b;
    case Op::Div:
      if (b == 0.0) throw DomainError("division by zero");
      return a / b;
    case Op::Pow: return std::pow(a, b);
    default: return 0.0;
  }
}

double finite_or_throw(double r, Op op) {
  if (!std::isfinite(r)) {
    throw DomainError(std::string("non-finite result in ") +
                      (is_function(op) ? function_name(op) : "arithmetic"));
  }
  return r;
}

double eval_rec(const Expr& e, std::span<const double> values) {
  switch (e.op()) {
    case Op::Const: return e.value();
    case Op::Var:
      if (e.var() >= values.size()) throw InputError("", "variable index out of range");
      return values[e.var()];
    case Op::Neg: return -eval_rec(e.lhs(), values);
    default: break;
  }
  if (is_function(e.op())) {
    return finite_or_throw(apply_function(e.op(), eval_rec(e.lhs(), values)), e.op());
  }
  const double a = eval_rec(e.lhs(), values);
  const double b = eval_rec(e.rhs(), values);
  return finite_or_throw(apply_binary(e.op(), a, b), e.op());
}

}  // namespace

double evaluate(const Expr& e, std::span<const double> values) { return eval_rec(e, values); }

double evaluate(const Expr& e, const VarTable& names, const std::map<std::string, double>& env) {
  std::vector<bool> used;
  collect_variables(e, used);
  std::vector<double> values(names.size(), 0.0);
  for (std::size_t i = 0; i < used.size(); ++i) {
    if (!used[i]) continue;
    auto it = env.find(names.name(i));
    if (it == env.end()) throw InputError(names.name(i), "missing binding");
    values[i] = it->second;
  }
  return eval_rec(e, values);
}

// ---------------------------------------------------------------------------
// Folding constructors

namespace {

std::optional<Expr> fold_if_finite(double v) {
  if (std::isfinite(v)) return Expr::constant(v);
  return std::nullopt;
}

}  // namespace

Expr operator-(const Expr& a) {
  if (a.is_constant()) return Expr::constant(-a.value());
  if (a.op() == Op::Neg) return a.lhs();
  return Expr::raw_unary(Op::Neg, a);
}

Expr operator+(const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant()) {
    if (auto f = fold_if_finite(a.value() + b.value())) return *f;
  }
  if (a.is_constant(0.0)) return b;
  if (b.is_constant(0.0)) return a;
  return Expr::raw_binary(Op::Add, a, b);
}

Expr operator-(const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant()) {
    if (auto f = fold_if_finite(a.value() - b.value())) return *f;
  }
  if (b.is_constant(0.0)) return a;
  if (a.is_constant(0.0)) return -b;
  if (a.id() == b.id()) return Expr::constant(0.0);
  return Expr::raw_binary(Op::Sub, a, b);
}

Expr operator*(const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant()) {
    if (auto f = fold_if_finite(a.value() * b.value())) return *f;
  }
  if (a.is_constant(0.0) || b.is_constant(0.0)) return Expr::constant(0.0);
  if (a.is_constant(1.0)) return b;
  if (b.is_constant(1.0)) return a;
  if (a.is_constant(-1.0)) return -b;
  if (b.is_constant(-1.0)) return -a;
  return Expr::raw_binary(Op::Mul, a, b);
}

Expr operator/(const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant() && b.value() != 0.0) {
    if (auto f = fold_if_finite(a.value() / b.value())) return *f;
  }
  if (a.is_constant(0.0)) return Expr::constant(0.0);
  if (b.is_constant(1.0)) return a;
  return Expr::raw_binary(Op::Div, a, b);
}

Expr pow(const Expr& base, const Expr& exponent) {
  if (base.is_constant() && exponent.is_constant()) {
    if (auto f = fold_if_finite(std::pow(base.value(), exponent.value()))) return *f;
  }
  if (exponent.is_constant(1.0)) return base;
  if (exponent.is_constant(0.0)) return Expr::constant(1.0);
  return Expr::raw_binary(Op::Pow, base, exponent);
}

Expr apply(Op function, const Expr& arg) {
  if (arg.is_constant()) {
    const double a = arg.value();
    const bool domain_ok = (function != Op::Log || a > 0.0) && (function != Op::Sqrt || a >= 0.0);
    if (domain_ok) {
      double r = 0.0;
      switch (function) {
        case Op::Sin: r = std::sin(a); break;
        case Op::Cos: r = std::cos(a); break;
        case Op::Exp: r = std::exp(a); break;
        case Op::Log: r = std::log(a); break;
        case Op::Sqrt: r = std::sqrt(a); break;
        case Op::Tanh: r = std::tanh(a); break;
        default: break;
      }
      if (auto f = fold_if_finite(r)) return *f;
    }
  }
  return Expr::raw_unary(function, arg);
}

// ---------------------------------------------------------------------------
// Differentiation

namespace {

class Differentiator {
 public:
  explicit Differentiator(std::size_t var) : var_(var) {}

  Expr d(const Expr& e) {
    auto it = memo_.find(e.id());
    if (it != memo_.end()) return it->second;
    Expr r = compute(e);
    memo_.emplace(e.id(), r);
    return r;
  }

 private:
  Expr compute(const Expr& e) {
    const Expr zero = Expr::constant(0.0);
    switch (e.op()) {
      case Op::Const: return zero;
      case Op::Var: return Expr::constant(e.var() == var_ ? 1.0 : 0.0);
      case Op::Neg: return -d(e.lhs());
      case Op::Add: return d(e.lhs()) + d(e.rhs());
      case Op::Sub: return d(e.lhs()) - d(e.rhs());
      case Op::Mul: {
        const Expr& a = e.lhs();
        const Expr& b = e.rhs();
        return d(a) * b + a * d(b);
      }
      case Op::Div: {
        const Expr& a = e.lhs();
        const Expr& b = e.rhs();
        Expr da = d(a);
        Expr db = d(b);
        if (db.is_constant(0.0)) return da / b;
        return (da * b - a * db) / (b * b);
      }
      case Op::Pow: {
        const Expr& a = e.lhs();
        const Expr& b = e.rhs();
        Expr da = d(a);
        Expr db = d(b);
        if (db.is_constant(0.0)) {
          if (da.is_constant(0.0)) return zero;
          return b * pow(a, b - Expr::constant(1.0)) * da;
        }
        return e * (db * apply(Op::Log, a) + b * da / a);
      }
      case Op::Sin: return apply(Op::Cos, e.lhs()) * d(e.lhs());
      case Op::Cos: return -(apply(Op::Sin, e.lhs()) * d(e.lhs()));
      case Op::Exp: return e * d(e.lhs());
      case Op::Log: return d(e.lhs()) / e.lhs();
      case Op::Sqrt: return d(e.lhs()) / (Expr::constant(2.0) * e);
      case Op::Tanh: return (Expr::constant(1.0) - e * e) * d(e.lhs());
    }
    return zero;
  }

  std::size_t var_;
  std::unordered_map<const ExprNode*, Expr> memo_;
};

}  // namespace

Expr diff1(const Expr& e, std::size_t var) { return Differentiator(var).d(e); }

Expr diff2(const Expr& e, std::size_t v, std::size_t w) { return diff1(diff1(e, v), w); }

// ---------------------------------------------------------------------------
// Structure queries

bool structurally_equal(const Expr& a, const Expr& b) {
  if (a.id() == b.id()) return true;
  if (a.op() != b.op()) return false;
  switch (a.op()) {
    case Op::Const: return a.value() == b.value() && std::signbit(a.value()) == std::signbit(b.value());
    case Op::Var: return a.var() == b.var();
    default: break;
  }
  if (!structurally_equal(a.lhs(), b.lhs())) return false;
  if (is_binary(a.op())) return structurally_equal(a.rhs(), b.rhs());
  return true;
}

void collect_variables(const Expr& e, std::vector<bool>& used) {
  std::unordered_set<const ExprNode*> seen;
  std::function<void(const Expr&)> walk = [&](const Expr& x) {
    if (!seen.insert(x.id()).second) return;
    if (x.op() == Op::Var) {
      if (used.size() <= x.var()) used.resize(x.var() + 1, false);
      used[x.var()] = true;
      return;
    }
    if (x.op() == Op::Const) return;
    walk(x.lhs());
    if (is_binary(x.op())) walk(x.rhs());
  };
  walk(e);
}

bool depends_on(const Expr& e, std::size_t var) {
  std::vector<bool> used;
  collect_variables(e, used);
  return var < used.size() && used[var];
}

// ---------------------------------------------------------------------------
// Printing

namespace {

int precedence(const Expr& e) {
  switch (e.op()) {
    case Op::Add:
    case Op::Sub: return 1;
    case Op::Mul:
    case Op::Div: return 2;
    case Op::Neg: return 3;
    case Op::Pow: return 4;
    case Op::Const: return e.value() < 0.0 || std::signbit(e.value()) ? 3 : 5;
    default: return 5;
  }
}

void format_number(double v, std::string& out) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  out.append(buf, ptr);
}

void print_rec(const Expr& e, const VarTable& names, std::string& out);

void print_child(const Expr& child, int min_prec, const VarTable& names, std::string& out) {
  if (precedence(child) < min_prec) {
    out.push_back('(');
    print_rec(child, names, out);
    out.push_back(')');
  } else {
    print_rec(child, names, out);
  }
}

void print_rec(const Expr& e, const VarTable& names, std::string& out) {
  switch (e.op()) {
    case Op::Const: format_number(e.value(), out); return;
    case Op::Var:
      if (e.var() < names.size()) {
        out += names.name(e.var());
      } else {
        out += "v" + std::to_string(e.var());
      }
      return;
    case Op::Neg:
      out.push_back('-');
      print_child(e.lhs(), 3, names, out);
      return;
    case Op::Add:
    case Op::Sub:
      print_child(e.lhs(), 1, names, out);
      out.push_back(e.op() == Op::Add ? '+' : '-');
      print_child(e.rhs(), 2, names, out);
      return;
    case Op::Mul:
    case Op::Div:
      print_child(e.lhs(), 2, names, out);
      out.push_back(e.op() == Op::Mul ? '*' : '/');
      print_child(e.rhs(), 3, names, out);
      return;
    case Op::Pow:
      print_child(e.lhs(), 5, names, out);
      out.push_back('^');
      print_child(e.rhs(), 3, names, out);
      return;
    default:
      out += function_name(e.op());
      out.push_back('(');
      print_rec(e.lhs(), names, out);
      out.push_back(')');
      return;
  }
}

}  // namespace

std::string to_string(const Expr& e, const VarTable& names) {
  std::string out;
  print_rec(e, names, out);
  return out;
}

}  // namespace impulse
