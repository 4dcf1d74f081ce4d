#include <cctype>
#include <charconv>
#include <string>

#include "impulse/error.hpp"
#include "impulse/expr.hpp"

namespace impulse {

namespace {

struct FunctionEntry {
  std::string_view name;
  Op op;
};

constexpr FunctionEntry kFunctions[] = {
    {"sin", Op::Sin}, {"cos", Op::Cos}, {"exp", Op::Exp},
    {"log", Op::Log}, {"sqrt", Op::Sqrt}, {"tanh", Op::Tanh},
};

std::optional<Op> lookup_function(std::string_view name) {
  for (const auto& f : kFunctions) {
    if (f.name == name) return f.op;
  }
  return std::nullopt;
}

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

class Parser {
 public:
  Parser(std::string_view src, const VarTable& names) : src_(src), names_(names) {}

  Expr parse_all() {
    Expr e = parse_expr();
    skip_ws();
    if (pos_ < src_.size()) {
      fail(pos_, std::string("unexpected '") + src_[pos_] + "'");
    }
    return e;
  }

 private:
  [[noreturn]] void fail(std::size_t at, const std::string& msg) const { throw ParseError(at, msg); }

  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  bool peek(char c) {
    skip_ws();
    return pos_ < src_.size() && src_[pos_] == c;
  }

  bool accept(char c) {
    if (peek(c)) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    skip_ws();
    if (pos_ >= src_.size()) fail(pos_, std::string("expected '") + c + "' but reached end of input");
    if (src_[pos_] != c) fail(pos_, std::string("expected '") + c + "'");
    ++pos_;
  }

  Expr parse_expr() {
    Expr lhs = parse_term();
    for (;;) {
      if (accept('+')) {
        lhs = Expr::raw_binary(Op::Add, lhs, parse_term());
      } else if (accept('-')) {
        lhs = Expr::raw_binary(Op::Sub, lhs, parse_term());
      } else {
        return lhs;
      }
    }
  }

  Expr parse_term() {
    Expr lhs = parse_factor();
    for (;;) {
      if (accept('*')) {
        lhs = Expr::raw_binary(Op::Mul, lhs, parse_factor());
      } else if (accept('/')) {
        lhs = Expr::raw_binary(Op::Div, lhs, parse_factor());
      } else {
        return lhs;
      }
    }
  }

  Expr parse_factor() {
    if (accept('-')) return Expr::raw_unary(Op::Neg, parse_factor());
    Expr base = parse_atom();
    if (accept('^')) return Expr::raw_binary(Op::Pow, base, parse_factor());
    return base;
  }

  Expr parse_atom() {
    skip_ws();
    if (pos_ >= src_.size()) fail(pos_, "expected expression but reached end of input");
    const char c = src_[pos_];
    if (c == '(') {
      ++pos_;
      Expr inner = parse_expr();
      expect(')');
      return inner;
    }
    if (is_digit(c) || c == '.') return parse_number();
    if (is_ident_start(c)) return parse_identifier();
    fail(pos_, std::string("unexpected '") + c + "'");
  }

  Expr parse_number() {
    const std::size_t start = pos_;
    std::size_t p = pos_;
    bool digits = false;
    while (p < src_.size() && is_digit(src_[p])) {
      ++p;
      digits = true;
    }
    if (p < src_.size() && src_[p] == '.') {
      ++p;
      while (p < src_.size() && is_digit(src_[p])) {
        ++p;
        digits = true;
      }
    }
    if (!digits) fail(start, "malformed number");
    if (p < src_.size() && (src_[p] == 'e' || src_[p] == 'E')) {
      std::size_t q = p + 1;
      if (q < src_.size() && (src_[q] == '+' || src_[q] == '-')) ++q;
      if (q < src_.size() && is_digit(src_[q])) {
        while (q < src_.size() && is_digit(src_[q])) ++q;
        p = q;
      }
    }
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(src_.data() + start, src_.data() + p, value);
    if (ec != std::errc() || ptr != src_.data() + p) fail(start, "malformed number");
    pos_ = p;
    return Expr::constant(value);
  }

  Expr parse_identifier() {
    const std::size_t start = pos_;
    while (pos_ < src_.size() && is_ident_char(src_[pos_])) ++pos_;
    const std::string_view name = src_.substr(start, pos_ - start);
    const bool call = peek('(');

    if (auto fn = lookup_function(name)) {
      if (!call) fail(start, "function '" + std::string(name) + "' requires one argument");
      expect('(');
      Expr arg = parse_expr();
      std::size_t extra = 0;
      while (accept(',')) {
        parse_expr();
        ++extra;
      }
      if (extra != 0) {
        fail(start, "function '" + std::string(name) + "' takes 1 argument, got " +
                        std::to_string(extra + 1));
      }
      expect(')');
      return Expr::raw_unary(*fn, arg);
    }

    auto index = names_.find(name);
    if (!index) fail(start, "unknown identifier '" + std::string(name) + "'");
    if (call) fail(start, "'" + std::string(name) + "' is a variable, not a function");
    return Expr::variable(*index);
  }

  std::string_view src_;
  const VarTable& names_;
  std::size_t pos_ = 0;
};

}  // namespace

Expr parse(std::string_view source, const VarTable& names) { return Parser(source, names).parse_all(); }

}  // namespace impulse
