#pragma once

// Scalar math expressions over a declared variable table: parsing, evaluation
// and exact symbolic differentiation.
//
// Grammar (whitespace ignored):
//   expr   := term (("+" | "-") term)*
//   term   := factor (("*" | "/") factor)*
//   factor := "-" factor | power
//   power  := atom ("^" factor)?
//   atom   := number | ident | ident "(" expr ")" | "(" expr ")"
// so "^" binds tighter than unary minus and is right associative.

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace impulse {

/// Ordered list of declared variable names. Expressions refer to variables by
/// their position in the table.
class VarTable {
 public:
  VarTable() = default;
  explicit VarTable(std::vector<std::string> names);

  std::optional<std::size_t> find(std::string_view name) const;
  const std::string& name(std::size_t index) const { return names_.at(index); }
  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }

 private:
  std::vector<std::string> names_;
};

enum class Op : std::uint8_t {
  Const,
  Var,
  Neg,
  Add,
  Sub,
  Mul,
  Div,
  Pow,
  Sin,
  Cos,
  Exp,
  Log,
  Sqrt,
  Tanh,
};

bool is_function(Op op) noexcept;
bool is_binary(Op op) noexcept;
const char* function_name(Op op) noexcept;

struct ExprNode;

/// Immutable expression handle. Copies share the underlying node, so an Expr
/// is cheap to pass by value and safe to read from many threads.
class Expr {
 public:
  /// The constant 0.
  Expr();

  static Expr constant(double value);
  static Expr variable(std::size_t index);
  /// Node constructors without any folding; used by the parser so that printed
  /// expressions reparse to the same tree.
  static Expr raw_unary(Op op, Expr arg);
  static Expr raw_binary(Op op, Expr lhs, Expr rhs);

  Op op() const noexcept;
  double value() const noexcept;       // Const only
  std::size_t var() const noexcept;    // Var only
  const Expr& lhs() const noexcept;    // first operand / function argument
  const Expr& rhs() const noexcept;    // second operand of binary ops

  bool is_constant() const noexcept { return op() == Op::Const; }
  bool is_constant(double v) const noexcept { return is_constant() && value() == v; }

  /// Node identity, stable for the lifetime of any handle sharing the node.
  const ExprNode* id() const noexcept { return node_.get(); }

 private:
  explicit Expr(std::shared_ptr<const ExprNode> node) : node_(std::move(node)) {}
  std::shared_ptr<const ExprNode> node_;
};

struct ExprNode {
  Op op = Op::Const;
  double value = 0.0;
  std::size_t var = 0;
  Expr lhs;
  Expr rhs;
};

// Folding constructors: constant operands are folded when the result is finite
// and neutral/absorbing elements (0, 1) are dropped.
Expr operator-(const Expr& a);
Expr operator+(const Expr& a, const Expr& b);
Expr operator-(const Expr& a, const Expr& b);
Expr operator*(const Expr& a, const Expr& b);
Expr operator/(const Expr& a, const Expr& b);
Expr pow(const Expr& base, const Expr& exponent);
Expr apply(Op function, const Expr& arg);

Expr parse(std::string_view source, const VarTable& names);

/// Evaluate with `values[i]` bound to variable i. Throws DomainError for log of
/// a nonpositive number, sqrt of a negative number, division by zero and any
/// non-finite intermediate.
double evaluate(const Expr& e, std::span<const double> values);

/// Evaluate with a name -> value environment. Throws InputError when a variable
/// occurring in `e` has no binding.
double evaluate(const Expr& e, const VarTable& names, const std::map<std::string, double>& env);

Expr diff1(const Expr& e, std::size_t var);
Expr diff2(const Expr& e, std::size_t v, std::size_t w);

std::string to_string(const Expr& e, const VarTable& names);
bool structurally_equal(const Expr& a, const Expr& b);

/// Marks every variable index occurring in `e`; `used` is grown as needed.
void collect_variables(const Expr& e, std::vector<bool>& used);
bool depends_on(const Expr& e, std::size_t var);

}  // namespace impulse
