#pragma once

// Scalar expression trees: parsing, printing, evaluation, symbolic
// differentiation and compilation to a flat evaluation tape.

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace eqfree {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(std::string what, std::size_t offset)
      : Error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class UnknownIdentifier : public Error {
 public:
  UnknownIdentifier(std::string name, std::size_t offset)
      : Error("unknown identifier '" + name + "' at offset " + std::to_string(offset)),
        name_(std::move(name)) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

enum class Op { Const, Var, Neg, Sin, Cos, Exp, Tanh, Sqrt, Add, Sub, Mul, Div, Pow };

inline bool is_unary(Op op) { return op >= Op::Neg && op <= Op::Sqrt; }
inline bool is_binary(Op op) { return op >= Op::Add && op <= Op::Div; }

inline const char* function_name(Op op) {
  switch (op) {
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Exp: return "exp";
    case Op::Tanh: return "tanh";
    case Op::Sqrt: return "sqrt";
    default: return "";
  }
}

struct Node;

/// Immutable handle to an expression DAG node. Subtrees are shared.
class Expr {
 public:
  Expr() = default;
  explicit Expr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}

  const Node& operator*() const { return *node_; }
  const Node* operator->() const { return node_.get(); }
  const Node* get() const { return node_.get(); }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<const Node> node_;
};

struct Node {
  Op op = Op::Const;
  double value = 0.0;  // Const
  int var = -1;        // Var: index into the declared variable list
  int exponent = 0;    // Pow: nonnegative integer exponent
  Expr a, b;
};

// Raw node constructors: no simplification, used by the parser so that
// printing and reparsing preserves structure exactly.
namespace node {
inline Expr make(Node n) { return Expr(std::make_shared<const Node>(std::move(n))); }
inline Expr constant(double v) { return make(Node{Op::Const, v, -1, 0, {}, {}}); }
inline Expr variable(int i) { return make(Node{Op::Var, 0.0, i, 0, {}, {}}); }
inline Expr unary(Op op, Expr a) { return make(Node{op, 0.0, -1, 0, std::move(a), {}}); }
inline Expr binary(Op op, Expr a, Expr b) {
  return make(Node{op, 0.0, -1, 0, std::move(a), std::move(b)});
}
inline Expr power(Expr a, int n) { return make(Node{Op::Pow, 0.0, -1, n, std::move(a), {}}); }
}  // namespace node

inline bool is_const(const Expr& e, double v) { return e->op == Op::Const && e->value == v; }
inline bool is_const(const Expr& e) { return e->op == Op::Const; }

// Simplifying constructors used when building derived expressions.
inline Expr constant(double v) { return node::constant(v); }
inline Expr variable(int i) { return node::variable(i); }

inline Expr operator-(const Expr& a) {
  if (is_const(a)) return constant(-a->value);
  if (a->op == Op::Neg) return a->a;
  return node::unary(Op::Neg, a);
}
inline Expr operator+(const Expr& a, const Expr& b) {
  if (is_const(a) && is_const(b)) return constant(a->value + b->value);
  if (is_const(a, 0.0)) return b;
  if (is_const(b, 0.0)) return a;
  return node::binary(Op::Add, a, b);
}
inline Expr operator-(const Expr& a, const Expr& b) {
  if (is_const(a) && is_const(b)) return constant(a->value - b->value);
  if (is_const(b, 0.0)) return a;
  if (is_const(a, 0.0)) return -b;
  return node::binary(Op::Sub, a, b);
}
inline Expr operator*(const Expr& a, const Expr& b) {
  if (is_const(a) && is_const(b)) return constant(a->value * b->value);
  if (is_const(a, 0.0) || is_const(b, 0.0)) return constant(0.0);
  if (is_const(a, 1.0)) return b;
  if (is_const(b, 1.0)) return a;
  if (is_const(a, -1.0)) return -b;
  if (is_const(b, -1.0)) return -a;
  return node::binary(Op::Mul, a, b);
}
inline Expr operator/(const Expr& a, const Expr& b) {
  if (is_const(b, 1.0)) return a;
  if (is_const(a, 0.0) && !is_const(b, 0.0)) return constant(0.0);
  if (is_const(a) && is_const(b) && b->value != 0.0) return constant(a->value / b->value);
  return node::binary(Op::Div, a, b);
}
inline Expr operator+(const Expr& a, double b) { return a + constant(b); }
inline Expr operator*(double a, const Expr& b) { return constant(a) * b; }
inline Expr pow(const Expr& a, int n) {
  if (n == 0) return constant(1.0);
  if (n == 1) return a;
  if (is_const(a)) return constant(std::pow(a->value, n));
  return node::power(a, n);
}
inline Expr apply(Op op, const Expr& a) {
  if (op == Op::Neg) return -a;
  return node::unary(op, a);
}

/// Ordered variable names for one expression context.
using VarList = std::vector<std::string>;

/// Dimensions and names of a state-space system.
struct VarSpace {
  std::vector<std::string> states;
  std::vector<std::string> inputs;
  int n_z = 1;

  int n_x() const { return static_cast<int>(states.size()); }
  int n_w() const { return static_cast<int>(inputs.size()); }

  /// States followed by inputs; the variable index order used by system expressions.
  VarList names() const {
    VarList v = states;
    v.insert(v.end(), inputs.begin(), inputs.end());
    return v;
  }

  void validate() const {
    if (states.empty() || inputs.empty() || n_z < 1)
      throw Error("VarSpace: dimensions must be >= 1");
    auto all = names();
    for (std::size_t i = 0; i < all.size(); ++i)
      for (std::size_t j = i + 1; j < all.size(); ++j)
        if (all[i] == all[j]) throw Error("VarSpace: duplicate name '" + all[i] + "'");
  }
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

class Parser {
 public:
  Parser(std::string_view text, const VarList& vars) : s_(text), vars_(vars) {}

  Expr parse() {
    Expr e = expr();
    skip();
    if (pos_ != s_.size()) throw ParseError("unexpected '" + std::string(1, s_[pos_]) + "'", pos_);
    return e;
  }

 private:
  std::string_view s_;
  const VarList& vars_;
  std::size_t pos_ = 0;

  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool peek(char c) {
    skip();
    return pos_ < s_.size() && s_[pos_] == c;
  }
  void expect(char c) {
    if (!peek(c)) {
      if (pos_ >= s_.size()) throw ParseError(std::string("expected '") + c + "'", pos_);
      throw ParseError(std::string("expected '") + c + "'", pos_);
    }
    ++pos_;
  }

  Expr expr() {
    Expr lhs = term();
    while (true) {
      if (peek('+')) {
        ++pos_;
        lhs = node::binary(Op::Add, lhs, term());
      } else if (peek('-')) {
        ++pos_;
        lhs = node::binary(Op::Sub, lhs, term());
      } else {
        return lhs;
      }
    }
  }

  Expr term() {
    Expr lhs = factor();
    while (true) {
      if (peek('*')) {
        ++pos_;
        lhs = node::binary(Op::Mul, lhs, factor());
      } else if (peek('/')) {
        ++pos_;
        lhs = node::binary(Op::Div, lhs, factor());
      } else {
        return lhs;
      }
    }
  }

  // factor := '-' factor | atom ('^' uint)?
  Expr factor() {
    if (peek('-')) {
      ++pos_;
      skip();
      if (pos_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.')) {
        std::size_t save = pos_;
        double v = number();
        if (!peek('^')) return node::constant(-v);
        pos_ = save;
      }
      return node::unary(Op::Neg, factor());
    }
    Expr base = atom();
    if (peek('^')) {
      ++pos_;
      skip();
      std::size_t start = pos_;
      while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
      if (start == pos_) throw ParseError("expected nonnegative integer exponent", pos_);
      int n = 0;
      auto [p, ec] = std::from_chars(s_.data() + start, s_.data() + pos_, n);
      if (ec != std::errc()) throw ParseError("exponent out of range", start);
      return node::power(base, n);
    }
    return base;
  }

  double number() {
    std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.')) ++pos_;
    if (pos_ < s_.size() && (s_[pos_] == 'e' || s_[pos_] == 'E')) {
      std::size_t save = pos_++;
      if (pos_ < s_.size() && (s_[pos_] == '+' || s_[pos_] == '-')) ++pos_;
      if (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
        while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
      } else {
        pos_ = save;
      }
    }
    double v = 0.0;
    auto [p, ec] = std::from_chars(s_.data() + start, s_.data() + pos_, v);
    if (ec != std::errc() || p != s_.data() + pos_) throw ParseError("malformed number", start);
    return v;
  }

  Expr atom() {
    skip();
    if (pos_ >= s_.size()) throw ParseError("unexpected end of input", pos_);
    char c = s_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return node::constant(number());
    if (c == '(') {
      ++pos_;
      Expr e = expr();
      expect(')');
      return e;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t start = pos_;
      while (pos_ < s_.size() &&
             (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_'))
        ++pos_;
      std::string name(s_.substr(start, pos_ - start));
      for (std::size_t i = 0; i < vars_.size(); ++i)
        if (vars_[i] == name) return node::variable(static_cast<int>(i));
      for (Op op : {Op::Sin, Op::Cos, Op::Exp, Op::Tanh, Op::Sqrt}) {
        if (name == function_name(op)) {
          expect('(');
          Expr arg = expr();
          expect(')');
          return node::unary(op, arg);
        }
      }
      throw UnknownIdentifier(name, start);
    }
    throw ParseError("unexpected '" + std::string(1, c) + "'", pos_);
  }
};

}  // namespace detail

/// Parses `text` against the declared variable names.
inline Expr parse(std::string_view text, const VarList& vars) {
  return detail::Parser(text, vars).parse();
}

// ---------------------------------------------------------------------------
// Printing

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {
inline void print(const Expr& e, const VarList& vars, std::string& out);

// Emits `e` in a form the parser accepts as a base of '^' or operand of unary minus.
inline void print_atom(const Expr& e, const VarList& vars, std::string& out) {
  bool bare = (e->op == Op::Var) || (e->op == Op::Const && e->value >= 0.0) ||
              (e->op >= Op::Sin && e->op <= Op::Sqrt);
  if (bare) {
    print(e, vars, out);
  } else {
    out += '(';
    print(e, vars, out);
    out += ')';
  }
}

inline void print(const Expr& e, const VarList& vars, std::string& out) {
  switch (e->op) {
    case Op::Const:
      out += format_double(e->value);
      return;
    case Op::Var:
      out += vars.at(static_cast<std::size_t>(e->var));
      return;
    case Op::Neg:
      out += '-';
      // A bare nonnegative literal after '-' would fold into a constant.
      if (e->a->op == Op::Const) {
        out += '(';
        print(e->a, vars, out);
        out += ')';
      } else {
        print_atom(e->a, vars, out);
      }
      return;
    case Op::Pow:
      print_atom(e->a, vars, out);
      out += '^';
      out += std::to_string(e->exponent);
      return;
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: {
      static constexpr char sym[] = {'+', '-', '*', '/'};
      out += '(';
      print(e->a, vars, out);
      out += ' ';
      out += sym[static_cast<int>(e->op) - static_cast<int>(Op::Add)];
      out += ' ';
      print(e->b, vars, out);
      out += ')';
      return;
    }
    default:
      out += function_name(e->op);
      out += '(';
      print(e->a, vars, out);
      out += ')';
      return;
  }
}
}  // namespace detail

/// Fully parenthesized text that reparses to a structurally identical tree.
inline std::string to_string(const Expr& e, const VarList& vars) {
  std::string out;
  detail::print(e, vars, out);
  return out;
}

inline bool structurally_equal(const Expr& x, const Expr& y) {
  if (x.get() == y.get()) return true;
  if (x->op != y->op) return false;
  switch (x->op) {
    case Op::Const: return x->value == y->value || (std::isnan(x->value) && std::isnan(y->value));
    case Op::Var: return x->var == y->var;
    case Op::Pow: return x->exponent == y->exponent && structurally_equal(x->a, y->a);
    default:
      if (is_unary(x->op)) return structurally_equal(x->a, y->a);
      return structurally_equal(x->a, y->a) && structurally_equal(x->b, y->b);
  }
}

// ---------------------------------------------------------------------------
// Evaluation

inline double apply_unary(Op op, double a) {
  switch (op) {
    case Op::Neg: return -a;
    case Op::Sin: return std::sin(a);
    case Op::Cos: return std::cos(a);
    case Op::Exp: return std::exp(a);
    case Op::Tanh: return std::tanh(a);
    case Op::Sqrt:
      if (a < 0.0) throw DomainError("sqrt of negative value " + format_double(a));
      return std::sqrt(a);
    default: return a;
  }
}

inline double apply_binary(Op op, double a, double b) {
  switch (op) {
    case Op::Add: return a + b;
    case Op::Sub: return a - b;
    case Op::Mul: return a * b;
    case Op::Div:
      if (b == 0.0) throw DomainError("division by zero");
      return a / b;
    default: return 0.0;
  }
}

inline double ipow(double a, int n) {
  double r = 1.0;
  for (int i = 0; i < n; ++i) r *= a;
  return r;
}

/// Flat, topologically ordered evaluation program over a set of outputs.
/// Shared subexpressions are evaluated once.
class Tape {
 public:
  Tape() = default;

  explicit Tape(const std::vector<Expr>& outputs) {
    std::unordered_map<const Node*, int> slot;
    for (const auto& e : outputs) outputs_.push_back(visit(e, slot));
  }

  std::size_t num_outputs() const { return outputs_.size(); }
  std::size_t size() const { return code_.size(); }

  /// Evaluates every output; `vars` must cover every referenced variable index.
  void eval(std::span<const double> vars, std::span<double> out) const {
    thread_local std::vector<double> regs;
    regs.resize(code_.size());
    for (std::size_t i = 0; i < code_.size(); ++i) {
      const Instr& in = code_[i];
      switch (in.op) {
        case Op::Const: regs[i] = in.value; break;
        case Op::Var:
          if (static_cast<std::size_t>(in.a) >= vars.size())
            throw Error("variable index " + std::to_string(in.a) + " not bound");
          regs[i] = vars[static_cast<std::size_t>(in.a)];
          break;
        case Op::Pow: regs[i] = ipow(regs[static_cast<std::size_t>(in.a)], in.b); break;
        default:
          if (is_unary(in.op))
            regs[i] = apply_unary(in.op, regs[static_cast<std::size_t>(in.a)]);
          else
            regs[i] = apply_binary(in.op, regs[static_cast<std::size_t>(in.a)],
                                   regs[static_cast<std::size_t>(in.b)]);
      }
    }
    for (std::size_t k = 0; k < outputs_.size(); ++k) out[k] = regs[static_cast<std::size_t>(outputs_[k])];
  }

  std::vector<double> eval(std::span<const double> vars) const {
    std::vector<double> out(outputs_.size());
    eval(vars, out);
    return out;
  }

 private:
  struct Instr {
    Op op;
    double value;
    int a, b;  // operand slots; for Var `a` is the variable index, for Pow `b` is the exponent
  };
  std::vector<Instr> code_;
  std::vector<int> outputs_;

  int visit(const Expr& e, std::unordered_map<const Node*, int>& slot) {
    if (auto it = slot.find(e.get()); it != slot.end()) return it->second;
    Instr in{e->op, e->value, -1, -1};
    switch (e->op) {
      case Op::Const: break;
      case Op::Var: in.a = e->var; break;
      case Op::Pow:
        in.a = visit(e->a, slot);
        in.b = e->exponent;
        break;
      default:
        in.a = visit(e->a, slot);
        if (is_binary(e->op)) in.b = visit(e->b, slot);
    }
    code_.push_back(in);
    int id = static_cast<int>(code_.size()) - 1;
    slot.emplace(e.get(), id);
    return id;
  }
};

/// Evaluates a single expression at a point bound positionally to its variable list.
inline double eval(const Expr& e, std::span<const double> point) {
  return Tape({e}).eval(point)[0];
}

/// Largest variable index referenced by `e`, or -1 for closed expressions.
inline int max_variable(const Expr& e) {
  std::unordered_map<const Node*, int> memo;
  auto rec = [&](auto&& self, const Expr& x) -> int {
    if (auto it = memo.find(x.get()); it != memo.end()) return it->second;
    int r = -1;
    if (x->op == Op::Var) r = x->var;
    else if (x->op != Op::Const) {
      r = self(self, x->a);
      if (is_binary(x->op)) r = std::max(r, self(self, x->b));
    }
    memo.emplace(x.get(), r);
    return r;
  };
  return rec(rec, e);
}

/// True if variable `var` occurs anywhere in `e`.
inline bool depends_on(const Expr& e, int var) {
  std::unordered_map<const Node*, bool> memo;
  auto rec = [&](auto&& self, const Expr& x) -> bool {
    if (auto it = memo.find(x.get()); it != memo.end()) return it->second;
    bool r = false;
    if (x->op == Op::Var) r = x->var == var;
    else if (x->op != Op::Const) r = self(self, x->a) || (is_binary(x->op) && self(self, x->b));
    memo.emplace(x.get(), r);
    return r;
  };
  return rec(rec, e);
}

// ---------------------------------------------------------------------------
// Differentiation and substitution

/// Symbolic derivative of `e` with respect to variable index `var`.
/// Shared subtrees stay shared in the result.
inline Expr diff(const Expr& e, int var) {
  std::unordered_map<const Node*, Expr> memo;
  auto rec = [&](auto&& self, const Expr& x) -> Expr {
    if (auto it = memo.find(x.get()); it != memo.end()) return it->second;
    Expr d;
    switch (x->op) {
      case Op::Const: d = constant(0.0); break;
      case Op::Var: d = constant(x->var == var ? 1.0 : 0.0); break;
      case Op::Neg: d = -self(self, x->a); break;
      case Op::Add: d = self(self, x->a) + self(self, x->b); break;
      case Op::Sub: d = self(self, x->a) - self(self, x->b); break;
      case Op::Mul: d = self(self, x->a) * x->b + x->a * self(self, x->b); break;
      case Op::Div: {
        Expr da = self(self, x->a), db = self(self, x->b);
        d = da / x->b - (x->a * db) / (x->b * x->b);
        break;
      }
      case Op::Pow:
        d = static_cast<double>(x->exponent) * pow(x->a, x->exponent - 1) * self(self, x->a);
        break;
      case Op::Sin: d = node::unary(Op::Cos, x->a) * self(self, x->a); break;
      case Op::Cos: d = -(node::unary(Op::Sin, x->a) * self(self, x->a)); break;
      case Op::Exp: d = x * self(self, x->a); break;
      case Op::Tanh: d = (constant(1.0) - x * x) * self(self, x->a); break;
      case Op::Sqrt: d = self(self, x->a) / (2.0 * x); break;
    }
    memo.emplace(x.get(), d);
    return d;
  };
  return rec(rec, e);
}

/// Parses `name` in `vars` and differentiates with respect to it.
inline Expr diff(const Expr& e, const std::string& name, const VarList& vars) {
  for (std::size_t i = 0; i < vars.size(); ++i)
    if (vars[i] == name) return diff(e, static_cast<int>(i));
  throw UnknownIdentifier(name, 0);
}

/// Row-major matrix of partial derivatives d exprs[r] / d var_indices[c].
inline std::vector<Expr> jacobian(const std::vector<Expr>& exprs, const std::vector<int>& var_indices) {
  std::vector<Expr> out;
  out.reserve(exprs.size() * var_indices.size());
  for (const auto& e : exprs)
    for (int v : var_indices) out.push_back(diff(e, v));
  return out;
}

/// Replaces variable i with `replacement[i]` (an empty Expr keeps the variable).
inline Expr substitute(const Expr& e, const std::vector<Expr>& replacement,
                       std::unordered_map<const Node*, Expr>* shared_memo = nullptr) {
  std::unordered_map<const Node*, Expr> local;
  auto& memo = shared_memo ? *shared_memo : local;
  auto rec = [&](auto&& self, const Expr& x) -> Expr {
    if (auto it = memo.find(x.get()); it != memo.end()) return it->second;
    Expr r;
    switch (x->op) {
      case Op::Const: r = x; break;
      case Op::Var: {
        auto i = static_cast<std::size_t>(x->var);
        r = (i < replacement.size() && replacement[i]) ? replacement[i] : x;
        break;
      }
      case Op::Pow: r = node::power(self(self, x->a), x->exponent); break;
      default:
        if (is_unary(x->op)) r = node::unary(x->op, self(self, x->a));
        else r = node::binary(x->op, self(self, x->a), self(self, x->b));
    }
    memo.emplace(x.get(), r);
    return r;
  };
  return rec(rec, e);
}

}  // namespace eqfree
