#pragma once

// Energy expressions: a small whitelisted grammar over model symbols.
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := ('-' | '+') unary | primary
//   primary := number | symbol | '(' expr ')'
//            | ('exp' | 'log' | 'tanh' | 'sq') '(' expr ')'
//            | 'pow' '(' expr ',' integer ')'
//   symbol  := 'z.' NAME ['[' int ']'] | 'u.' NAME ['[' int ']']
//            | 'theta.' MODULE '.' NAME | 's' ['[' int ']']
//
// Every function in the grammar is C-infinity on its domain, so first and second
// derivatives always exist where the value does.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "escm/error.hpp"
#include "escm/jet.hpp"

namespace escm {

// Flat coordinate id over the concatenation [z | u | theta | s].
using CoordId = int;

enum class Op : std::uint8_t { Const, Sym, Add, Sub, Mul, Div, Neg, Pow, Exp, Log, Tanh, Sq };

struct Node {
  Op op = Op::Const;
  int lhs = -1;
  int rhs = -1;
  double value = 0.0;   // Const
  int slot = -1;        // Sym: index into Expr::symbols()
  int exponent = 0;     // Pow
  std::size_t pos = 0;  // source offset of the node
};

enum class SymbolKind : std::uint8_t { Z, U, Theta, Control };

// A symbol as written in the source, before resolution.
struct SymbolName {
  SymbolKind kind = SymbolKind::Z;
  std::string module;  // theta only
  std::string name;    // variable or parameter name; empty for the control symbol
  std::optional<int> component;
};

std::string to_string(const SymbolName& s);

// Maps a written symbol to a coordinate id, or throws ValidationError.
using SymbolResolver = std::function<CoordId(const SymbolName&, std::size_t pos)>;

class Expr {
 public:
  Expr() = default;

  // Nodes are stored in post-order: every child precedes its parent, the root is last.
  const std::vector<Node>& nodes() const { return nodes_; }
  // Distinct coordinates referenced, in first-occurrence order. Node::slot indexes this.
  const std::vector<CoordId>& symbols() const { return symbols_; }
  const std::vector<SymbolName>& symbol_names() const { return names_; }
  const std::string& source() const { return source_; }
  bool references(CoordId c) const;

  // Printable form of the subexpression rooted at `node`.
  std::string subexpression(int node) const;
  // Printable form of the whole expression with some coordinates replaced by text.
  std::string rewrite(const std::function<std::optional<std::string>(CoordId)>& replace) const;

  static Expr parse(std::string_view text, const SymbolResolver& resolve);
  static Expr constant(double value);

 private:
  friend class ExprParser;
  std::vector<Node> nodes_;
  std::vector<CoordId> symbols_;
  std::vector<SymbolName> names_;
  std::string source_;
};

// ---- generic scalar arithmetic used by the evaluator -------------------------------

inline double constant_like(double, double c) { return c; }
inline Jet constant_like(const Jet& proto, double c) { return Jet(proto.dims(), c); }
template <class T>
Dual<T> constant_like(const Dual<T>& proto, double c) {
  return {constant_like(proto.v, c), constant_like(proto.v, 0.0)};
}

inline double f_exp(double x) { return std::exp(x); }
inline double f_log(double x) { return std::log(x); }
inline double f_tanh(double x) { return std::tanh(x); }
inline double f_sq(double x) { return x * x; }
inline double f_recip(double x) { return 1.0 / x; }
inline double f_powi(double x, int n) { return std::pow(x, n); }

inline Jet f_exp(const Jet& a) {
  const double e = std::exp(a.value());
  return a.chain(e, e, e);
}
inline Jet f_log(const Jet& a) {
  const double x = a.value();
  return a.chain(std::log(x), 1.0 / x, -1.0 / (x * x));
}
inline Jet f_tanh(const Jet& a) {
  const double t = std::tanh(a.value());
  const double d1 = 1.0 - t * t;
  return a.chain(t, d1, -2.0 * t * d1);
}
inline Jet f_sq(const Jet& a) { return a.chain(a.value() * a.value(), 2.0 * a.value(), 2.0); }
inline Jet f_recip(const Jet& a) {
  const double x = a.value();
  return a.chain(1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x));
}
inline Jet f_powi(const Jet& a, int n) {
  const double x = a.value();
  const double d2 = n == 0 || n == 1 ? 0.0 : double(n) * double(n - 1) * std::pow(x, n - 2);
  const double d1 = n == 0 ? 0.0 : double(n) * std::pow(x, n - 1);
  return a.chain(std::pow(x, n), d1, d2);
}

template <class T>
Dual<T> f_exp(const Dual<T>& a) {
  T e = f_exp(a.v);
  return {e, e * a.d};
}
template <class T>
Dual<T> f_log(const Dual<T>& a) { return {f_log(a.v), f_recip(a.v) * a.d}; }
template <class T>
Dual<T> f_tanh(const Dual<T>& a) {
  T t = f_tanh(a.v);
  return {t, (constant_like(t, 1.0) - t * t) * a.d};
}
template <class T>
Dual<T> f_sq(const Dual<T>& a) { return {a.v * a.v, (a.v + a.v) * a.d}; }
template <class T>
Dual<T> f_recip(const Dual<T>& a) {
  T r = f_recip(a.v);
  return {r, -(r * r) * a.d};
}
template <class T>
Dual<T> f_powi(const Dual<T>& a, int n) {
  if (n == 0) return constant_like(a, 1.0);
  return {f_powi(a.v, n), constant_like(a.v, double(n)) * f_powi(a.v, n - 1) * a.d};
}

// Evaluates `e` with symbol slot k bound to bind(k). Throws DomainError (message names
// the offending subexpression) when an operation leaves its domain.
template <class T, class Binder>
T evaluate(const Expr& e, Binder&& bind) {
  const auto& nodes = e.nodes();
  std::vector<T> val(nodes.size());
  std::optional<T> seed;
  auto fail = [&](int i, const char* what) {
    throw DomainError(std::string(what) + " in '" + e.subexpression(i) + "'");
  };
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    switch (n.op) {
      case Op::Const:
        if (!seed) seed.emplace(bind.constant(0.0));
        val[i] = constant_like(*seed, n.value);
        break;
      case Op::Sym:
        val[i] = bind(n.slot);
        break;
      case Op::Add: val[i] = val[n.lhs] + val[n.rhs]; break;
      case Op::Sub: val[i] = val[n.lhs] - val[n.rhs]; break;
      case Op::Mul: val[i] = val[n.lhs] * val[n.rhs]; break;
      case Op::Div:
        if (primal(val[n.rhs]) == 0.0) fail(int(i), "division by zero");
        val[i] = val[n.lhs] * f_recip(val[n.rhs]);
        break;
      case Op::Neg: val[i] = -val[n.lhs]; break;
      case Op::Pow:
        if (n.exponent < 0 && primal(val[n.lhs]) == 0.0) fail(int(i), "negative power of zero");
        val[i] = f_powi(val[n.lhs], n.exponent);
        break;
      case Op::Exp: val[i] = f_exp(val[n.lhs]); break;
      case Op::Log:
        if (!(primal(val[n.lhs]) > 0.0)) fail(int(i), "log of non-positive argument");
        val[i] = f_log(val[n.lhs]);
        break;
      case Op::Tanh: val[i] = f_tanh(val[n.lhs]); break;
      case Op::Sq: val[i] = f_sq(val[n.lhs]); break;
    }
    if (!std::isfinite(primal(val[i]))) fail(int(i), "non-finite value");
  }
  return val.back();
}

// Plain double evaluation with symbol values read from a flat coordinate vector.
double evaluate_at(const Expr& e, const std::function<double(CoordId)>& coord);

}  // namespace escm
