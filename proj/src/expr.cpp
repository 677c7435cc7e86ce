#include "escm/expr.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

namespace escm {

std::string to_string(const SymbolName& s) {
  std::string out;
  switch (s.kind) {
    case SymbolKind::Z: out = "z." + s.name; break;
    case SymbolKind::U: out = "u." + s.name; break;
    case SymbolKind::Theta: return "theta." + s.module + "." + s.name;
    case SymbolKind::Control: out = "s"; break;
  }
  if (s.component) out += "[" + std::to_string(*s.component) + "]";
  return out;
}

bool Expr::references(CoordId c) const {
  return std::find(symbols_.begin(), symbols_.end(), c) != symbols_.end();
}

Expr Expr::constant(double value) {
  Expr e;
  Node n;
  n.op = Op::Const;
  n.value = value;
  e.nodes_.push_back(n);
  std::ostringstream os;
  os.precision(17);
  os << value;
  e.source_ = os.str();
  return e;
}

namespace {

std::string format_number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

const char* function_name(Op op) {
  switch (op) {
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Tanh: return "tanh";
    case Op::Sq: return "sq";
    default: return "?";
  }
}

}  // namespace

namespace {

std::string print(const Expr& e, int node, const std::function<std::optional<std::string>(CoordId)>& replace) {
  const Node& n = e.nodes().at(std::size_t(node));
  auto sub = [&](int k) { return print(e, k, replace); };
  auto wrapped = [&](int k) {
    const Op op = e.nodes()[std::size_t(k)].op;
    return op == Op::Mul || op == Op::Div ? "(" + sub(k) + ")" : sub(k);
  };
  switch (n.op) {
    case Op::Const: return format_number(n.value);
    case Op::Sym: {
      if (auto r = replace(e.symbols()[std::size_t(n.slot)])) return *r;
      return to_string(e.symbol_names()[std::size_t(n.slot)]);
    }
    case Op::Add: return "(" + sub(n.lhs) + " + " + sub(n.rhs) + ")";
    case Op::Sub: return "(" + sub(n.lhs) + " - " + sub(n.rhs) + ")";
    case Op::Mul: return sub(n.lhs) + "*" + wrapped(n.rhs);
    case Op::Div: return sub(n.lhs) + "/" + wrapped(n.rhs);
    case Op::Neg: return "-" + sub(n.lhs);
    case Op::Pow: return "pow(" + sub(n.lhs) + ", " + std::to_string(n.exponent) + ")";
    default: return std::string(function_name(n.op)) + "(" + sub(n.lhs) + ")";
  }
}

}  // namespace

std::string Expr::rewrite(const std::function<std::optional<std::string>(CoordId)>& replace) const {
  return print(*this, int(nodes_.size()) - 1, replace);
}

std::string Expr::subexpression(int node) const {
  return print(*this, node, [](CoordId) { return std::optional<std::string>(); });
}

class ExprParser {
 public:
  ExprParser(std::string_view text, const SymbolResolver& resolve) : text_(text), resolve_(resolve) {}

  Expr run() {
    skip_space();
    if (at_end()) throw ParseError("empty expression", pos_);
    parse_sum();
    skip_space();
    if (!at_end()) throw ParseError("unexpected '" + std::string(1, text_[pos_]) + "'", pos_);
    out_.source_ = std::string(text_);
    return std::move(out_);
  }

 private:
  bool at_end() const { return pos_ >= text_.size(); }

  void skip_space() {
    while (!at_end() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  // Accepts ASCII '-' and the UTF-8 minus sign U+2212.
  bool eat_minus() {
    if (!at_end() && text_[pos_] == '-') {
      ++pos_;
      return true;
    }
    if (text_.substr(pos_, 3) == "\xE2\x88\x92") {
      pos_ += 3;
      return true;
    }
    return false;
  }

  bool eat(char c) {
    skip_space();
    if (!at_end() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!eat(c)) {
      throw ParseError(std::string("expected '") + c + "'", pos_);
    }
  }

  int push(Node n) {
    out_.nodes_.push_back(n);
    return int(out_.nodes_.size()) - 1;
  }

  int binary(Op op, int lhs, int rhs, std::size_t pos) {
    Node n;
    n.op = op;
    n.lhs = lhs;
    n.rhs = rhs;
    n.pos = pos;
    return push(n);
  }

  int parse_sum() {
    int lhs = parse_product();
    for (;;) {
      skip_space();
      const std::size_t at = pos_;
      if (eat('+')) {
        lhs = binary(Op::Add, lhs, parse_product(), at);
      } else if (eat_minus()) {
        lhs = binary(Op::Sub, lhs, parse_product(), at);
      } else {
        return lhs;
      }
    }
  }

  int parse_product() {
    int lhs = parse_unary();
    for (;;) {
      skip_space();
      const std::size_t at = pos_;
      if (eat('*')) {
        lhs = binary(Op::Mul, lhs, parse_unary(), at);
      } else if (eat('/')) {
        lhs = binary(Op::Div, lhs, parse_unary(), at);
      } else {
        return lhs;
      }
    }
  }

  int parse_unary() {
    skip_space();
    const std::size_t at = pos_;
    if (eat_minus()) {
      Node n;
      n.op = Op::Neg;
      n.lhs = parse_unary();
      n.pos = at;
      return push(n);
    }
    if (eat('+')) return parse_unary();
    return parse_primary();
  }

  std::string identifier() {
    const std::size_t start = pos_;
    while (!at_end() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) ++pos_;
    return std::string(text_.substr(start, pos_ - start));
  }

  int integer() {
    skip_space();
    const std::size_t start = pos_;
    bool negative = eat_minus();
    const std::size_t digits = pos_;
    while (!at_end() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (pos_ == digits) throw ParseError("expected integer", start);
    int v = 0;
    auto [ptr, ec] = std::from_chars(text_.data() + digits, text_.data() + pos_, v);
    if (ec != std::errc()) throw ParseError("integer out of range", start);
    return negative ? -v : v;
  }

  int parse_number() {
    const std::size_t start = pos_;
    while (!at_end() && (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.')) ++pos_;
    if (!at_end() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t save = pos_++;
      if (!at_end() && (text_[pos_] == '+' || text_[pos_] == '-')) ++pos_;
      if (at_end() || !std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
        pos_ = save;
      } else {
        while (!at_end() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      }
    }
    const std::string literal(text_.substr(start, pos_ - start));
    double v = 0.0;
    std::istringstream is(literal);
    is.imbue(std::locale::classic());
    if (!(is >> v) || !is.eof()) throw ParseError("malformed number '" + literal + "'", start);
    Node n;
    n.op = Op::Const;
    n.value = v;
    n.pos = start;
    return push(n);
  }

  std::optional<int> component() {
    if (!at_end() && text_[pos_] == '[') {
      ++pos_;
      int k = integer();
      expect(']');
      return k;
    }
    return std::nullopt;
  }

  int symbol(SymbolName name, std::size_t at) {
    const CoordId id = resolve_(name, at);
    auto& syms = out_.symbols_;
    auto it = std::find(syms.begin(), syms.end(), id);
    int slot = int(it - syms.begin());
    if (it == syms.end()) {
      syms.push_back(id);
      out_.names_.push_back(name);
    }
    Node n;
    n.op = Op::Sym;
    n.slot = slot;
    n.pos = at;
    return push(n);
  }

  int parse_primary() {
    skip_space();
    if (at_end()) throw ParseError("unexpected end of expression", pos_);
    const std::size_t at = pos_;
    const char c = text_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (c == '(') {
      ++pos_;
      int inner = parse_sum();
      expect(')');
      return inner;
    }
    if (!(std::isalpha(static_cast<unsigned char>(c)) || c == '_')) {
      throw ParseError("unexpected '" + std::string(1, c) + "'", at);
    }
    const std::string word = identifier();
    if (word == "z" || word == "u") {
      if (!eat('.')) throw ParseError("expected '.' after '" + word + "'", pos_);
      const std::size_t name_at = pos_;
      SymbolName s;
      s.kind = word == "z" ? SymbolKind::Z : SymbolKind::U;
      s.name = identifier();
      if (s.name.empty()) throw ParseError("expected variable name", name_at);
      s.component = component();
      return symbol(std::move(s), at);
    }
    if (word == "theta") {
      SymbolName s;
      s.kind = SymbolKind::Theta;
      if (!eat('.')) throw ParseError("expected '.' after 'theta'", pos_);
      s.module = identifier();
      if (s.module.empty()) throw ParseError("expected module name", pos_);
      if (!eat('.')) throw ParseError("expected '.' after module name", pos_);
      s.name = identifier();
      if (s.name.empty()) throw ParseError("expected parameter name", pos_);
      return symbol(std::move(s), at);
    }
    if (word == "s") {
      SymbolName s;
      s.kind = SymbolKind::Control;
      s.component = component();
      return symbol(std::move(s), at);
    }
    Op op;
    if (word == "exp") {
      op = Op::Exp;
    } else if (word == "log") {
      op = Op::Log;
    } else if (word == "tanh") {
      op = Op::Tanh;
    } else if (word == "sq") {
      op = Op::Sq;
    } else if (word == "pow") {
      op = Op::Pow;
    } else {
      throw ParseError("unknown function or symbol '" + word + "'", at);
    }
    expect('(');
    Node n;
    n.op = op;
    n.pos = at;
    n.lhs = parse_sum();
    if (op == Op::Pow) {
      expect(',');
      n.exponent = integer();
    }
    expect(')');
    return push(n);
  }

  std::string_view text_;
  const SymbolResolver& resolve_;
  std::size_t pos_ = 0;
  Expr out_;
};

Expr Expr::parse(std::string_view text, const SymbolResolver& resolve) {
  return ExprParser(text, resolve).run();
}

double evaluate_at(const Expr& e, const std::function<double(CoordId)>& coord) {
  struct Bind {
    const Expr& e;
    const std::function<double(CoordId)>& coord;
    double operator()(int slot) const { return coord(e.symbols()[std::size_t(slot)]); }
    double constant(double c) const { return c; }
  } bind{e, coord};
  return evaluate<double>(e, bind);
}

}  // namespace escm
