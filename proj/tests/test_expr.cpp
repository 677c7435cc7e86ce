#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "escm/expr.hpp"
#include "random_models.hpp"

using namespace escm;

namespace {

// Resolves z.X / u.X / theta.M.N to ids from a fixed table; anything else is unknown.
struct Table {
  std::map<std::string, CoordId> ids;
  CoordId operator()(const SymbolName& s, std::size_t pos) const {
    auto it = ids.find(to_string(s));
    if (it == ids.end()) throw ParseError("unknown symbol '" + to_string(s) + "'", pos);
    return it->second;
  }
};

const Table kTable{{{"z.A", 0}, {"z.B", 1}, {"u.U", 2}, {"theta.A.k", 3}, {"z.V[0]", 4}, {"z.V[1]", 5}}};

Expr parse(const std::string& s) { return Expr::parse(s, kTable); }

double at(const Expr& e, std::vector<double> x) {
  return evaluate_at(e, [&](CoordId c) { return x[std::size_t(c)]; });
}

}  // namespace

TEST(Expr, PrecedenceAndAssociativity) {
  const std::vector<double> x{2, 3, 5, 7, 0, 0};
  EXPECT_DOUBLE_EQ(at(parse("1 + 2*3"), x), 7);
  EXPECT_DOUBLE_EQ(at(parse("10 - 4 - 3"), x), 3);
  EXPECT_DOUBLE_EQ(at(parse("12 / 3 / 2"), x), 2);
  EXPECT_DOUBLE_EQ(at(parse("-z.A*z.B"), x), -6);
  EXPECT_DOUBLE_EQ(at(parse("-(z.A + z.B)"), x), -5);
  EXPECT_DOUBLE_EQ(at(parse("+z.A - -z.B"), x), 5);
  EXPECT_DOUBLE_EQ(at(parse("pow(z.A, 3) + sq(z.B)"), x), 17);
  EXPECT_DOUBLE_EQ(at(parse("pow(z.A, -2)"), x), 0.25);
  EXPECT_DOUBLE_EQ(at(parse("theta.A.k*u.U"), x), 35);
  EXPECT_DOUBLE_EQ(at(parse("1.5e1 + .5 + 2E-1"), x), 15.7);
}

TEST(Expr, FunctionsMatchLibm) {
  const std::vector<double> x{0.3, 1.7, 0, 0, 0, 0};
  EXPECT_EQ(at(parse("exp(z.A)"), x), std::exp(0.3));
  EXPECT_EQ(at(parse("log(z.B)"), x), std::log(1.7));
  EXPECT_EQ(at(parse("tanh(z.A)"), x), std::tanh(0.3));
}

TEST(Expr, UnicodeMinusIsAccepted) {
  const std::vector<double> x{4, 1, 0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(at(parse("z.A \xE2\x88\x92 z.B"), x), 3);
  EXPECT_DOUBLE_EQ(at(parse("\xE2\x88\x92z.A"), x), -4);
}

TEST(Expr, SymbolsAreDeduplicatedInFirstOccurrenceOrder) {
  const Expr e = parse("z.B*z.A + z.B + z.V[1]");
  EXPECT_EQ(e.symbols(), (std::vector<CoordId>{1, 0, 5}));
  EXPECT_TRUE(e.references(0));
  EXPECT_FALSE(e.references(2));
}

TEST(Expr, NodesArePostOrder) {
  const Expr e = parse("sq(z.A - 1) * theta.A.k");
  const auto& n = e.nodes();
  for (std::size_t i = 0; i < n.size(); ++i) {
    if (n[i].lhs >= 0) EXPECT_LT(std::size_t(n[i].lhs), i);
    if (n[i].rhs >= 0) EXPECT_LT(std::size_t(n[i].rhs), i);
  }
}

TEST(Expr, SyntaxErrorsCarryPositions) {
  try {
    parse("z.A + * 2");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), 6u);
    EXPECT_NE(std::string(e.what()).find("column 7"), std::string::npos);
  }
  EXPECT_THROW(parse("sq(z.A"), ParseError);
  EXPECT_THROW(parse("abs(z.A)"), ParseError);
  EXPECT_THROW(parse("relu(z.A)"), ParseError);
  EXPECT_THROW(parse("pow(z.A, 1.5)"), ParseError);
  EXPECT_THROW(parse(""), ParseError);
  EXPECT_THROW(parse("z.A z.B"), ParseError);
  EXPECT_THROW(parse("1..2"), ParseError);
  try {
    parse("z.A + z.Q");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), 6u);
    EXPECT_NE(std::string(e.what()).find("z.Q"), std::string::npos);
  }
}

TEST(Expr, DomainErrorsNameTheSubexpression) {
  const std::vector<double> x{-1, 0, 0, 0, 0, 0};
  try {
    at(parse("1 + log(z.A)"), x);
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("log(z.A)"), std::string::npos);
  }
  EXPECT_THROW(at(parse("1 / z.B"), x), DomainError);
  EXPECT_THROW(at(parse("pow(z.B, -1)"), x), DomainError);
  EXPECT_THROW(at(parse("exp(1000)"), x), DomainError);
}

TEST(Expr, JetMatchesHandDerivatives) {
  // f = A^2 B + exp(A) ; df/dA = 2AB + e^A, df/dB = A^2, d2/dA2 = 2B + e^A, d2/dAdB = 2A.
  const Expr e = parse("sq(z.A)*z.B + exp(z.A)");
  const double A = 0.7, B = -1.3;
  struct Bind {
    double A, B;
    Jet operator()(int slot) const { return Jet::variable(2, std::size_t(slot), slot == 0 ? A : B); }
    Jet constant(double c) const { return Jet(2, c); }
  } bind{A, B};
  const Jet j = evaluate<Jet>(e, bind);
  EXPECT_DOUBLE_EQ(j.value(), A * A * B + std::exp(A));
  EXPECT_DOUBLE_EQ(j.grad(0), 2 * A * B + std::exp(A));
  EXPECT_DOUBLE_EQ(j.grad(1), A * A);
  EXPECT_DOUBLE_EQ(j.hess(0, 0), 2 * B + std::exp(A));
  EXPECT_DOUBLE_EQ(j.hess(0, 1), 2 * A);
  EXPECT_EQ(j.hess(1, 0), j.hess(0, 1));
  EXPECT_DOUBLE_EQ(j.hess(1, 1), 0);
}

TEST(Expr, NestedDualsGiveThirdDerivatives) {
  // f = A^3 B^2 ; d3f/dA dA dB = 12 A B.
  const Expr e = parse("pow(z.A, 3)*sq(z.B)");
  using D3 = Dual<Dual<Dual<double>>>;
  const double A = 1.1, B = 0.4;
  struct Bind {
    double A, B;
    D3 operator()(int slot) const {
      D3 x{};
      x.v.v.v = slot == 0 ? A : B;
      if (slot == 0) {
        x.d.v.v = 1;  // first direction: A
        x.v.d.v = 1;  // second direction: A
      } else {
        x.v.v.d = 1;  // third direction: B
      }
      return x;
    }
    D3 constant(double c) const {
      D3 x{};
      x.v.v.v = c;
      return x;
    }
  } bind{A, B};
  const D3 r = evaluate<D3>(e, bind);
  EXPECT_NEAR(r.d.d.d, 12 * A * B, 1e-14);
  EXPECT_NEAR(r.v.v.v, std::pow(A, 3) * B * B, 1e-14);
}

TEST(Expr, TanhAndLogSecondDerivatives) {
  const Expr e = parse("tanh(z.A) + log(z.B) + 1/z.B");
  struct Bind {
    Jet operator()(int slot) const { return Jet::variable(2, std::size_t(slot), slot == 0 ? 0.4 : 2.5); }
    Jet constant(double c) const { return Jet(2, c); }
  } bind;
  const Jet j = evaluate<Jet>(e, bind);
  const double t = std::tanh(0.4);
  EXPECT_NEAR(j.hess(0, 0), -2 * t * (1 - t * t), 1e-15);
  EXPECT_NEAR(j.hess(1, 1), -1 / (2.5 * 2.5) + 2 / (2.5 * 2.5 * 2.5), 1e-15);
  EXPECT_EQ(j.hess(0, 1), 0.0);
}

TEST(Expr, SubexpressionPrinting) {
  const Expr e = parse("0.5*sq(z.A - theta.A.k*z.B)");
  EXPECT_EQ(e.subexpression(int(e.nodes().size()) - 1), "0.5*sq((z.A - theta.A.k*z.B))");
  EXPECT_EQ(e.source(), "0.5*sq(z.A - theta.A.k*z.B)");
}

TEST(Expr, PrintingRoundTrips) {
  EXPECT_DOUBLE_EQ(at(parse(parse("z.A/(z.B*u.U)").subexpression(4)), {3, 2, 5, 0}), 0.3);
  std::mt19937_64 rng(17);
  escm::testing::RandomExprGen gen(rng);
  const std::vector<double> x = {0.3, -0.7, 1.1, 0.9, 0.2, -0.4};
  for (int k = 0; k < 300; ++k) {
    const Expr e = parse(gen.expr(4, {"z.A", "z.B", "u.U", "theta.A.k", "z.V[1]"}));
    const Expr back = parse(e.subexpression(int(e.nodes().size()) - 1));
    EXPECT_EQ(at(back, x), at(e, x)) << e.source();
  }
}

TEST(Expr, RewriteSubstitutesCoordinates) {
  const Expr e = parse("sq(z.A - 2*z.B) + z.A");
  const std::string shifted = e.rewrite([](CoordId c) -> std::optional<std::string> {
    if (c == 0) return "(z.A - 0.5)";
    return std::nullopt;
  });
  EXPECT_DOUBLE_EQ(at(parse(shifted), {1.5, 0.25}), at(e, {1.0, 0.25}));
}
