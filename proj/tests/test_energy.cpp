#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "escm/energy.hpp"
#include "fixtures.hpp"
#include "random_models.hpp"

using namespace escm;
using escm::testing::chain2;

namespace {

Point chain2_point(const Model& m, double z1, double z2, double u1, double u2) {
  Point p(m);
  p[0] = z1;
  p[1] = z2;
  p[2] = u1;
  p[3] = u2;
  return p;
}

bool close(double ad, double fd) { return std::abs(ad - fd) <= std::max(1e-5 * std::abs(fd), 1e-8); }

}  // namespace

TEST(Energy, Chain2ValueAndGradient) {
  const Model m = chain2();
  const FirstOrder f = eval(m, chain2_point(m, 1, 2.5, 1, 0.5));
  EXPECT_DOUBLE_EQ(f.value, 0.625);
  EXPECT_EQ(f.grad_z, Eigen::Vector2d(0, 0));
  EXPECT_DOUBLE_EQ(f.grad_u[0], 1.0);   // -(z1-u1) + u1
  EXPECT_DOUBLE_EQ(f.grad_u[1], 0.5);   // -(z2-a z1-u2) + u2
  EXPECT_DOUBLE_EQ(f.grad_theta[0], 0);

  const FirstOrder zero = eval(m, chain2_point(m, 0, 0, 0, 0));
  EXPECT_EQ(zero.value, 0.0);
  EXPECT_TRUE(zero.grad_z.isZero(0) && zero.grad_u.isZero(0) && zero.grad_theta.isZero(0));
}

TEST(Energy, Chain2HessianAndAttribution) {
  const Model m = chain2();
  const SecondOrder s = second_order(m, chain2_point(m, 1, 2.5, 1, 0.5));
  Eigen::Matrix2d H;
  H << 5, -2, -2, 1;
  EXPECT_EQ(s.H_zz, H);
  Eigen::Matrix2d e1;
  e1 << 1, 0, 0, 0;
  Eigen::Matrix2d e2;
  e2 << 4, -2, -2, 1;
  EXPECT_EQ(s.attribution.at("local:Z1").zz, e1);
  EXPECT_EQ(s.attribution.at("local:Z2").zz, e2);
  EXPECT_TRUE(s.attribution.at("exo:U1").zz.isZero(0));
  // d2E/dz1 da = -(z2 - a z1 - u2) + a z1 = 0 + 2 ; d2E/dz2 da = -z1.
  EXPECT_DOUBLE_EQ(s.H_ztheta(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(s.H_ztheta(1, 0), -1.0);
  // Oracle: central differences of grad_z in a.
  const double h = 1e-6;
  Point p = chain2_point(m, 1, 2.5, 1, 0.5);
  p[4] = 2 + h;
  const Eigen::VectorXd gp = eval(m, p).grad_z;
  p[4] = 2 - h;
  const Eigen::VectorXd gm = eval(m, p).grad_z;
  EXPECT_NEAR(s.H_ztheta(0, 0), (gp[0] - gm[0]) / (2 * h), 1e-8);
  EXPECT_NEAR(s.H_ztheta(1, 0), (gp[1] - gm[1]) / (2 * h), 1e-8);
}

TEST(Energy, UnitQuadraticHessian) {
  const Model m = Model::parse(escm::testing::single("0.5*sq(z.Z1)"));
  EXPECT_EQ(second_order(m, Point(m)).H_zz, Eigen::MatrixXd::Identity(1, 1));
}

TEST(Energy, DomainErrorNamesTerm) {
  const Model m = Model::parse(escm::testing::single("log(z.Z1)"));
  Point p(m);
  p[0] = -1;
  try {
    eval(m, p);
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("local:Z1"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("log(z.Z1)"), std::string::npos);
  }
}

TEST(Energy, PairEnergyCrossPartials) {
  const Model m = Model::parse(escm::testing::chain2_with_z3("0.3*z.Z1*z.Z3"));
  Point p(m);
  std::mt19937_64 rng(5);
  for (int k = 0; k < 5; ++k) {
    p = escm::testing::random_point(m, rng, 3.0);
    EXPECT_DOUBLE_EQ(effective_energy_pair(m, "Z1", "Z3", p).cross_zz()(0, 0), 0.3);
  }
  EXPECT_EQ(effective_energy_pair(chain2(), "Z2", "Z1", Point(chain2())).cross_zz()(0, 0), 0.0);
  EXPECT_THROW(effective_energy_pair(chain2(), "Z1", "Z2", Point(chain2())), QueryError);
  EXPECT_THROW(effective_energy_pair(chain2(), "Z1", "Z1", Point(chain2())), QueryError);

  const PairEnergy pe = effective_energy_pair(m, "Z1", "Z3", p);
  Eigen::VectorXd zi(1), za(1);
  zi << 0.5;
  za << 2.0;
  // E_3 + E_U3 + global with z3=0.5, z1=2: 0.5(0.5-u3)^2 + 0.5 u3^2 + 0.3*2*0.5.
  const double u3 = p[m.coord_by_name("u.U3")];
  EXPECT_NEAR(pe.value(zi, za), 0.5 * (0.5 - u3) * (0.5 - u3) + 0.5 * u3 * u3 + 0.3, 1e-15);
}

TEST(Energy, ChartSeedingIsCongruence) {
  const Model m = chain2();
  const Point p = chain2_point(m, 1, 2.5, 1, 0.5);
  Eigen::MatrixXd J(2, 2);
  J << 2, 0, 0, 1;
  const Derivatives d = differentiate_chart(Objective::total(m), p, {0, 1}, J);
  Eigen::Matrix2d expect;
  expect << 20, -4, -4, 1;
  EXPECT_EQ(d.hess, expect);
}

TEST(Energy, DirectionalThirdDerivatives) {
  // E = z^2 a^2 b: d/dz of Hessian in (a, b) at (z, a, b): d3/dz da da = 4 z b, d3/dz da db = 4 z a.
  const Model m = Model::parse(escm::testing::single("sq(z.Z1)*sq(theta.Z1.a)*theta.Z1.b", R"({"a": 1.5, "b": -0.5})"));
  Point p(m);
  p[0] = 0.7;
  const CoordId a = *m.find_theta("Z1", "a"), b = *m.find_theta("Z1", "b");
  const Derivatives d = differentiate_along(Objective::total(m), p, 0, {a, b});
  EXPECT_DOUBLE_EQ(d.value, 2 * 0.7 * 2.25 * -0.5);
  EXPECT_DOUBLE_EQ(d.grad[0], 4 * 0.7 * 1.5 * -0.5);
  EXPECT_DOUBLE_EQ(d.hess(0, 0), 4 * 0.7 * -0.5);
  EXPECT_DOUBLE_EQ(d.hess(0, 1), 4 * 0.7 * 1.5);
  EXPECT_DOUBLE_EQ(d.hess(1, 1), 0);
}

// Random models: gradients and Hessian blocks agree with central differences, the
// Hessian is bitwise symmetric, and the total is the sum of its terms.
TEST(EnergyProperty, DerivativesMatchFiniteDifferences) {
  std::mt19937_64 rng(2024);
  const double h = 1e-6;
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const Model m = Model::parse(escm::testing::random_model_json(rng));
    const Point p = escm::testing::random_point(m, rng);
    const Objective obj = Objective::total(m);
    std::vector<CoordId> all(std::size_t(m.ncoords()));
    std::iota(all.begin(), all.end(), 0);
    const Derivatives d = differentiate(obj, p, all);
    EXPECT_EQ(d.hess, d.hess.transpose());
    const SecondOrder s = second_order(m, p);
    EXPECT_EQ(s.H_zz, s.H_zz.transpose());

    double sum = 0;
    for (const auto& t : m.terms()) sum += evaluate_at(*t.expr, [&](CoordId c) { return p[c]; });
    EXPECT_NEAR(d.value, sum, 1e-12 * std::max(1.0, std::abs(sum)));

    for (CoordId c = 0; c < m.ncoords(); ++c) {
      Point q = p;
      q[c] = p[c] + h;
      const Derivatives dp = differentiate(obj, q, all);
      q[c] = p[c] - h;
      const Derivatives dm = differentiate(obj, q, all);
      const double fd = (dp.value - dm.value) / (2 * h);
      EXPECT_TRUE(close(d.grad[c], fd)) << m.coord_name(c) << " ad " << d.grad[c] << " fd " << fd;
      for (CoordId r = 0; r < m.ncoords(); ++r) {
        const double hfd = (dp.grad[r] - dm.grad[r]) / (2 * h);
        EXPECT_TRUE(close(d.hess(r, c), hfd)) << m.coord_name(r) << "," << m.coord_name(c);
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 1000);
}
