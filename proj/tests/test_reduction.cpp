#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "escm/causal.hpp"
#include "escm/reduction.hpp"
#include "fixtures.hpp"
#include "random_models.hpp"

using namespace escm;
using escm::testing::chain2;
using escm::testing::convex_model;
using escm::testing::single;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(Eigen::Index(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out[k++] = x;
  return out;
}

}  // namespace

TEST(Reduction, Chain2Mechanisms) {
  const Model m = chain2();
  const InducedScm scm(m);
  Point p(m);
  p[0] = 1.5;
  p[3] = -0.25;
  EXPECT_NEAR(scm.mechanism(1, p)[0], 2 * 1.5 - 0.25, 1e-15);
  EXPECT_EQ(scm_solve(m, vec({1, 0.5})), vec({1, 2.5}));
  const Eigen::VectorXd z = scm_solve(m, vec({1, 0.5}), {HardSurgery{"Z1", vec({0})}});
  EXPECT_EQ(z, vec({0, 0.5}));
  EXPECT_THROW(scm_solve(m, vec({1})), QueryError);
}

TEST(Reduction, QuarticMechanismIsCubeRoot) {
  const Model m = Model::parse(single("0.25*pow(z.Z1, 4) - z.Z1*u.U1"));
  for (double u : {0.5, 1.0, 8.0, -2.0}) EXPECT_NEAR(scm_solve(m, vec({u}))[0], std::cbrt(u), 1e-12) << u;
  // Degenerate curvature at the minimum is outside the class.
  EXPECT_THROW(scm_solve(m, vec({0.0})), ClassViolation);
}

TEST(Reduction, ClassViolations) {
  try {
    scm_solve(Model::parse(single("0.25*pow(z.Z1, 4) - sq(z.Z1)")), vec({0.0}));
    FAIL();
  } catch (const ClassViolation& e) {
    EXPECT_NE(std::string(e.what()).find("Z1"), std::string::npos) << e.what();
  }
  const Model g = Model::parse(escm::testing::chain2_with_z3("0.5*sq(z.Z1 - z.Z3)"));
  EXPECT_THROW(InducedScm{g}, ClassViolation);
  EXPECT_THROW(equivalence_check(g, {}), ClassViolation);
}

TEST(Reduction, Chain2CounterfactualAgreesWithEnergySide) {
  const Model m = chain2();
  const Evidence ev = {{0, 1.0}, {1, 2.5}};
  const std::vector<Surgery> s = {HardSurgery{"Z1", vec({0})}};
  const Point scm = scm_counterfactual(m, ev, s);
  const CounterfactualResult e = counterfactual(m, ev, s, {});
  EXPECT_NEAR(scm[1], 0.25, 1e-14);
  EXPECT_LE((scm.x - e.post.x).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Reduction, EquivalenceOnConvexNonlinearModels) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 12; ++k) {
    const Model m = Model::parse(convex_model(rng, 2 + k % 4));
    EquivalenceOptions opt;
    opt.trials = 25;
    opt.seed = 100 + std::uint64_t(k);
    const EquivalenceReport r = equivalence_check(m, opt);
    EXPECT_TRUE(r.pass) << r.max_deviation;
    EXPECT_LE(r.max_reduction_residual, 1e-8);
    EXPECT_EQ(r.trials.size(), 75u);

    // Counterfactuals coincide too.
    Evidence ev;
    for (CoordId c = 0; c < m.nz(); ++c) ev[c] = 0.1 * double(c + 1);
    const std::vector<Surgery> s = {HardSurgery{"Z0", vec({0.7})}};
    const Point a = scm_counterfactual(m, ev, s);
    const CounterfactualResult b = counterfactual(m, ev, s, {});
    EXPECT_LE((a.x - b.post.x).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Reduction, EquivalenceIsDeterministicAcrossThreads) {
  std::mt19937_64 rng(8);
  const Model m = Model::parse(convex_model(rng, 4));
  EquivalenceOptions opt;
  opt.trials = 30;
  opt.seed = 42;
  const EquivalenceReport a = equivalence_check(m, opt);
  opt.threads = 4;
  const EquivalenceReport b = equivalence_check(m, opt);
  ASSERT_EQ(a.trials.size(), b.trials.size());
  for (std::size_t k = 0; k < a.trials.size(); ++k) {
    EXPECT_EQ(a.trials[k].surgery, b.trials[k].surgery);
    EXPECT_EQ(a.trials[k].deviation, b.trials[k].deviation);
  }
  opt.seed = 43;
  EXPECT_NE(equivalence_check(m, opt).trials[1].surgery, a.trials[1].surgery);
}

TEST(Reduction, Chain2Pushforward) {
  const Model m = chain2();
  PushforwardOptions opt;
  opt.samplers = {{ExoSampler::Kind::Uniform, -1, 1}, {ExoSampler::Kind::Uniform, -1, 1}};
  opt.trials = 4000;
  opt.seed = 7;
  opt.statistics = {{"z2", "z.Z2"}};
  const PushforwardReport r = pushforward_check(m, opt);
  EXPECT_TRUE(r.pass);
  const StatisticSummary& s = r.statistics[0];
  // z2 = 2 u1 + u2: mean 0, variance 4/3 + 1/3.
  EXPECT_NEAR(s.scm_mean, 0.0, 0.08);
  EXPECT_NEAR(s.scm_var, 5.0 / 3.0, 0.12);
  EXPECT_NEAR(s.energy_mean, s.scm_mean, 1e-12);

  opt.surgeries = {HardSurgery{"Z1", vec({1})}};
  opt.samplers[1] = {ExoSampler::Kind::Gauss, 0.5, 0.0};
  const PushforwardReport d = pushforward_check(m, opt);
  EXPECT_NEAR(d.statistics[0].scm_mean, 2.5, 1e-15);
  EXPECT_NEAR(d.statistics[0].scm_var, 0.0, 1e-15);

  opt.samplers.pop_back();
  EXPECT_THROW(pushforward_check(m, opt), QueryError);
}

TEST(Reduction, ContractionOfChain2) {
  const Model m = chain2();
  EXPECT_NEAR(contraction_estimate(m, vec({1, 0.5})), 2.0, 1e-12);
}

TEST(Reduction, AnchoredSoftSurgeryMovesAncestors) {
  // (1-l)*0.5(z2 - 2 z1 - u2)^2 + l*0.5(z2 - c)^2 has minimum value l(1-l)/2 (2 z1 + u2 - c)^2,
  // which depends on z1: the energy side trades z1 against it, the SCM pass does not.
  const Model m = chain2();
  EquivalenceOptions opt;
  opt.trials = 20;
  opt.seed = 4;
  opt.observational = opt.hard = false;
  opt.soft_family = SoftFamily::Anchor;
  opt.targets = {"Z2"};
  const EquivalenceReport anchored = equivalence_check(m, opt);
  EXPECT_FALSE(anchored.pass);
  EXPECT_GT(anchored.max_deviation, 1e-3);

  opt.targets = {"Z1"};  // no parents: nothing to pull
  EXPECT_TRUE(equivalence_check(m, opt).pass);

  opt.targets = {"Z2"};
  opt.soft_family = SoftFamily::Shift;
  EXPECT_TRUE(equivalence_check(m, opt).pass);
}
