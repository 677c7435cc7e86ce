#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "escm/diagnostics.hpp"
#include "fixtures.hpp"
#include "random_models.hpp"

using namespace escm;
using escm::testing::chain2;
using escm::testing::chain2_with_z3;

namespace {

Point chain2_point(const Model& m) {
  Point p(m);
  p[0] = 1;
  p[1] = 2.5;
  p[2] = 1;
  p[3] = 0.5;
  return p;
}

Equilibrium chain2_eq(const Model& m, const Objective& obj) {
  return solve(m, obj, {{2, 1.0}, {3, 0.5}}, {0, 1});
}

const char* kIsotropic = R"J({
  "variables": [{"name": "Z1", "kind": "endogenous"}, {"name": "Z2", "kind": "endogenous"}],
  "edges": [],
  "terms": [
    {"owner": "local:Z1", "expr": "0.5*sq(z.Z1)"},
    {"owner": "local:Z2", "expr": "0.5*sq(z.Z2)"}
  ]
})J";

std::vector<Point> grid(const Model& m, std::mt19937_64& rng, int n) {
  std::vector<Point> out;
  for (int k = 0; k < n; ++k) out.push_back(escm::testing::random_point(m, rng, 1.0));
  return out;
}

}  // namespace

TEST(Lap, PlantedBilinearCoupling) {
  const Model m = Model::parse(chain2_with_z3("0.3*z.Z1*z.Z3"));
  const Point p(m);
  const LapReport r = lap_check(m, 0, 2, p);
  ASSERT_EQ(r.cross_z.rows(), 1);
  EXPECT_DOUBLE_EQ(r.cross_z(0, 0), 0.3);
  EXPECT_FALSE(r.pass);

  const Model c = chain2();
  const LapReport clean = lap_check(c, 1, 0, chain2_point(c));
  EXPECT_TRUE(clean.pass);
  EXPECT_EQ(clean.max_z, 0.0);
  EXPECT_EQ(clean.theta.size(), 1u);  // theta_Z2 = {a}
  EXPECT_EQ(clean.max_theta, 0.0);

  try {
    lap_check(c, 0, 1, chain2_point(c));
    FAIL();
  } catch (const QueryError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("pair error:", 0), 0u) << e.what();
  }
}

TEST(Lap, ParameterBlockSeesForeignParameters) {
  // Z3's local term reads Z1's parameter: d2E3/dz3 dtheta_Z1.k = 0.7.
  const Model m = Model::parse(R"J({
    "variables": [{"name": "Z1", "kind": "endogenous"}, {"name": "Z3", "kind": "endogenous"}],
    "edges": [],
    "terms": [
      {"owner": "local:Z1", "expr": "0.5*sq(z.Z1 - theta.Z1.k)", "params": {"k": 1}},
      {"owner": "local:Z3", "expr": "0.5*sq(z.Z3) + 0.7*theta.Z1.k*z.Z3"}
    ]})J");
  const LapReport r = lap_check(m, 0, 1, Point(m));
  EXPECT_EQ(r.max_z, 0.0);
  EXPECT_DOUBLE_EQ(r.cross_theta(0, 0), 0.7);
}

TEST(Lap, PenaltyWeights) {
  const Model m = Model::parse(chain2_with_z3("0.3*z.Z1*z.Z3"));
  const std::vector<Point> one = {Point(m)};
  LapWeights single;
  single.lambda = single.mu = 0.0;
  single.per_pair[{0, 2}] = {1.0, 0.0};
  EXPECT_NEAR(lap_penalty(m, one, single), 0.09, 1e-15);
  // Symmetric coupling: both ordered pairs (Z1,Z3) and (Z3,Z1) see it.
  EXPECT_NEAR(lap_penalty(m, one), 0.18, 1e-15);
  LapWeights twice;
  twice.lambda = 2.0;
  EXPECT_NEAR(lap_penalty(m, one, twice), 0.36, 1e-15);
  const Model c = chain2();
  EXPECT_EQ(lap_penalty(c, {chain2_point(c), Point(c)}), 0.0);
  EXPECT_THROW(lap_penalty(c, {}), QueryError);
}

TEST(Icm, SharedParameterIsDetected) {
  const Model clean = chain2();
  const IcmReport r2 = icm_check(clean, 1, chain2_point(clean));
  EXPECT_TRUE(r2.pass);
  EXPECT_EQ(r2.first.cols(), 0);
  EXPECT_TRUE(icm_check(clean, 0, chain2_point(clean)).pass);
  EXPECT_EQ(icm_penalty(clean, {chain2_point(clean)}), 0.0);

  std::string text = escm::testing::kChain2;
  text.replace(text.find("0.5*sq(z.Z1 - u.U1)"), 19, "0.5*sq(z.Z1 - theta.Z2.a*u.U1)");
  const Model shared = Model::parse(text);
  const IcmReport r = icm_check(shared, 1, chain2_point(shared));
  ASSERT_EQ(r.theta_pa.size(), 1u);
  EXPECT_EQ(shared.coord_name(r.theta_pa[0]), "theta.Z2.a");
  EXPECT_DOUBLE_EQ(r.first(0, 0), -1.0);
  EXPECT_FALSE(r.pass_first);
  EXPECT_TRUE(r.pass_mixed);
  EXPECT_DOUBLE_EQ(icm_penalty(shared, {chain2_point(shared)}), 1.0);
}

TEST(Icm, MatchesFiniteDifferencesOfTheResidual) {
  // G_2 = dE/dz2 with E2 = 0.5*(z2 - p*q*z1 - u2)^2 + 0.1*q*z2*p^2, p parent param, q own.
  const Model m = Model::parse(R"J({
    "variables": [{"name": "Z1", "kind": "endogenous"}, {"name": "Z2", "kind": "endogenous"},
                  {"name": "U2", "kind": "exogenous"}],
    "edges": [["Z1", "Z2"]],
    "terms": [
      {"owner": "local:Z1", "expr": "0.5*sq(z.Z1 - theta.Z1.p)", "params": {"p": 0.8}},
      {"owner": "local:Z2", "expr": "0.5*sq(z.Z2 - theta.Z1.p*theta.Z2.q*z.Z1 - u.U2) + 0.1*theta.Z2.q*z.Z2*sq(theta.Z1.p)", "params": {"q": 1.3}}
    ]})J");
  Point p(m);
  p[0] = 0.7;
  p[1] = -0.4;
  p[2] = 0.2;
  const IcmReport r = icm_check(m, 1, p);
  const CoordId P = *m.find_theta("Z1", "p"), Q = *m.find_theta("Z2", "q");
  auto G = [&](double pv, double qv) {
    Point x = p;
    x[P] = pv;
    x[Q] = qv;
    return differentiate(Objective::total(m), x, {1}).grad[0];
  };
  const double h = 1e-4, p0 = p[P], q0 = p[Q];
  const double dGdp = (G(p0 + h, q0) - G(p0 - h, q0)) / (2 * h);
  const double d2 = (G(p0 + h, q0 + h) - G(p0 + h, q0 - h) - G(p0 - h, q0 + h) + G(p0 - h, q0 - h)) / (4 * h * h);
  ASSERT_EQ(r.theta_pa, std::vector<CoordId>{P});
  ASSERT_EQ(r.theta_i, (std::vector<CoordId>{P, Q}));  // Z2 reads p, so p is in both blocks
  EXPECT_NEAR(r.first(0, 0), dGdp, 1e-7);
  EXPECT_NEAR(r.mixed[0](0, 0), 0.2 * q0, 1e-14);
  EXPECT_NEAR(r.mixed[0](0, 1), d2, 1e-6);
  EXPECT_FALSE(r.pass_mixed);
}

TEST(Metric, Chain2AndCongruenceAndRescale) {
  const Model m = chain2();
  const Objective obj = Objective::total(m);
  const Equilibrium eq = chain2_eq(m, obj);
  Eigen::Matrix2d H;
  H << 5, -2, -2, 1;
  EXPECT_EQ(causal_metric(obj, eq), Eigen::MatrixXd(H));

  Eigen::MatrixXd J(2, 2);
  J << 2, 0, 0, 1;
  Eigen::Matrix2d expect;
  expect << 20, -4, -4, 1;
  EXPECT_EQ(differentiate_chart(obj, eq.point, {0, 1}, J).hess, Eigen::MatrixXd(expect));

  std::mt19937_64 rng(2);
  for (int k = 0; k < 50; ++k) {
    Eigen::MatrixXd R = Eigen::MatrixXd::Random(2, 2);
    R += 2 * Eigen::MatrixXd::Identity(2, 2);
    const Eigen::MatrixXd chart = differentiate_chart(obj, eq.point, {0, 1}, R).hess;
    EXPECT_LE((chart - R.transpose() * H * R).cwiseAbs().maxCoeff(), 1e-12);
  }

  Objective scaled = obj;
  for (auto& t : scaled.terms) {
    if (t.label == "local:Z2") t.weight = 3.0;
  }
  Eigen::Matrix2d s;
  s << 13, -6, -6, 3;
  EXPECT_EQ(causal_metric(scaled, chain2_eq(m, scaled)), Eigen::MatrixXd(s));
  const SecondOrder so = second_order(m, scaled, eq.point);
  const SecondOrder base = second_order(m, eq.point);
  EXPECT_EQ(so.attribution.at("local:Z2").zz, 3.0 * base.attribution.at("local:Z2").zz);

  // Effective metric on z2 with z1 re-minimized: 1 - 4/5.
  EXPECT_NEAR(causal_metric(obj, eq, {1})(0, 0), 0.2, 1e-15);
  EXPECT_EQ(causal_metric(obj, eq, {1}, SchurMode::Clamp)(0, 0), 1.0);
  EXPECT_THROW(causal_metric(obj, eq, {2}), QueryError);

  const Model saddle = Model::parse(escm::testing::single("0.25*pow(z.Z1, 4) - 0.5*sq(z.Z1)"));
  SolverConfig cfg;
  const Equilibrium top = solve(saddle, Objective::total(saddle), {}, {0}, cfg);  // starts at the maximum z=0
  EXPECT_FALSE(top.hessian_pd);
  EXPECT_THROW(causal_metric(Objective::total(saddle), top), SolverError);
}

TEST(Susceptibility, Chain2MatchesClosedFormAndResolve) {
  const Model m = chain2();
  const Objective obj = Objective::total(m);
  const Equilibrium eq = chain2_eq(m, obj);
  const CoordId a = *m.find_theta("Z2", "a");
  const Susceptibility sa = susceptibility(m, obj, eq, a);
  EXPECT_NEAR(sa.response[0], 0.0, 1e-15);
  EXPECT_NEAR(sa.response[1], 1.0, 1e-14);
  const Susceptibility su = susceptibility(m, obj, eq, 3);
  EXPECT_EQ(su.response[0], 0.0);  // z1 is a non-descendant of Z2
  EXPECT_TRUE(su.structural);
  EXPECT_NEAR(su.response[1], 1.0, 1e-14);
  EXPECT_THROW(susceptibility(m, obj, eq, 0), QueryError);
}

TEST(Susceptibility, RandomizedAgainstResolve) {
  std::mt19937_64 rng(31);
  int checked = 0;
  for (int trial = 0; trial < 60 && checked < 30; ++trial) {
    std::string text = escm::testing::convex_model(rng, 2 + trial % 4);
    if (trial % 3 == 0) text.insert(text.size() - 2, R"J(, {"owner": "global", "expr": "0.1*sq(z.Z0 - z.Z1)"})J");
    const Model m = Model::parse(text);
    const Objective obj = Objective::total(m);
    ClampSet clamps;
    for (CoordId c = m.nz(); c < m.nz() + m.nu(); ++c) clamps[c] = std::uniform_real_distribution<>(-1, 1)(rng);
    std::vector<CoordId> free;
    for (CoordId c = 0; c < m.nz(); ++c) free.push_back(c);
    Equilibrium eq;
    try {
      eq = solve(m, obj, clamps, free);
    } catch (const Error&) {
      continue;
    }
    if (!eq.hessian_pd) continue;
    const CoordId w = m.nz() + int(rng() % unsigned(m.nu() + m.ntheta()));
    const Susceptibility s = susceptibility(m, obj, eq, w);
    const double h = 1e-5;
    auto resolve = [&](double delta) -> Eigen::VectorXd {
      SolverConfig cfg;
      cfg.init = InitMode::Given;
      Point start = eq.point;
      start[w] += delta;
      cfg.start = start;
      ClampSet c2 = clamps;
      if (c2.count(w)) c2[w] += delta;
      return Eigen::VectorXd(solve(m, obj, c2, free, cfg).point.z());
    };
    const Eigen::VectorXd fd = (resolve(h) - resolve(-h)) / (2 * h);
    EXPECT_LE((fd - s.response).cwiseAbs().maxCoeff(), 1e-6) << m.coord_name(w);
    ++checked;
  }
  EXPECT_GE(checked, 30);
}

TEST(Gauge, TableRows) {
  const Model iso = Model::parse(kIsotropic);
  std::mt19937_64 rng(4);
  const auto pts = grid(iso, rng, 6);
  const Point base = escm::testing::random_point(iso, rng, 1.0);
  const std::vector<ProbeHead> all = {ProbeHead::E, ProbeHead::dE, ProbeHead::gradE, ProbeHead::deltaE, ProbeHead::Hess};

  GaugeTransform comp;
  comp.scale = {{"local:Z1", 4.0}, {"local:Z2", 4.0}};
  comp.J = 2.0 * Eigen::MatrixXd::Identity(2, 2);
  for (const auto& c : gauge_preserved(iso, comp, all, pts, base)) EXPECT_TRUE(c.preserved) << head_name(c.head);

  GaugeTransform scale_only;
  scale_only.scale = {{"local:Z1", 4.0}, {"local:Z2", 4.0}};
  for (const auto& c : gauge_preserved(iso, scale_only, all, pts, base)) EXPECT_FALSE(c.preserved) << head_name(c.head);

  const Model m = chain2();
  const auto cpts = grid(m, rng, 6);
  const Point cbase = escm::testing::random_point(m, rng, 1.0);
  GaugeTransform shift;
  shift.offset = {{"local:Z1", 5.0}};
  const auto checks = gauge_preserved(m, shift, all, cpts, cbase);
  EXPECT_FALSE(checks[0].preserved);
  EXPECT_NEAR(checks[0].max_difference, 5.0, 1e-12);
  for (std::size_t k = 1; k < checks.size(); ++k) EXPECT_TRUE(checks[k].preserved) << head_name(checks[k].head);

  for (const auto& c : gauge_preserved(m, {}, all, cpts, cbase)) EXPECT_TRUE(c.preserved);

  GaugeTransform bad;
  bad.J = Eigen::MatrixXd::Zero(2, 2);
  EXPECT_THROW(GaugedModel(m, bad), QueryError);
  bad.J.resize(0, 0);
  bad.scale = {{"local:Z1", -1.0}};
  EXPECT_THROW(GaugedModel(m, bad), QueryError);
  bad.scale = {{"local:Q", 1.0}};
  EXPECT_THROW(GaugedModel(m, bad), QueryError);
  EXPECT_THROW(probe(m, ProbeHead::deltaE, cpts), QueryError);
}

TEST(Gauge, ProbeValuesTransformAsExpected) {
  const Model m = chain2();
  std::mt19937_64 rng(6);
  Point w = escm::testing::random_point(m, rng, 1.0);
  GaugeTransform g;
  g.scale = {{"local:Z2", 2.5}};
  g.offset = {{"local:Z2", -1.0}};
  g.J.resize(2, 2);
  g.J << 1.5, 0.3, -0.2, 0.8;
  const GaugedModel gm(m, g);
  const Point z = gm.pull_back(w);
  const ProbeReport e = probe(gm, ProbeHead::E, {w});
  const ProbeReport gr = probe(gm, ProbeHead::gradE, {w});
  const ProbeReport he = probe(gm, ProbeHead::Hess, {w});
  const Objective e2 = Objective::subset(m, {"local:Z2"});
  EXPECT_NEAR(e.values[0][1][0], 2.5 * e2.value(z) - 1.0, 1e-14);
  const Derivatives d = differentiate(e2, z, {0, 1});
  const Eigen::MatrixXd Ji = g.J.inverse();
  EXPECT_LE((gr.values[0][1] - 2.5 * Ji.transpose() * d.grad).cwiseAbs().maxCoeff(), 1e-13);
  const Eigen::MatrixXd Hw = 2.5 * Ji.transpose() * d.hess * Ji;
  EXPECT_LE((he.values[0][1] - Hw.reshaped()).cwiseAbs().maxCoeff(), 1e-13);
  const ProbeReport de = probe(gm, ProbeHead::dE, {w});
  ASSERT_EQ(de.values[0][1].size(), 1);
  EXPECT_EQ(de.values[0][1][0], gr.values[0][1][1]);
  EXPECT_EQ(de.values[0][2].size(), 0);  // exogenous term has no own z coordinates
}

TEST(Gauge, HierarchyNestingOnRandomizedCorpus) {
  std::mt19937_64 rng(12);
  const std::vector<ProbeHead> all = {ProbeHead::E, ProbeHead::dE, ProbeHead::gradE, ProbeHead::deltaE, ProbeHead::Hess};
  int families[3] = {0, 0, 0};
  for (int trial = 0; trial < 90; ++trial) {
    const int family = trial % 3;
    const bool iso = family == 2;
    const Model m = iso ? Model::parse(kIsotropic) : chain2();
    GaugeTransform g;
    std::uniform_real_distribution<> U(0.5, 3.0);
    if (family == 0) {
      for (const auto& t : m.terms()) {
        if (rng() % 2) g.offset[t.owner.label()] = U(rng) - 1.75;
      }
    } else if (family == 1) {
      for (const auto& t : m.terms()) {
        if (rng() % 2) g.scale[t.owner.label()] = U(rng);
      }
    } else {
      const double a = U(rng);
      g.scale = {{"local:Z1", a * a}, {"local:Z2", a * a}};
      g.J = a * Eigen::MatrixXd::Identity(2, 2);
      if (rng() % 2) g.offset["local:Z2"] = U(rng);
    }
    const auto pts = grid(m, rng, 5);
    const Point base = escm::testing::random_point(m, rng, 1.0);
    const auto c = gauge_preserved(m, g, all, pts, base);
    const bool E = c[0].preserved, dE = c[1].preserved, grad = c[2].preserved, delta = c[3].preserved,
               hess = c[4].preserved;
    if (E) EXPECT_TRUE(dE && grad && delta && hess);
    if (grad) EXPECT_TRUE(dE);
    if (grad) EXPECT_TRUE(hess);
    if (family == 0) EXPECT_TRUE(dE && grad && delta && hess);
    if (family == 2) EXPECT_TRUE(dE && grad && delta && hess);
    families[family] += E ? 0 : 1;
  }
  EXPECT_GT(families[0] + families[1] + families[2], 0);
}
