#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "escm/solver.hpp"
#include "fixtures.hpp"
#include "random_models.hpp"

using namespace escm;
using escm::testing::chain2;
using escm::testing::single;

namespace {

std::vector<CoordId> range(CoordId lo, CoordId hi) {
  std::vector<CoordId> v;
  for (CoordId c = lo; c < hi; ++c) v.push_back(c);
  return v;
}

// Root of a monotone function on [lo, hi] by bisection.
template <class F>
double bisect(F f, double lo, double hi) {
  for (int k = 0; k < 200; ++k) {
    const double mid = 0.5 * (lo + hi);
    ((f(lo) < 0) == (f(mid) < 0) ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST(Solver, Chain2ObservationalEquilibrium) {
  const Model m = chain2();
  const Equilibrium eq = solve(m, Objective::total(m), {{2, 1.0}, {3, 0.5}}, {0, 1});
  EXPECT_NEAR(eq.point[0], 1.0, 1e-14);
  EXPECT_NEAR(eq.point[1], 2.5, 1e-14);
  EXPECT_LE(eq.iterations, 2);
  EXPECT_LE(eq.residual, 1e-12);
  EXPECT_TRUE(eq.hessian_pd);
  EXPECT_NEAR(eq.energy, 0.625, 1e-14);
  EXPECT_EQ(eq.trace.front().lambda, 0.0);
}

TEST(Solver, ConvexQuadraticsConvergeInTwoNewtonSteps) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 1 + int(rng() % 4);
    std::string vars, terms;
    for (int i = 0; i < n; ++i) {
      const std::string Z = "Z" + std::to_string(i), U = "U" + std::to_string(i);
      vars += (i ? ", " : "") + std::string(R"J({"name": ")J") + Z + R"J(", "kind": "endogenous"}, {"name": ")J" + U +
              R"J(", "kind": "exogenous"})J";
      std::string e = "0.5*sq(z." + Z + " - u." + U;
      for (int j = 0; j < i; ++j) e += " - " + std::to_string(std::uniform_real_distribution<>(-1, 1)(rng)) + "*z.Z" + std::to_string(j);
      e += ")";
      terms += (i ? ", " : "") + std::string(R"J({"owner": "local:)J") + Z + R"J(", "expr": ")J" + e + R"J("})J";
    }
    std::string edges;
    for (int i = 1; i < n; ++i) {
      for (int j = 0; j < i; ++j) edges += std::string(edges.empty() ? "" : ", ") + "[\"Z" + std::to_string(j) + "\", \"Z" + std::to_string(i) + "\"]";
    }
    const Model m = Model::parse(R"J({"variables": [)J" + vars + R"J(], "edges": [)J" + edges + R"J(], "terms": [)J" +
                                 terms + "]}");
    ClampSet clamps;
    for (CoordId c = m.nz(); c < m.nz() + m.nu(); ++c) clamps[c] = std::uniform_real_distribution<>(-2, 2)(rng);
    const Equilibrium eq = solve(m, Objective::total(m), clamps, range(0, m.nz()));
    EXPECT_LE(eq.iterations, 2);
    EXPECT_LE(eq.residual, 1e-12);
  }
}

TEST(Solver, QuarticMatchesBisection) {
  const Model m = Model::parse(single("0.25*pow(z.Z1, 4) - z.Z1*u.U1"));
  for (double u : {0.1, 0.5, 1.0, 2.0, 7.5, -3.0}) {
    const Equilibrium eq = solve(m, Objective::total(m), {{1, u}}, {0});
    const double oracle = bisect([&](double z) { return z * z * z - u; }, -10, 10);
    EXPECT_NEAR(eq.point[0], oracle, 1e-10) << u;
    EXPECT_NEAR(eq.point[0], std::cbrt(u), 1e-10) << u;
  }
  const Model q = Model::parse(single("0.25*pow(z.Z1, 4) - z.Z1"));
  EXPECT_NEAR(solve(q, Objective::total(q), {}, {0}).point[0], 1.0, 1e-12);
}

TEST(Solver, TraceIsMonotoneAndStationarityIsGlobalForConvex) {
  std::mt19937_64 rng(5);
  int converged = 0;
  for (int trial = 0; trial < 60; ++trial) {
    escm::testing::RandomModelOptions opt;
    opt.global = trial % 2 == 0;
    const Model m = Model::parse(escm::testing::random_model_json(rng, opt));
    ClampSet clamps;
    for (CoordId c = m.nz(); c < m.nz() + m.nu(); ++c) clamps[c] = std::uniform_real_distribution<>(-1, 1)(rng);
    Equilibrium eq;
    try {
      eq = solve(m, Objective::total(m), clamps, range(0, m.nz()));
    } catch (const SolverError&) {
      continue;
    } catch (const DomainError&) {
      continue;
    }
    ++converged;
    for (std::size_t k = 1; k < eq.trace.size(); ++k) {
      const double prev = eq.trace[k - 1].energy;
      EXPECT_LE(eq.trace[k].energy, prev + 8 * 2.3e-16 * std::max(1.0, std::abs(prev)));
    }
    EXPECT_LE(eq.residual, 1e-10);
  }
  EXPECT_GT(converged, 40);

  // Strictly convex objective: no random perturbation lowers the energy.
  const Model m = Model::parse(R"J({
    "variables": [{"name": "Z1", "kind": "endogenous"}, {"name": "Z2", "kind": "endogenous"}],
    "edges": [["Z1", "Z2"]],
    "terms": [
      {"owner": "local:Z1", "expr": "exp(z.Z1) - 2*z.Z1 + 0.1*pow(z.Z1, 4)"},
      {"owner": "local:Z2", "expr": "sq(z.Z2 - tanh(z.Z1)) + log(1 + sq(z.Z2))"}
    ]})J");
  const Objective obj = Objective::total(m);
  const Equilibrium eq = solve(m, obj, {}, {0, 1});
  EXPECT_TRUE(eq.hessian_pd);
  for (int k = 0; k < 500; ++k) {
    Point p = eq.point;
    p[0] += std::normal_distribution<>(0, 1)(rng);
    p[1] += std::normal_distribution<>(0, 1)(rng);
    EXPECT_GE(obj.value(p), eq.energy - 1e-12);
  }
}

TEST(Solver, ClampsAreEliminatedAndOthersKeepStart) {
  const Model m = chain2();
  Point start(m);
  start[1] = 7.0;
  SolverConfig cfg;
  cfg.init = InitMode::Given;
  cfg.start = start;
  const Equilibrium eq = solve(m, Objective::total(m), {{0, 3.0}}, {2}, cfg);
  EXPECT_EQ(eq.point[0], 3.0);
  EXPECT_EQ(eq.point[1], 7.0);
  EXPECT_NEAR(eq.point[2], 1.5, 1e-14);  // (u1 - 3) + u1 = 0
}

TEST(Solver, ForwardScmInitStartsAtTheSolution) {
  const Model m = chain2();
  Point start(m);
  start[2] = 1.0;
  start[3] = 0.5;
  SolverConfig cfg;
  cfg.init = InitMode::ForwardScm;
  cfg.start = start;
  const Equilibrium eq = solve(m, Objective::total(m), {{2, 1.0}, {3, 0.5}}, {0, 1}, cfg);
  EXPECT_EQ(eq.iterations, 0);
  EXPECT_EQ(eq.point[1], 2.5);
}

TEST(Solver, Errors) {
  const Model m = chain2();
  const Objective obj = Objective::total(m);
  EXPECT_THROW(solve(m, obj, {{0, 1.0}}, {0}), QueryError);
  EXPECT_THROW(solve(m, obj, {}, {0, 0}), QueryError);
  EXPECT_THROW(solve(m, obj, {}, {99}), QueryError);
  EXPECT_THROW(solve(m, obj, {{0, NAN}}, {1}), QueryError);

  const Model unbounded = Model::parse(single("-sq(z.Z1) + z.Z1"));
  try {
    solve(unbounded, Objective::total(unbounded), {}, {0});
    FAIL();
  } catch (const SolverError& e) {
    EXPECT_NE(std::string(e.what()).find("no convergence"), std::string::npos) << e.what();
  }
  const Model logm = Model::parse(single("log(z.Z1)"));
  EXPECT_THROW(solve(logm, Objective::total(logm), {}, {0}), DomainError);
}

TEST(Solver, SchurComplementMatchesProfileCurvature) {
  // E = 0.5 x^T A x over (z1, z2, u1, u2) for chain2; eliminate u re-minimized.
  const Model m = chain2();
  const Objective obj = Objective::total(m);
  Point p(m);
  const Eigen::MatrixXd H = differentiate(obj, p, {0, 1, 2, 3}).hess;
  const Eigen::MatrixXd S = schur_effective_hessian(H, {0, 1});
  EXPECT_EQ(schur_effective_hessian(H, {0, 1}, SchurMode::Clamp), H.topLeftCorner(2, 2));

  // Oracle: profile energy min_u E(z, u), second differences in z.
  auto profile = [&](double z1, double z2) {
    return solve(m, obj, {{0, z1}, {1, z2}}, {2, 3}).energy;
  };
  const double h = 1e-3;
  Eigen::Matrix2d fd;
  fd(0, 0) = (profile(h, 0) - 2 * profile(0, 0) + profile(-h, 0)) / (h * h);
  fd(1, 1) = (profile(0, h) - 2 * profile(0, 0) + profile(0, -h)) / (h * h);
  fd(0, 1) = fd(1, 0) = (profile(h, h) - profile(h, -h) - profile(-h, h) + profile(-h, -h)) / (4 * h * h);
  EXPECT_LE((S - fd).cwiseAbs().maxCoeff(), 1e-6) << S << "\n" << fd;
  EXPECT_EQ(S, S.transpose());

  Eigen::MatrixXd sing = Eigen::MatrixXd::Identity(3, 3);
  sing(2, 2) = 0.0;
  EXPECT_THROW(schur_effective_hessian(sing, {0}), SolverError);
  EXPECT_EQ(schur_effective_hessian(sing, {0, 1, 2}), sing);
}

TEST(Solver, FreeHessianConditioning) {
  const Model m = chain2();
  const FreeHessian f = free_hessian(Objective::total(m), Point(m), {0, 1});
  // eigenvalues of [[5,-2],[-2,1]]: 3 +- 2 sqrt 2
  EXPECT_TRUE(f.pd);
  EXPECT_NEAR(f.condition_number, (3 + 2 * std::sqrt(2.0)) / (3 - 2 * std::sqrt(2.0)), 1e-10);
  const Model flat = Model::parse(single("z.Z1"));
  EXPECT_FALSE(free_hessian(Objective::total(flat), Point(flat), {0}).pd);
}
