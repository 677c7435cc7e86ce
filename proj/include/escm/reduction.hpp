#pragma once

// Induced structural causal model: each mechanism f_i is the blockwise argmin of the
// node's local energy given its parents and exogenous input. Solving it is a single
// topological pass. Comparing it with energy equilibria checks the reduction between
// the two semantics.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "escm/surgery.hpp"

namespace escm {

class InducedScm {
 public:
  // Throws ClassViolation when the model has a global term.
  explicit InducedScm(const Model& m, const std::vector<Surgery>& surgeries = {});

  const Model& model() const { return m_; }

  // f_i at the parent, exogenous and parameter values in p (z_i itself is ignored).
  // Guarded Newton on the node's mechanism energy; throws ClassViolation naming the
  // node and point when the block shows negative curvature or a singular minimum.
  Eigen::VectorXd mechanism(int endo, const Point& p) const;

  // Forward pass in topological order, reading u and theta from base. Nodes flagged
  // in `held` keep their value from base.
  Point solve(const Point& base, const std::vector<bool>& held = {}) const;

 private:
  const Model& m_;
  std::vector<std::optional<Eigen::VectorXd>> hard_;
  std::vector<Objective> mechanism_;
};

InducedScm induce_scm(const Model& m);

// z of the (edited) induced SCM at exogenous values u and default parameters.
Eigen::VectorXd scm_solve(const Model& m, const Eigen::VectorXd& u, const std::vector<Surgery>& surgeries = {});

// Point with z replaced by the induced SCM's solution at base's u and theta.
Point forward_scm_point(const Model& m, const Point& base);

// SCM-side counterfactual: u abducted by the same clamped energy minimization as the
// energy side, non-descendants of the targets held at their abducted values, the edited
// SCM solved forward for the rest.
Point scm_counterfactual(const Model& m, const Evidence& ev, const std::vector<Surgery>& surgeries,
                         const SolverConfig& cfg = {});

// Replacement family for the random soft surgeries.
//   Shift:  the target's own local term with z_T replaced by (z_T - delta). The mixture's
//           minimum value does not depend on the parents, so ancestors stay put.
//   Anchor: 0.5*sq(z_T - c) per component. The mixture's minimum value varies with the
//           parents, and the energy equilibrium then pulls ancestors away from the SCM pass.
enum class SoftFamily { Shift, Anchor };

struct EquivalenceOptions {
  int trials = 100;
  std::uint64_t seed = 0;
  bool observational = true;
  bool hard = true;
  bool soft = true;
  SoftFamily soft_family = SoftFamily::Shift;
  double value_lo = -2.0;  // hard values, soft shifts and anchor centres
  double value_hi = 2.0;
  double u_scale = 2.0;    // contexts u ~ uniform[-u_scale, u_scale]
  std::vector<std::string> targets;  // empty: any endogenous variable
  int threads = 1;
  double tolerance = 1e-8;
};

struct EquivalenceTrial {
  int trial = 0;
  std::string surgery;  // "observational" or the surgery description
  double deviation = 0.0;
  double reduction_residual = 0.0;  // max |z_i - f_i(z_PA(i), u_i)| at the energy equilibrium
};

struct EquivalenceReport {
  std::vector<EquivalenceTrial> trials;
  double max_deviation = 0.0;
  double max_reduction_residual = 0.0;
  double tolerance = 1e-8;
  bool pass = false;
};

// Throws ClassViolation for models with a global term.
EquivalenceReport equivalence_check(const Model& m, const EquivalenceOptions& opt);

struct ExoSampler {
  enum class Kind { Uniform, Gauss };
  Kind kind = Kind::Uniform;
  double a = -1.0;  // uniform: low ; gauss: mean
  double b = 1.0;   // uniform: high; gauss: standard deviation
};

struct PushforwardOptions {
  std::vector<ExoSampler> samplers;  // one per exogenous variable (all components share it)
  int trials = 1000;
  std::uint64_t seed = 0;
  std::vector<Surgery> surgeries;
  std::vector<std::pair<std::string, std::string>> statistics;  // name -> expression over z, u
  int threads = 1;
  double tolerance = 1e-8;
};

struct StatisticSummary {
  std::string name;
  double energy_mean = 0.0, energy_var = 0.0;
  double scm_mean = 0.0, scm_var = 0.0;
  double max_paired_deviation = 0.0;
};

struct PushforwardReport {
  std::vector<StatisticSummary> statistics;
  double max_paired_deviation = 0.0;
  bool pass = false;
};

PushforwardReport pushforward_check(const Model& m, const PushforwardOptions& opt);

// Spectral norm of the Jacobian of the blockwise best-response map T at the SCM
// solution for u (power iteration on DT^T DT).
double contraction_estimate(const Model& m, const Eigen::VectorXd& u);

}  // namespace escm
