#pragma once

// Abduction, intervention and prediction on energy equilibria, plus disjunctive
// interventions (envelope of singleton effects, control-energy selection, softmin blend).

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "escm/solver.hpp"
#include "escm/surgery.hpp"

namespace escm {

// The abduction record: which configuration explains the evidence, and how it was chosen.
struct Explanation {
  Point point;  // abducted z and u; theta at the model defaults unless a start was given
  Evidence evidence;
  std::string selector;
  std::vector<CoordId> free;  // coordinates solved for
  double residual = 0.0;
  int iterations = 0;
  bool hessian_pd = true;
  double energy = 0.0;
};

// Minimizes the total energy with the evidence clamped and every other z, u free,
// starting from zeros (so among reachable minimizers the search is deterministic).
Explanation abduct(const Model& m, const Evidence& ev, const SolverConfig& cfg = {});

// Coordinates held at their abducted values versus re-minimized after surgery.
struct HoldPartition {
  std::vector<CoordId> held;
  std::vector<CoordId> free;
};

// All u held; z of every variable that is neither a target nor a descendant of one held;
// hard targets clamped by the surgery; the rest free.
HoldPartition default_hold(const Model& m, const EditedEnergy& edit);
// Explicit held set; every other z, u coordinate not clamped by a hard surgery is free.
HoldPartition hold_override(const Model& m, const EditedEnergy& edit, const std::vector<CoordId>& held);

using Readouts = std::vector<std::pair<std::string, std::string>>;  // name -> expression

struct CounterfactualResult {
  Point pre;
  Point post;
  std::vector<Surgery> surgeries;
  std::vector<std::pair<std::string, double>> readouts;  // request order
  HoldPartition partition;
  double post_energy = 0.0;  // edited energy at post
  double residual = 0.0;
  int iterations = 0;
  bool hessian_pd = true;
};

CounterfactualResult counterfactual(const Model& m, const Explanation& abducted, const std::vector<Surgery>& surgeries,
                                    const Readouts& readouts, const std::optional<std::vector<CoordId>>& hold = {},
                                    const SolverConfig& cfg = {});
CounterfactualResult counterfactual(const Model& m, const Evidence& ev, const std::vector<Surgery>& surgeries,
                                    const Readouts& readouts, const std::optional<std::vector<CoordId>>& hold = {},
                                    const SolverConfig& cfg = {});

struct Branch {
  Eigen::VectorXd value;
  double readout = 0.0;
  double energy = 0.0;   // E^{do(target := value)} at the branch equilibrium
  double control = 0.0;  // R(value; abducted point)
  double score = 0.0;    // energy + rho * control
  double weight = 0.0;   // softmin weight (selection only)
  Point post;
};

struct Envelope {
  std::vector<Branch> branches;  // deduplicated, lexicographic order of value
  double min = 0.0;
  double max = 0.0;
};

// One hard counterfactual per distinct value, all from the same abducted context.
// A failing branch throws, naming the branch.
Envelope disjunctive_envelope(const Model& m, const Evidence& ev, const std::string& target,
                              const std::vector<Eigen::VectorXd>& values, const std::string& readout,
                              const SolverConfig& cfg = {}, int threads = 1);

struct SelectOptions {
  double rho = 0.0;
  std::string control;  // expression over s / s[k] and the model symbols; empty means 0
  double tau = 0.0;
  int threads = 1;
};

struct Selection {
  std::vector<Branch> branches;
  int selected = 0;        // argmin score (ties within 1e-12 relative -> lexicographically smaller value)
  double readout = 0.0;    // selected readout (tau = 0) or softmin blend (tau > 0)
  bool blended = false;
};

Selection disjunctive_select(const Model& m, const Evidence& ev, const std::string& target,
                             const std::vector<Eigen::VectorXd>& values, const std::string& readout,
                             const SelectOptions& opt, const SolverConfig& cfg = {});

// Lexicographic order on vectors (shorter prefix first).
bool lexicographic_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace escm
