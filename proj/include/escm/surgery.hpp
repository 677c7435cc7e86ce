#pragma once

// Declarative edits of a model's energy: hard clamps and soft mechanism mixtures.

#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "escm/energy.hpp"
#include "escm/solver.hpp"

namespace escm {

// do(target := value): the target's local term is removed and its coordinates clamped.
// Children keep reading the clamped value.
struct HardSurgery {
  std::string target;
  Eigen::VectorXd value;
};

// Local term of target becomes (1 - lambda) * original + lambda * replacement.
struct SoftSurgery {
  std::string target;
  double lambda = 0.0;
  std::string replacement;  // expression text, checked against the target's parent mask
};

using Surgery = std::variant<HardSurgery, SoftSurgery>;

const std::string& surgery_target(const Surgery& s);
std::string describe(const Surgery& s);

// Observed values for a subset of z (and optionally u) coordinates.
using Evidence = ClampSet;

struct EditedEnergy {
  Objective objective;
  ClampSet clamps;           // hard-intervention clamps only
  std::vector<int> targets;  // endogenous indices touched, in surgery order
};

// Applies all surgeries to the model's total energy. Global and exogenous terms are
// untouched. Throws QueryError on a bad target, dimension, lambda or duplicate target,
// ValidationError on a replacement that breaks the parent mask.
EditedEnergy apply_surgery(const Model& m, const std::vector<Surgery>& surgeries);
EditedEnergy apply_surgery(const Model& m, const Surgery& s);

// Term labels making up endogenous i's mechanism in an edited objective.
bool is_mechanism_label(const Model& m, int endo, const std::string& label);

}  // namespace escm
