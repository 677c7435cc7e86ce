#pragma once

// Equilibrium search: regularized Newton over the free coordinates, with a backtracking
// gradient-descent fallback. Clamped coordinates are eliminated, never penalized.

#include <map>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "escm/energy.hpp"

namespace escm {

// Flat coordinate -> fixed value.
using ClampSet = std::map<CoordId, double>;

enum class InitMode { Zeros, Given, ForwardScm };

struct SolverConfig {
  double tol_grad = 1e-10;
  int max_iter = 200;
  double levenberg_lambda0 = 1e-8;
  double lambda_growth = 10.0;
  double lambda_max = 1e8;
  InitMode init = InitMode::Zeros;
  // Starting point for InitMode::Given; also supplies theta (and any frozen coordinates)
  // for the other modes when set.
  std::optional<Point> start;
};

struct IterationRecord {
  double energy = 0.0;
  double residual = 0.0;
  double lambda = 0.0;  // Levenberg shift of the accepted step; -1 for a descent step
};

struct Equilibrium {
  Point point;
  double energy = 0.0;
  double residual = 0.0;  // max-norm of the free gradient
  int iterations = 0;
  bool hessian_pd = true;
  double condition_number = 1.0;
  std::vector<CoordId> free;
  ClampSet clamps;
  std::vector<IterationRecord> trace;  // one entry per accepted iterate, starting point first
};

// Minimizes `obj` over `free` with `clamps` fixed. Coordinates in neither set keep their
// starting values. Throws SolverError (non-convergence, singular system) or DomainError.
Equilibrium solve(const Model& m, const Objective& obj, const ClampSet& clamps, const std::vector<CoordId>& free,
                  const SolverConfig& cfg = {});

// Free-block Hessian of `obj` at a point, with positive-definiteness and conditioning.
struct FreeHessian {
  Eigen::MatrixXd H;
  bool pd = true;
  double condition_number = 1.0;
};
FreeHessian free_hessian(const Objective& obj, const Point& p, const std::vector<CoordId>& free);

enum class SchurMode {
  Minimize,  // eliminated coordinates re-minimize: H_ff - H_fc H_cc^-1 H_cf
  Clamp,     // eliminated coordinates held fixed: H_ff
};

// Effective Hessian on the rows/columns `keep` of H (indices into H); every other index
// is eliminated. Throws SolverError when the eliminated block is singular.
Eigen::MatrixXd schur_effective_hessian(const Eigen::MatrixXd& H, const std::vector<int>& keep,
                                        SchurMode mode = SchurMode::Minimize);
// Same elimination for a general square matrix (field Jacobians): A_ff - A_fc A_cc^-1 A_cf.
Eigen::MatrixXd schur_complement(const Eigen::MatrixXd& A, const std::vector<int>& keep,
                                 SchurMode mode = SchurMode::Minimize);

}  // namespace escm
