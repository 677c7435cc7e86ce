#pragma once

// Dynamic models: integrate dz/dt = F(z; u, theta) with fixed-step RK4, hard interventions
// as feedback control, steady states, and the dynamic LAP/ICM component checks.
//
// The field is either the model's declared dynamics or the gradient flow F = -grad_z E of
// an objective. The gradient flow reads every term touching z_i, so it is built from the
// energy engine rather than declared in the model file.

#include <memory>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "escm/diagnostics.hpp"
#include "escm/energy.hpp"
#include "escm/solver.hpp"

namespace escm {

// Replaces F_target by gain * (value - z_target).
struct DynHardSurgery {
  std::string target;
  Eigen::VectorXd value;
  double gain = 10.0;
};

// F_target becomes (1 - lambda) * F_target + lambda * replacement, one text per component.
struct DynSoftSurgery {
  std::string target;
  double lambda = 0.0;
  std::vector<std::string> replacement;
};

using DynSurgery = std::variant<DynHardSurgery, DynSoftSurgery>;

std::string describe(const DynSurgery& s);

class DynamicSystem {
 public:
  // Declared dynamics; throws QueryError when the model has none.
  static DynamicSystem declared(const Model& m);
  // Field components supplied outside the model file (audited or learned dynamics), one
  // expression per z coordinate. Not checked against the parent mask.
  static DynamicSystem from_fields(const Model& m, const std::vector<std::string>& exprs);
  // F = -grad_z obj.
  static DynamicSystem gradient_flow(const Model& m, Objective obj);
  static DynamicSystem gradient_flow(const Model& m) { return gradient_flow(m, Objective::total(m)); }

  // Applies surgeries. Throws QueryError on a bad target, dimension, gain or lambda,
  // ValidationError on a replacement outside the target's parent mask.
  DynamicSystem with(const std::vector<DynSurgery>& surgeries) const;

  const Model& model() const { return *m_; }
  bool is_gradient_flow() const { return gradient_; }

  Eigen::VectorXd field(const Point& p) const;
  // dF/dcoords, nz x |coords|.
  Eigen::MatrixXd jacobian(const Point& p, const std::vector<CoordId>& coords) const;
  // F_z and its gradient and Hessian over coords.
  Derivatives component(CoordId z, const Point& p, const std::vector<CoordId>& coords) const;
  // theta_i for the ICM sweeps: parameters declared under module i plus those its field
  // components read; the gradient flow uses the static sets.
  std::vector<CoordId> module_params(int endo) const;

 private:
  // Edited form of one field component: own * F + lambda * replacement, or feedback.
  struct Row {
    double own = 1.0;
    double lambda = 0.0;
    Objective replacement;
    bool feedback = false;
    double gain = 0.0, value = 0.0;
  };

  DynamicSystem(const Model& m, bool gradient, Objective obj);

  const Model* m_;
  bool gradient_;
  Objective obj_;
  std::vector<Objective> declared_;  // one single-term objective per z coordinate
  std::vector<Row> rows_;
};

struct Trajectory {
  std::vector<double> t;
  std::vector<Eigen::VectorXd> z;
  struct Event {
    double t = 0.0;
    std::string label;
  };
  std::vector<Event> events;
};

struct IntegrateOptions {
  double t_end = 10.0;
  double dt = 0.01;
  int record_every = 1;  // the final state is always recorded
};

// Error for a state that stopped being finite; carries the last finite time.
class BlowUpError : public SolverError {
 public:
  BlowUpError(double t, const std::string& msg) : SolverError(msg), last_finite_(t) {}
  double last_finite_time() const { return last_finite_; }

 private:
  double last_finite_;
};

// Classical RK4 from start.z(); u and theta stay at start's values. Surgeries are active
// from t = 0 and listed as events there.
Trajectory integrate(const DynamicSystem& sys, const Point& start, const IntegrateOptions& opt,
                     const std::vector<DynSurgery>& surgeries = {});

// Independent trajectories in parallel; results in input order.
std::vector<Trajectory> integrate_many(const DynamicSystem& sys, const std::vector<Point>& starts,
                                       const IntegrateOptions& opt, const std::vector<DynSurgery>& surgeries = {},
                                       int threads = 1);

struct SteadyState {
  Point point;
  double residual = 0.0;  // max |F|
  int iterations = 0;
  bool stable = false;  // every Jacobian eigenvalue has negative real part
  Eigen::VectorXcd eigenvalues;
};

struct SteadyStateOptions {
  double tol = 1e-12;
  int max_iter = 100;
};

// Newton on F(z) = 0 from start.z() with residual backtracking. Throws SolverError on a
// singular Jacobian or non-convergence.
SteadyState steady_state(const DynamicSystem& sys, const Point& start, const std::vector<DynSurgery>& surgeries = {},
                         const SteadyStateOptions& opt = {});

// dF_i/dz_a and dF_i/dtheta_a at p. With `eliminate`, those endogenous modules are
// removed from the field Jacobian by Schur complementation first.
LapReport dyn_lap_check(const DynamicSystem& sys, int a, int i, const Point& p, double tol = 1e-10,
                        const std::vector<int>& eliminate = {});
double dyn_lap_penalty(const DynamicSystem& sys, const std::vector<Point>& samples, const LapWeights& w = {});

// dF_i/dtheta_PA and d2F_i/dtheta_PA dtheta_i at p.
IcmReport dyn_icm_check(const DynamicSystem& sys, int i, const Point& p, double tol = 1e-10);
double dyn_icm_penalty(const DynamicSystem& sys, const std::vector<Point>& samples, const IcmWeights& w = {});

}  // namespace escm
