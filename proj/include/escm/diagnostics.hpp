#pragma once

// Modularity diagnostics (LAP, ICM), the causal metric and susceptibilities, and gauge
// transformations with the probe-head hierarchy.

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "escm/solver.hpp"

namespace escm {

// ---- LAP -------------------------------------------------------------------------

struct LapReport {
  int a = 0;  // intervened module A
  int i = 0;  // non-descendant module
  Eigen::MatrixXd cross_z;      // d2 E~_i / dz_i dz_A, dim(i) x dim(A)
  Eigen::MatrixXd cross_theta;  // d2 E~_i / dz_i dtheta_A, dim(i) x |theta_A|
  std::vector<CoordId> theta;   // theta_A columns
  double max_z = 0.0;
  double max_theta = 0.0;
  double tolerance = 1e-10;
  bool pass = true;
};

// Throws QueryError("pair error: ...") unless i is a non-descendant of a.
LapReport lap_check(const Model& m, int a, int i, const Point& p, double tol = 1e-10);

// All ordered pairs (A, i) with i a non-descendant of A, A-major.
std::vector<std::pair<int, int>> lap_pairs(const Model& m);

struct LapWeights {
  double lambda = 1.0;  // state block
  double mu = 1.0;      // parameter block
  std::map<std::pair<int, int>, std::pair<double, double>> per_pair;  // (A, i) -> (lambda, mu)

  std::pair<double, double> at(int a, int i) const;
};

// Mean over samples of sum over pairs of lambda*|cross_z|_F^2 + mu*|cross_theta|_F^2.
double lap_penalty(const Model& m, const std::vector<Point>& samples, const LapWeights& w = {});

// ---- ICM -------------------------------------------------------------------------

struct IcmReport {
  int node = 0;
  std::vector<CoordId> theta_pa;  // parameters of the parents' modules (global excluded)
  std::vector<CoordId> theta_i;
  Eigen::MatrixXd first;              // dG_i/dtheta_PA, dim(i) x |theta_PA|
  std::vector<Eigen::MatrixXd> mixed;  // per component of G_i: d2G/dtheta_PA dtheta_i
  double max_first = 0.0;
  double max_mixed = 0.0;
  double tolerance = 1e-10;
  bool pass_first = true;
  bool pass_mixed = true;
  bool pass = true;
};

// G_i is the z_i-gradient of node i's effective energy (local, own exogenous and global
// terms) with every state frozen at p.
IcmReport icm_check(const Model& m, int i, const Point& p, double tol = 1e-10);

struct IcmWeights {
  double alpha = 1.0;
  double beta = 1.0;
  std::map<int, std::pair<double, double>> per_node;

  std::pair<double, double> at(int i) const;
};

double icm_penalty(const Model& m, const std::vector<Point>& samples, const IcmWeights& w = {});

// ---- metric and susceptibility ---------------------------------------------------

// Hessian of obj over the free z coordinates of eq (other free coordinates re-minimized
// through the Schur complement). Throws SolverError when it is not positive definite.
Eigen::MatrixXd causal_metric(const Objective& obj, const Equilibrium& eq);
// Effective metric on a subset of the free z coordinates.
Eigen::MatrixXd causal_metric(const Objective& obj, const Equilibrium& eq, const std::vector<CoordId>& keep,
                              SchurMode mode = SchurMode::Minimize);

struct Susceptibility {
  std::vector<CoordId> free;  // rows, the equilibrium's free coordinates
  Eigen::VectorXd response;   // dz*/dw
  bool structural = false;    // solved with the non-descendant block pinned to zero
};

// Implicit-function response of the equilibrium's free coordinates to w (u, theta, or a
// clamped z). Throws QueryError for a free w, SolverError for a singular free Hessian.
Susceptibility susceptibility(const Model& m, const Objective& obj, const Equilibrium& eq, CoordId w);

// ---- gauge and probes ------------------------------------------------------------

// E'_t(w) = a_t E_t(J^-1 w) + b_t for every term t, with z = J^-1 w. Scales and offsets
// are keyed by term label; missing labels mean a = 1, b = 0. An empty J is the identity.
struct GaugeTransform {
  std::map<std::string, double> scale;
  std::map<std::string, double> offset;
  Eigen::MatrixXd J;
};

class GaugedModel {
 public:
  // Throws QueryError for a non-positive scale, unknown label, or |det J| <= 1e-12.
  GaugedModel(const Model& m, GaugeTransform g);

  const Model& model() const { return m_; }
  const GaugeTransform& gauge() const { return g_; }
  const Eigen::MatrixXd& J() const { return J_; }
  const Eigen::MatrixXd& J_inverse() const { return Jinv_; }
  // Point with the z part mapped back to the original chart.
  Point pull_back(const Point& w) const;

 private:
  const Model& m_;
  GaugeTransform g_;
  Eigen::MatrixXd J_, Jinv_;
};

enum class ProbeHead { E, dE, gradE, deltaE, Hess };
const char* head_name(ProbeHead h);
std::optional<ProbeHead> parse_head(const std::string& name);

struct ProbeReport {
  ProbeHead head = ProbeHead::E;
  std::vector<std::string> modules;  // term labels
  // values[point][module]: flattened numeric readout.
  std::vector<std::vector<Eigen::VectorXd>> values;
};

// Probes at the numeric points `points` (z part in the probed chart). deltaE needs base.
ProbeReport probe(const GaugedModel& g, ProbeHead head, const std::vector<Point>& points,
                  const std::optional<Point>& base = {});
ProbeReport probe(const Model& m, ProbeHead head, const std::vector<Point>& points,
                  const std::optional<Point>& base = {});

struct GaugeCheck {
  ProbeHead head = ProbeHead::E;
  double max_difference = 0.0;
  bool preserved = true;
};

std::vector<GaugeCheck> gauge_preserved(const Model& m, const GaugeTransform& g, const std::vector<ProbeHead>& heads,
                                        const std::vector<Point>& points, const std::optional<Point>& base = {},
                                        double tol = 1e-10);

}  // namespace escm
