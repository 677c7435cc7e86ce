#pragma once

// Energy evaluation with exact first and second (and selected third) derivatives.
//
// An Objective is a weighted list of expressions. The model's total energy is the
// objective with every term at weight 1; surgeries edit that list (see causal.hpp).
// Derivatives are taken over an explicit list of coordinates; every other coordinate
// is a constant read from the Point.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "escm/model.hpp"

namespace escm {

// Full assignment [z | u | theta] over a model's flat coordinates.
struct Point {
  Eigen::VectorXd x;
  int nz = 0;
  int nu = 0;

  Point() = default;
  // z = 0, u = 0, theta = model defaults.
  explicit Point(const Model& m);

  double operator[](CoordId c) const { return x[c]; }
  double& operator[](CoordId c) { return x[c]; }
  auto z() { return x.head(nz); }
  auto z() const { return x.head(nz); }
  auto u() { return x.segment(nz, nu); }
  auto u() const { return x.segment(nz, nu); }
  auto theta() { return x.tail(x.size() - nz - nu); }
  auto theta() const { return x.tail(x.size() - nz - nu); }
};

struct WeightedTerm {
  double weight = 1.0;
  std::shared_ptr<const Expr> expr;
  std::string label;  // attribution key, e.g. "local:Z1"
};

struct Objective {
  std::vector<WeightedTerm> terms;

  // All model terms at weight 1, labelled by owner.
  static Objective total(const Model& m);
  // Only the terms with the given labels (in model order).
  static Objective subset(const Model& m, const std::vector<std::string>& labels);

  double value(const Point& p) const;
  // True when some term reads coordinate c.
  bool depends_on(CoordId c) const;
};

// Value, gradient and Hessian over a coordinate list (or over chart directions).
struct Derivatives {
  double value = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};

// Exact derivatives of `obj` with respect to coords, other coordinates held at p.
Derivatives differentiate(const Objective& obj, const Point& p, const std::vector<CoordId>& coords);

// Derivatives in chart directions: coordinate coords[k] moves as p[coords[k]] + (M w)_k,
// differentiated in w at w = 0. Gives M^T H M and M^T g without forming H.
Derivatives differentiate_chart(const Objective& obj, const Point& p, const std::vector<CoordId>& coords,
                                const Eigen::MatrixXd& M);

// Derivatives along `dir` of the gradient and Hessian over coords:
// grad(k) = d2E/d(dir)d(c_k), hess(k,l) = d3E/d(dir)d(c_k)d(c_l). value = dE/d(dir).
Derivatives differentiate_along(const Objective& obj, const Point& p, CoordId dir, const std::vector<CoordId>& coords);

struct FirstOrder {
  double value = 0.0;
  Eigen::VectorXd grad_z, grad_u, grad_theta;
};

struct HessianBlocks {
  Eigen::MatrixXd zz, zu, ztheta;
};

struct SecondOrder {
  Eigen::MatrixXd H_zz, H_zu, H_ztheta;
  // Additive contribution of each term label to the three blocks.
  std::map<std::string, HessianBlocks> attribution;
};

FirstOrder eval(const Model& m, const Point& p);
FirstOrder eval(const Model& m, const Objective& obj, const Point& p);
SecondOrder second_order(const Model& m, const Point& p);
SecondOrder second_order(const Model& m, const Objective& obj, const Point& p);

// Effective energy of module i relative to a: E_i + E_{U_i} + E_global, with every
// coordinate outside z_i, z_a (and the parameters) frozen at the given point.
class PairEnergy {
 public:
  // Throws QueryError("pair error: ...") unless i is a non-descendant of a.
  PairEnergy(const Model& m, int a, int i, const Point& p);

  double value(const Eigen::VectorXd& zi, const Eigen::VectorXd& za) const;
  // d2/dz_i dz_a, shape dim(i) x dim(a).
  Eigen::MatrixXd cross_zz() const;
  // d2/dz_i dtheta, shape dim(i) x |thetas|.
  Eigen::MatrixXd cross_ztheta(const std::vector<CoordId>& thetas) const;

  const Objective& objective() const { return obj_; }

 private:
  const Model& m_;
  int a_, i_;
  Point p_;
  Objective obj_;
};

PairEnergy effective_energy_pair(const Model& m, std::string_view a, std::string_view i, const Point& p);

}  // namespace escm
