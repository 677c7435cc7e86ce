#include "escm/solver.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "escm/reduction.hpp"

namespace escm {

namespace {

double max_abs(const Eigen::VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

// Energy change below this is indistinguishable from rounding in the sum of terms.
double slack(double e) { return 8.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(e)); }

Point starting_point(const Model& m, const ClampSet& clamps, const std::vector<CoordId>& free, const SolverConfig& cfg) {
  Point x = cfg.start ? *cfg.start : Point(m);
  if (cfg.init == InitMode::Given && !cfg.start) throw SolverError("init 'given' requires a starting point");
  if (cfg.init == InitMode::Zeros) {
    for (CoordId c : free) x[c] = 0.0;
  }
  for (const auto& [c, v] : clamps) x[c] = v;
  if (cfg.init == InitMode::ForwardScm) {
    try {
      x = forward_scm_point(m, x);
    } catch (const Error&) {
      x.z().setZero();  // outside the separable class: fall back to zeros
    }
    for (const auto& [c, v] : clamps) x[c] = v;
  }
  return x;
}

struct Trial {
  Point x;
  double energy = 0.0;
  Derivatives d;
  bool ok = false;
};

Trial try_point(const Objective& obj, const Point& x, const std::vector<CoordId>& free) {
  Trial t;
  t.x = x;
  try {
    t.d = differentiate(obj, x, free);
    t.energy = t.d.value;
    t.ok = std::isfinite(t.energy);
  } catch (const DomainError&) {
    t.ok = false;
  }
  return t;
}

}  // namespace

FreeHessian free_hessian(const Objective& obj, const Point& p, const std::vector<CoordId>& free) {
  FreeHessian f;
  f.H = differentiate(obj, p, free).hess;
  if (free.empty()) return f;
  Eigen::LLT<Eigen::MatrixXd> llt(f.H);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(f.H, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd ev = eig.eigenvalues();
  f.pd = llt.info() == Eigen::Success && ev.minCoeff() > 0.0;
  const double lo = ev.cwiseAbs().minCoeff();
  const double hi = ev.cwiseAbs().maxCoeff();
  f.condition_number = lo == 0.0 ? std::numeric_limits<double>::infinity() : hi / lo;
  return f;
}

Equilibrium solve(const Model& m, const Objective& obj, const ClampSet& clamps, const std::vector<CoordId>& free,
                  const SolverConfig& cfg) {
  if (!(cfg.tol_grad > 0.0)) throw SolverError("tol_grad must be positive");
  if (cfg.max_iter < 1) throw SolverError("max_iter must be at least 1");
  std::set<CoordId> seen;
  for (CoordId c : free) {
    if (c < 0 || c >= m.ncoords()) throw QueryError("free coordinate out of range: " + std::to_string(c));
    if (clamps.count(c)) throw QueryError("coordinate " + m.coord_name(c) + " is both free and clamped");
    if (!seen.insert(c).second) throw QueryError("coordinate " + m.coord_name(c) + " listed twice as free");
  }
  for (const auto& [c, v] : clamps) {
    if (c < 0 || c >= m.ncoords()) throw QueryError("clamped coordinate out of range: " + std::to_string(c));
    if (!std::isfinite(v)) throw QueryError("clamp value for " + m.coord_name(c) + " is not finite");
  }

  Equilibrium eq;
  eq.free = free;
  eq.clamps = clamps;
  Trial cur = try_point(obj, starting_point(m, clamps, free, cfg), free);
  if (!cur.ok) {
    // Surface the domain error itself.
    differentiate(obj, cur.x, free);
    throw SolverError("energy is not finite at the starting point");
  }
  double residual = max_abs(cur.d.grad);
  eq.trace.push_back({cur.energy, residual, 0.0});
  const Eigen::Index n = Eigen::Index(free.size());

  int it = 0;
  while (residual > cfg.tol_grad) {
    if (it >= cfg.max_iter) {
      std::ostringstream os;
      os << "no convergence after " << it << " iterations (residual " << residual << ", energy " << cur.energy << ")";
      throw SolverError(os.str());
    }
    ++it;
    bool accepted = false;
    // Newton with Levenberg shift: lambda = 0 first, then lambda0 * growth^k.
    for (double lambda = 0.0; lambda <= cfg.lambda_max;
         lambda = lambda == 0.0 ? cfg.levenberg_lambda0 : lambda * cfg.lambda_growth) {
      const Eigen::MatrixXd A = cur.d.hess + lambda * Eigen::MatrixXd::Identity(n, n);
      Eigen::LLT<Eigen::MatrixXd> llt(A);
      if (llt.info() != Eigen::Success) continue;
      const Eigen::VectorXd step = llt.solve(-cur.d.grad);
      if (!step.allFinite()) continue;
      Point x = cur.x;
      for (Eigen::Index k = 0; k < n; ++k) x[free[std::size_t(k)]] += step[k];
      Trial t = try_point(obj, x, free);
      if (!t.ok) continue;
      const double r = max_abs(t.d.grad);
      if (t.energy < cur.energy || (t.energy <= cur.energy + slack(cur.energy) && r < residual)) {
        cur = std::move(t);
        residual = r;
        eq.trace.push_back({cur.energy, residual, lambda});
        accepted = true;
        break;
      }
    }
    if (accepted) continue;

    // Steepest descent with Armijo backtracking.
    const double g2 = cur.d.grad.squaredNorm();
    for (double step = 1.0; step > 1e-20; step *= 0.5) {
      Point x = cur.x;
      for (Eigen::Index k = 0; k < n; ++k) x[free[std::size_t(k)]] -= step * cur.d.grad[k];
      Trial t = try_point(obj, x, free);
      if (t.ok && t.energy <= cur.energy - 1e-4 * step * g2) {
        cur = std::move(t);
        residual = max_abs(cur.d.grad);
        eq.trace.push_back({cur.energy, residual, -1.0});
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      std::ostringstream os;
      os << "singular or non-descending system at iteration " << it << " (residual " << residual
         << "); neither a regularized Newton step up to lambda " << cfg.lambda_max
         << " nor a descent step decreased the energy";
      throw SolverError(os.str());
    }
  }

  eq.point = cur.x;
  eq.energy = cur.energy;
  eq.residual = residual;
  eq.iterations = it;
  const FreeHessian fh = free_hessian(obj, eq.point, free);
  eq.hessian_pd = fh.pd;
  eq.condition_number = fh.condition_number;
  return eq;
}

Eigen::MatrixXd schur_complement(const Eigen::MatrixXd& A, const std::vector<int>& keep, SchurMode mode) {
  const int n = int(A.rows());
  if (A.cols() != n) throw QueryError("Schur complement needs a square matrix");
  std::vector<bool> kept(std::size_t(n), false);
  for (int k : keep) {
    if (k < 0 || k >= n) throw QueryError("Schur index out of range");
    kept[std::size_t(k)] = true;
  }
  std::vector<int> elim;
  for (int k = 0; k < n; ++k) {
    if (!kept[std::size_t(k)]) elim.push_back(k);
  }
  const Eigen::Index f = Eigen::Index(keep.size()), c = Eigen::Index(elim.size());
  Eigen::MatrixXd Aff(f, f), Afc(f, c), Acf(c, f), Acc(c, c);
  for (Eigen::Index a = 0; a < f; ++a) {
    for (Eigen::Index b = 0; b < f; ++b) Aff(a, b) = A(keep[std::size_t(a)], keep[std::size_t(b)]);
    for (Eigen::Index b = 0; b < c; ++b) {
      Afc(a, b) = A(keep[std::size_t(a)], elim[std::size_t(b)]);
      Acf(b, a) = A(elim[std::size_t(b)], keep[std::size_t(a)]);
    }
  }
  for (Eigen::Index a = 0; a < c; ++a) {
    for (Eigen::Index b = 0; b < c; ++b) Acc(a, b) = A(elim[std::size_t(a)], elim[std::size_t(b)]);
  }
  if (mode == SchurMode::Clamp || c == 0) return Aff;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(Acc);
  if (!lu.isInvertible()) throw SolverError("eliminated block is singular");
  return Aff - Afc * lu.solve(Acf);
}

Eigen::MatrixXd schur_effective_hessian(const Eigen::MatrixXd& H, const std::vector<int>& keep, SchurMode mode) {
  const Eigen::MatrixXd S = schur_complement(H, keep, mode);
  return 0.5 * (S + S.transpose());
}

}  // namespace escm
