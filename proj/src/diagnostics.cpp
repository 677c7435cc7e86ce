#include "escm/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace escm {

namespace {

double max_abs(const Eigen::MatrixXd& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

Objective effective_objective(const Model& m, int i) {
  std::vector<std::string> labels{"local:" + m.endo_name(i), "global"};
  for (int k : m.exogenous_of(i)) labels.push_back("exo:" + m.exo_name(k));
  return Objective::subset(m, labels);
}

}  // namespace

// ---- LAP ---------------------------------------------------------------------------

LapReport lap_check(const Model& m, int a, int i, const Point& p, double tol) {
  const PairEnergy pair(m, a, i, p);
  LapReport r;
  r.a = a;
  r.i = i;
  r.tolerance = tol;
  r.theta = m.module_params(a);
  r.cross_z = pair.cross_zz();
  r.cross_theta = pair.cross_ztheta(r.theta);
  r.max_z = max_abs(r.cross_z);
  r.max_theta = max_abs(r.cross_theta);
  r.pass = r.max_z <= tol && r.max_theta <= tol;
  return r;
}

std::vector<std::pair<int, int>> lap_pairs(const Model& m) {
  std::vector<std::pair<int, int>> out;
  for (int a = 0; a < m.num_endogenous(); ++a) {
    const auto nd = m.nondescendants(a);
    for (int i = 0; i < m.num_endogenous(); ++i) {
      if (i != a && nd[std::size_t(i)]) out.emplace_back(a, i);
    }
  }
  return out;
}

std::pair<double, double> LapWeights::at(int a, int i) const {
  auto it = per_pair.find({a, i});
  return it == per_pair.end() ? std::make_pair(lambda, mu) : it->second;
}

double lap_penalty(const Model& m, const std::vector<Point>& samples, const LapWeights& w) {
  if (samples.empty()) throw QueryError("lap penalty needs at least one sample");
  const auto pairs = lap_pairs(m);
  double total = 0.0;
  for (const Point& p : samples) {
    for (const auto& [a, i] : pairs) {
      const auto [lambda, mu] = w.at(a, i);
      if (lambda == 0.0 && mu == 0.0) continue;
      const LapReport r = lap_check(m, a, i, p);
      total += lambda * r.cross_z.squaredNorm() + mu * r.cross_theta.squaredNorm();
    }
  }
  return total / double(samples.size());
}

// ---- ICM ---------------------------------------------------------------------------

IcmReport icm_check(const Model& m, int i, const Point& p, double tol) {
  IcmReport r;
  r.node = i;
  r.tolerance = tol;
  std::set<CoordId> pa;
  for (int q : m.parents(i)) {
    for (CoordId c : m.module_params(q)) {
      if (m.param_owner(c)) pa.insert(c);
    }
  }
  r.theta_pa.assign(pa.begin(), pa.end());
  for (CoordId c : m.module_params(i)) {
    if (m.param_owner(c)) r.theta_i.push_back(c);
  }
  const Eigen::Index np = Eigen::Index(r.theta_pa.size()), ni = Eigen::Index(r.theta_i.size());
  // A parameter shared by a parent module and module i appears once in the sweep.
  std::set<CoordId> all(pa.begin(), pa.end());
  all.insert(r.theta_i.begin(), r.theta_i.end());
  const std::vector<CoordId> coords(all.begin(), all.end());
  auto slot = [&](CoordId c) { return Eigen::Index(std::lower_bound(coords.begin(), coords.end(), c) - coords.begin()); };

  const Objective obj = effective_objective(m, i);
  const auto zi = m.z_coords(i);
  r.first = Eigen::MatrixXd::Zero(Eigen::Index(zi.size()), np);
  for (std::size_t k = 0; k < zi.size(); ++k) {
    const Derivatives d = differentiate_along(obj, p, zi[k], coords);
    Eigen::MatrixXd mixed(np, ni);
    for (Eigen::Index a = 0; a < np; ++a) {
      r.first(Eigen::Index(k), a) = d.grad[slot(r.theta_pa[std::size_t(a)])];
      for (Eigen::Index b = 0; b < ni; ++b) mixed(a, b) = d.hess(slot(r.theta_pa[std::size_t(a)]), slot(r.theta_i[std::size_t(b)]));
    }
    r.mixed.push_back(mixed);
    r.max_mixed = std::max(r.max_mixed, max_abs(r.mixed.back()));
  }
  r.max_first = max_abs(r.first);
  r.pass_first = r.max_first <= tol;
  r.pass_mixed = r.max_mixed <= tol;
  r.pass = r.pass_first && r.pass_mixed;
  return r;
}

std::pair<double, double> IcmWeights::at(int i) const {
  auto it = per_node.find(i);
  return it == per_node.end() ? std::make_pair(alpha, beta) : it->second;
}

double icm_penalty(const Model& m, const std::vector<Point>& samples, const IcmWeights& w) {
  if (samples.empty()) throw QueryError("icm penalty needs at least one sample");
  double total = 0.0;
  for (const Point& p : samples) {
    for (int i = 0; i < m.num_endogenous(); ++i) {
      const auto [alpha, beta] = w.at(i);
      if (alpha == 0.0 && beta == 0.0) continue;
      const IcmReport r = icm_check(m, i, p);
      double mixed = 0.0;
      for (const auto& s : r.mixed) mixed += s.squaredNorm();
      total += alpha * r.first.squaredNorm() + beta * mixed;
    }
  }
  return total / double(samples.size());
}

// ---- metric and susceptibility -----------------------------------------------------

Eigen::MatrixXd causal_metric(const Objective& obj, const Equilibrium& eq, const std::vector<CoordId>& keep,
                              SchurMode mode) {
  const int nz = eq.point.nz;
  std::vector<int> keep_idx, z_idx;
  for (std::size_t k = 0; k < eq.free.size(); ++k) {
    if (eq.free[k] < nz) z_idx.push_back(int(k));
  }
  for (CoordId c : keep) {
    auto it = std::find(eq.free.begin(), eq.free.end(), c);
    if (it == eq.free.end() || c >= nz) throw QueryError("metric subset must name free z coordinates");
    keep_idx.push_back(int(it - eq.free.begin()));
  }
  const FreeHessian fh = free_hessian(obj, eq.point, eq.free);
  // Non-z free coordinates are always re-minimized; `mode` governs the dropped z ones.
  Eigen::MatrixXd Hz = schur_effective_hessian(fh.H, z_idx, SchurMode::Minimize);
  std::vector<int> sub;
  for (int k : keep_idx) sub.push_back(int(std::find(z_idx.begin(), z_idx.end(), k) - z_idx.begin()));
  Eigen::MatrixXd G = schur_effective_hessian(Hz, sub, mode);
  if (G.size() > 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(G);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G, Eigen::EigenvaluesOnly);
    if (llt.info() != Eigen::Success || !(eig.eigenvalues().minCoeff() > 0.0)) {
      throw SolverError("Hessian at the equilibrium is not positive definite (saddle or flat direction); no metric");
    }
  }
  return G;
}

Eigen::MatrixXd causal_metric(const Objective& obj, const Equilibrium& eq) {
  std::vector<CoordId> z;
  for (CoordId c : eq.free) {
    if (c < eq.point.nz) z.push_back(c);
  }
  return causal_metric(obj, eq, z, SchurMode::Minimize);
}

Susceptibility susceptibility(const Model& m, const Objective& obj, const Equilibrium& eq, CoordId w) {
  if (w < 0 || w >= m.ncoords()) throw QueryError("susceptibility target out of range");
  if (std::find(eq.free.begin(), eq.free.end(), w) != eq.free.end()) {
    throw QueryError("susceptibility target " + m.coord_name(w) + " is a free coordinate");
  }
  Susceptibility s;
  s.free = eq.free;
  std::vector<CoordId> coords = eq.free;
  coords.push_back(w);
  const Derivatives d = differentiate(obj, eq.point, coords);
  const Eigen::Index n = Eigen::Index(eq.free.size());
  const Eigen::MatrixXd H = d.hess.topLeftCorner(n, n);
  const Eigen::VectorXd b = d.hess.col(n).head(n);
  if (n == 0) return s;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(H);
  if (!lu.isInvertible()) throw SolverError("free Hessian is singular; the equilibrium map is not differentiable here");

  // Module owning w, for the structural attempt.
  std::optional<int> owner;
  if (m.is_z(w)) {
    owner = m.endo_of(w);
  } else if (m.is_u(w)) {
    owner = m.exo_owner(m.exo_of_coord(w));
  } else {
    owner = m.param_owner(w);
  }
  if (owner) {
    const auto nd = m.nondescendants(*owner);
    std::vector<int> rest;
    for (Eigen::Index k = 0; k < n; ++k) {
      const CoordId c = eq.free[std::size_t(k)];
      if (!(m.is_z(c) && nd[std::size_t(m.endo_of(c))])) rest.push_back(int(k));
    }
    if (Eigen::Index(rest.size()) < n) {
      Eigen::MatrixXd Hr(Eigen::Index(rest.size()), Eigen::Index(rest.size()));
      Eigen::VectorXd br(Eigen::Index(rest.size()));
      for (std::size_t a = 0; a < rest.size(); ++a) {
        br[Eigen::Index(a)] = b[rest[a]];
        for (std::size_t c = 0; c < rest.size(); ++c) Hr(Eigen::Index(a), Eigen::Index(c)) = H(rest[a], rest[c]);
      }
      Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
      if (!rest.empty()) {
        Eigen::FullPivLU<Eigen::MatrixXd> lr(Hr);
        if (lr.isInvertible()) {
          const Eigen::VectorXd xr = lr.solve(-br);
          for (std::size_t a = 0; a < rest.size(); ++a) x[rest[a]] = xr[Eigen::Index(a)];
        }
      }
      const double scale = std::max({1.0, b.cwiseAbs().maxCoeff(), (H.cwiseAbs() * x.cwiseAbs()).maxCoeff()});
      if ((H * x + b).cwiseAbs().maxCoeff() <= 1e-12 * scale) {
        s.response = x;
        s.structural = true;
        return s;
      }
    }
  }
  s.response = lu.solve(-b);
  return s;
}

// ---- gauge and probes --------------------------------------------------------------

GaugedModel::GaugedModel(const Model& m, GaugeTransform g) : m_(m), g_(std::move(g)) {
  std::set<std::string> labels;
  for (const auto& t : m.terms()) labels.insert(t.owner.label());
  for (const auto& [l, a] : g_.scale) {
    if (!labels.count(l)) throw QueryError("gauge names unknown module '" + l + "'");
    if (!(a > 0.0) || !std::isfinite(a)) throw QueryError("gauge scale for '" + l + "' must be positive");
  }
  for (const auto& [l, b] : g_.offset) {
    if (!labels.count(l)) throw QueryError("gauge names unknown module '" + l + "'");
    if (!std::isfinite(b)) throw QueryError("gauge offset for '" + l + "' is not finite");
  }
  if (g_.J.size() == 0) {
    J_ = Eigen::MatrixXd::Identity(m.nz(), m.nz());
  } else {
    if (g_.J.rows() != m.nz() || g_.J.cols() != m.nz()) throw QueryError("gauge map J must be nz x nz");
    J_ = g_.J;
  }
  if (!(std::abs(J_.determinant()) > 1e-12)) throw QueryError("gauge map J is singular (|det J| <= 1e-12)");
  Jinv_ = J_.fullPivLu().inverse();
}

Point GaugedModel::pull_back(const Point& w) const {
  Point z = w;
  z.z() = Jinv_ * w.z();
  return z;
}

const char* head_name(ProbeHead h) {
  switch (h) {
    case ProbeHead::E: return "H_E";
    case ProbeHead::dE: return "H_dE";
    case ProbeHead::gradE: return "H_gradE";
    case ProbeHead::deltaE: return "H_deltaE";
    case ProbeHead::Hess: return "H_Hess";
  }
  return "?";
}

std::optional<ProbeHead> parse_head(const std::string& name) {
  for (ProbeHead h : {ProbeHead::E, ProbeHead::dE, ProbeHead::gradE, ProbeHead::deltaE, ProbeHead::Hess}) {
    if (name == head_name(h)) return h;
  }
  return std::nullopt;
}

namespace {

// Module t's value, w-gradient and w-Hessian at the chart point w.
Derivatives module_at(const GaugedModel& g, const EnergyTerm& t, const Point& w) {
  const std::string label = t.owner.label();
  auto sc = g.gauge().scale.find(label);
  auto of = g.gauge().offset.find(label);
  Objective obj;
  obj.terms.push_back({sc == g.gauge().scale.end() ? 1.0 : sc->second, t.expr, label});
  std::vector<CoordId> z(std::size_t(g.model().nz()));
  for (CoordId c = 0; c < g.model().nz(); ++c) z[std::size_t(c)] = c;
  Derivatives d = differentiate_chart(obj, g.pull_back(w), z, g.J_inverse());
  if (of != g.gauge().offset.end()) d.value += of->second;
  return d;
}

std::vector<int> own_coordinates(const Model& m, const TermOwner& o) {
  std::vector<int> out;
  if (o.kind == TermOwner::Kind::Local) {
    for (CoordId c : m.z_coords(m.endo_index(o.name))) out.push_back(c);
  } else if (o.kind == TermOwner::Kind::Global) {
    for (CoordId c = 0; c < m.nz(); ++c) out.push_back(c);
  }
  return out;
}

}  // namespace

ProbeReport probe(const GaugedModel& g, ProbeHead head, const std::vector<Point>& points, const std::optional<Point>& base) {
  const Model& m = g.model();
  if (head == ProbeHead::deltaE && !base) throw QueryError("H_deltaE needs a base point z0");
  ProbeReport r;
  r.head = head;
  for (const auto& t : m.terms()) r.modules.push_back(t.owner.label());
  for (const Point& w : points) {
    if (w.x.size() != m.ncoords()) throw QueryError("probe point has the wrong number of coordinates");
    std::vector<Eigen::VectorXd> row;
    for (const auto& t : m.terms()) {
      const Derivatives d = module_at(g, t, w);
      Eigen::VectorXd v;
      switch (head) {
        case ProbeHead::E: v = Eigen::VectorXd::Constant(1, d.value); break;
        case ProbeHead::dE: {
          const auto own = own_coordinates(m, t.owner);
          v.resize(Eigen::Index(own.size()));
          for (std::size_t k = 0; k < own.size(); ++k) v[Eigen::Index(k)] = d.grad[own[k]];
          break;
        }
        case ProbeHead::gradE: v = d.grad; break;
        case ProbeHead::deltaE:
          v = Eigen::VectorXd::Constant(1, d.value - module_at(g, t, *base).value);
          break;
        case ProbeHead::Hess: v = d.hess.reshaped(); break;
      }
      row.push_back(std::move(v));
    }
    r.values.push_back(std::move(row));
  }
  return r;
}

ProbeReport probe(const Model& m, ProbeHead head, const std::vector<Point>& points, const std::optional<Point>& base) {
  return probe(GaugedModel(m, {}), head, points, base);
}

std::vector<GaugeCheck> gauge_preserved(const Model& m, const GaugeTransform& g, const std::vector<ProbeHead>& heads,
                                        const std::vector<Point>& points, const std::optional<Point>& base, double tol) {
  const GaugedModel plain(m, {});
  const GaugedModel gauged(m, g);
  std::vector<GaugeCheck> out;
  for (ProbeHead h : heads) {
    const ProbeReport a = probe(plain, h, points, base);
    const ProbeReport b = probe(gauged, h, points, base);
    GaugeCheck c;
    c.head = h;
    for (std::size_t p = 0; p < a.values.size(); ++p) {
      for (std::size_t t = 0; t < a.values[p].size(); ++t) {
        c.max_difference = std::max(c.max_difference, max_abs(a.values[p][t] - b.values[p][t]));
      }
    }
    c.preserved = c.max_difference <= tol;
    out.push_back(c);
  }
  return out;
}

}  // namespace escm
