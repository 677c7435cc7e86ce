#include "escm/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "parallel.hpp"

namespace escm {

namespace {

Objective single_term(std::shared_ptr<const Expr> e, std::string label) {
  Objective o;
  o.terms.push_back({1.0, std::move(e), std::move(label)});
  return o;
}

std::vector<CoordId> all_z(const Model& m) {
  std::vector<CoordId> z(std::size_t(m.nz()));
  for (CoordId c = 0; c < m.nz(); ++c) z[std::size_t(c)] = c;
  return z;
}

double max_abs(const Eigen::MatrixXd& a) { return a.size() ? a.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace

std::string describe(const DynSurgery& s) {
  std::ostringstream os;
  os.precision(17);
  if (const auto* h = std::get_if<DynHardSurgery>(&s)) {
    os << "do(" << h->target << " := ";
    for (Eigen::Index k = 0; k < h->value.size(); ++k) os << (k ? "," : "") << h->value[k];
    os << ", gain=" << h->gain << ")";
  } else {
    const auto& soft = std::get<DynSoftSurgery>(s);
    os << "soft(" << soft.target << ", lambda=" << soft.lambda;
    for (const auto& r : soft.replacement) os << ", " << r;
    os << ")";
  }
  return os.str();
}

DynamicSystem::DynamicSystem(const Model& m, bool gradient, Objective obj)
    : m_(&m), gradient_(gradient), obj_(std::move(obj)), rows_(std::size_t(m.nz())) {}

DynamicSystem DynamicSystem::declared(const Model& m) {
  if (!m.has_dynamics()) throw QueryError("model declares no dynamics");
  DynamicSystem s(m, false, {});
  for (CoordId z = 0; z < m.nz(); ++z) {
    const Expr* f = m.field(z);
    if (!f) throw QueryError("no field component for " + m.coord_name(z));
    // Non-owning alias: the expression lives as long as the model.
    s.declared_.push_back(single_term(std::shared_ptr<const Expr>(std::shared_ptr<const Expr>(), f), m.coord_name(z)));
  }
  return s;
}

DynamicSystem DynamicSystem::from_fields(const Model& m, const std::vector<std::string>& exprs) {
  if (exprs.size() != std::size_t(m.nz())) throw QueryError("need one field expression per z coordinate");
  DynamicSystem s(m, false, {});
  for (CoordId z = 0; z < m.nz(); ++z) {
    s.declared_.push_back(single_term(std::make_shared<Expr>(m.parse_expr(exprs[std::size_t(z)])), m.coord_name(z)));
  }
  return s;
}

DynamicSystem DynamicSystem::gradient_flow(const Model& m, Objective obj) { return DynamicSystem(m, true, std::move(obj)); }

DynamicSystem DynamicSystem::with(const std::vector<DynSurgery>& surgeries) const {
  DynamicSystem out = *this;
  std::set<int> seen;
  for (const auto& s : surgeries) {
    const std::string& name = std::visit([](const auto& x) -> const std::string& { return x.target; }, s);
    const auto endo = m_->find_endo(name);
    if (!endo) throw QueryError("unknown surgery target '" + name + "'");
    if (!seen.insert(*endo).second) throw QueryError("duplicate surgery target '" + name + "'");
    const auto zc = m_->z_coords(*endo);
    if (const auto* h = std::get_if<DynHardSurgery>(&s)) {
      if (h->value.size() != Eigen::Index(zc.size())) throw QueryError("hard value for " + name + " has the wrong dimension");
      if (!(h->gain > 0.0) || !std::isfinite(h->gain)) throw QueryError("feedback gain must be positive");
      for (std::size_t k = 0; k < zc.size(); ++k) {
        Row& r = out.rows_[std::size_t(zc[k])];
        r = Row{};
        r.own = 0.0;
        r.feedback = true;
        r.gain = h->gain;
        r.value = h->value[Eigen::Index(k)];
      }
    } else {
      const auto& soft = std::get<DynSoftSurgery>(s);
      if (!(soft.lambda >= 0.0 && soft.lambda <= 1.0)) throw QueryError("lambda must lie in [0, 1]");
      if (soft.replacement.size() != zc.size()) throw QueryError("soft replacement for " + name + " has the wrong dimension");
      for (std::size_t k = 0; k < zc.size(); ++k) {
        Row& r = out.rows_[std::size_t(zc[k])];
        r = Row{};
        r.own = 1.0 - soft.lambda;
        r.lambda = soft.lambda;
        r.replacement = single_term(m_->parse_field_expr(*endo, soft.replacement[k]), "soft:" + name);
      }
    }
  }
  return out;
}

Derivatives DynamicSystem::component(CoordId z, const Point& p, const std::vector<CoordId>& coords) const {
  const Row& r = rows_.at(std::size_t(z));
  const Eigen::Index n = Eigen::Index(coords.size());
  Derivatives out{0.0, Eigen::VectorXd::Zero(n), Eigen::MatrixXd::Zero(n, n)};
  if (r.feedback) {
    out.value = r.gain * (r.value - p[z]);
    for (Eigen::Index k = 0; k < n; ++k) {
      if (coords[std::size_t(k)] == z) out.grad[k] = -r.gain;
    }
    return out;
  }
  if (r.own != 0.0) {
    Derivatives d;
    if (gradient_) {
      d = differentiate_along(obj_, p, z, coords);
      d.value = -d.value;
      d.grad = -d.grad;
      d.hess = -d.hess;
    } else {
      d = differentiate(declared_[std::size_t(z)], p, coords);
    }
    out.value += r.own * d.value;
    out.grad += r.own * d.grad;
    out.hess += r.own * d.hess;
  }
  if (r.lambda != 0.0) {
    const Derivatives d = differentiate(r.replacement, p, coords);
    out.value += r.lambda * d.value;
    out.grad += r.lambda * d.grad;
    out.hess += r.lambda * d.hess;
  }
  return out;
}

Eigen::VectorXd DynamicSystem::field(const Point& p) const {
  const int nz = m_->nz();
  Eigen::VectorXd f = Eigen::VectorXd::Zero(nz);
  Eigen::VectorXd grad;
  if (gradient_) grad = differentiate(obj_, p, all_z(*m_)).grad;
  for (CoordId z = 0; z < nz; ++z) {
    const Row& r = rows_[std::size_t(z)];
    if (r.feedback) {
      f[z] = r.gain * (r.value - p[z]);
      continue;
    }
    if (r.own != 0.0) f[z] += r.own * (gradient_ ? -grad[z] : declared_[std::size_t(z)].value(p));
    if (r.lambda != 0.0) f[z] += r.lambda * r.replacement.value(p);
  }
  return f;
}

Eigen::MatrixXd DynamicSystem::jacobian(const Point& p, const std::vector<CoordId>& coords) const {
  Eigen::MatrixXd J(m_->nz(), Eigen::Index(coords.size()));
  for (CoordId z = 0; z < m_->nz(); ++z) J.row(z) = component(z, p, coords).grad.transpose();
  return J;
}

std::vector<CoordId> DynamicSystem::module_params(int endo) const {
  if (gradient_) return m_->module_params(endo, false);
  std::set<CoordId> out;
  const auto& params = m_->parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].module == m_->endo_name(endo)) out.insert(m_->nz() + m_->nu() + CoordId(k));
  }
  for (CoordId z : m_->z_coords(endo)) {
    for (const auto& t : declared_[std::size_t(z)].terms) {
      for (CoordId c : t.expr->symbols()) {
        if (m_->is_theta(c)) out.insert(c);
      }
    }
  }
  return {out.begin(), out.end()};
}

// ---- integration -------------------------------------------------------------------

Trajectory integrate(const DynamicSystem& base, const Point& start, const IntegrateOptions& opt,
                     const std::vector<DynSurgery>& surgeries) {
  if (!(opt.dt > 0.0) || !std::isfinite(opt.dt)) throw QueryError("dt must be positive");
  if (!(opt.t_end >= 0.0) || !std::isfinite(opt.t_end)) throw QueryError("t_end must be non-negative");
  if (opt.record_every < 1) throw QueryError("record_every must be at least 1");
  const DynamicSystem sys = base.with(surgeries);
  Trajectory tr;
  for (const auto& s : surgeries) tr.events.push_back({0.0, describe(s)});

  Point p = start;
  auto f = [&](const Eigen::VectorXd& z) {
    p.z() = z;
    return sys.field(p);
  };
  Eigen::VectorXd z = start.z();
  if (!z.allFinite()) throw QueryError("initial state is not finite");
  tr.t.push_back(0.0);
  tr.z.push_back(z);
  const long steps = long(std::ceil(opt.t_end / opt.dt - 1e-9));
  double t = 0.0;
  for (long k = 1; k <= steps; ++k) {
    const double t_next = k == steps ? opt.t_end : double(k) * opt.dt;
    const double h = t_next - t;
    auto blow_up = [&] {
      std::ostringstream os;
      os.precision(17);
      os << "state blew up after t=" << t;
      return BlowUpError(t, os.str());
    };
    Eigen::VectorXd next;
    try {
      const Eigen::VectorXd k1 = f(z);
      const Eigen::VectorXd k2 = f(z + 0.5 * h * k1);
      const Eigen::VectorXd k3 = f(z + 0.5 * h * k2);
      const Eigen::VectorXd k4 = f(z + h * k3);
      next = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    } catch (const DomainError&) {
      throw blow_up();
    }
    if (!next.allFinite()) throw blow_up();
    z = next;
    t = t_next;
    if (k % opt.record_every == 0 || k == steps) {
      tr.t.push_back(t);
      tr.z.push_back(z);
    }
  }
  return tr;
}

std::vector<Trajectory> integrate_many(const DynamicSystem& sys, const std::vector<Point>& starts,
                                       const IntegrateOptions& opt, const std::vector<DynSurgery>& surgeries,
                                       int threads) {
  std::vector<Trajectory> out(starts.size());
  detail::parallel_for(int(starts.size()), threads,
                       [&](int k) { out[std::size_t(k)] = integrate(sys, starts[std::size_t(k)], opt, surgeries); });
  return out;
}

// ---- steady state ------------------------------------------------------------------

SteadyState steady_state(const DynamicSystem& base, const Point& start, const std::vector<DynSurgery>& surgeries,
                         const SteadyStateOptions& opt) {
  const DynamicSystem sys = base.with(surgeries);
  const std::vector<CoordId> z = all_z(sys.model());
  SteadyState out;
  out.point = start;
  Eigen::VectorXd F = sys.field(out.point);
  auto scale = [&] { return std::max(1.0, out.point.z().cwiseAbs().maxCoeff()); };
  for (;;) {
    out.residual = F.size() ? F.cwiseAbs().maxCoeff() : 0.0;
    if (out.residual <= opt.tol * scale()) break;
    if (out.iterations >= opt.max_iter) throw SolverError("steady state: no convergence");
    const Eigen::MatrixXd J = sys.jacobian(out.point, z);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
    if (!lu.isInvertible()) throw SolverError("steady state: singular field Jacobian");
    const Eigen::VectorXd step = lu.solve(-F);
    double t = 1.0;
    bool accepted = false;
    for (int k = 0; k < 40; ++k, t *= 0.5) {
      Point trial = out.point;
      trial.z() += t * step;
      const Eigen::VectorXd Ft = sys.field(trial);
      if (Ft.allFinite() && Ft.norm() < F.norm()) {
        out.point = trial;
        F = Ft;
        accepted = true;
        break;
      }
    }
    ++out.iterations;
    if (!accepted) {
      if (out.residual <= 1e-9 * scale()) break;  // rounding floor
      throw SolverError("steady state: line search failed");
    }
  }
  const Eigen::MatrixXd J = sys.jacobian(out.point, z);
  if (J.size()) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(J, false);
    out.eigenvalues = es.eigenvalues();
    out.stable = (out.eigenvalues.real().array() < 0.0).all();
  } else {
    out.stable = true;
  }
  return out;
}

// ---- dynamic LAP / ICM -------------------------------------------------------------

LapReport dyn_lap_check(const DynamicSystem& sys, int a, int i, const Point& p, double tol,
                        const std::vector<int>& eliminate) {
  const Model& m = sys.model();
  if (a < 0 || i < 0 || a >= m.num_endogenous() || i >= m.num_endogenous()) throw QueryError("pair error: unknown module");
  if (a == i || !m.nondescendants(a)[std::size_t(i)]) {
    throw QueryError("pair error: " + m.endo_name(i) + " is not a non-descendant of " + m.endo_name(a));
  }
  std::vector<bool> gone(std::size_t(m.num_endogenous()), false);
  for (int e : eliminate) {
    if (e < 0 || e >= m.num_endogenous()) throw QueryError("unknown module to eliminate");
    if (e == a || e == i) throw QueryError("cannot eliminate a module of the checked pair");
    gone[std::size_t(e)] = true;
  }
  LapReport r;
  r.a = a;
  r.i = i;
  r.tolerance = tol;
  r.theta = sys.module_params(a);
  const auto zi = m.z_coords(i), za = m.z_coords(a);

  std::vector<CoordId> coords = all_z(m);
  coords.insert(coords.end(), r.theta.begin(), r.theta.end());
  const Eigen::MatrixXd full = sys.jacobian(p, coords);
  const Eigen::Index nz = m.nz(), nt = Eigen::Index(r.theta.size());
  Eigen::MatrixXd Jz = full.leftCols(nz), Jt = full.rightCols(nt);

  // Keep-set indices (over z) and positions of z_i, z_a inside it.
  std::vector<int> keep;
  for (CoordId c = 0; c < nz; ++c) {
    if (!gone[std::size_t(m.endo_of(c))]) keep.push_back(c);
  }
  auto pos = [&](CoordId c) { return int(std::find(keep.begin(), keep.end(), c) - keep.begin()); };
  if (Eigen::Index(keep.size()) < nz) {
    std::vector<int> elim;
    for (CoordId c = 0; c < nz; ++c) {
      if (gone[std::size_t(m.endo_of(c))]) elim.push_back(c);
    }
    Eigen::MatrixXd Jke(keep.size(), elim.size()), Jee(elim.size(), elim.size()), Jet(elim.size(), nt),
        Jkt(keep.size(), nt);
    for (std::size_t x = 0; x < keep.size(); ++x) {
      for (std::size_t y = 0; y < elim.size(); ++y) Jke(Eigen::Index(x), Eigen::Index(y)) = Jz(keep[x], elim[y]);
      Jkt.row(Eigen::Index(x)) = Jt.row(keep[x]);
    }
    for (std::size_t x = 0; x < elim.size(); ++x) {
      for (std::size_t y = 0; y < elim.size(); ++y) Jee(Eigen::Index(x), Eigen::Index(y)) = Jz(elim[x], elim[y]);
      Jet.row(Eigen::Index(x)) = Jt.row(elim[x]);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(Jee);
    if (!lu.isInvertible()) throw SolverError("eliminated field block is singular");
    Jz = schur_complement(Jz, keep, SchurMode::Minimize);
    Jt = Jkt - Jke * lu.solve(Jet);
  }
  const bool reduced = Eigen::Index(keep.size()) < nz;
  r.cross_z.resize(Eigen::Index(zi.size()), Eigen::Index(za.size()));
  r.cross_theta.resize(Eigen::Index(zi.size()), nt);
  for (std::size_t x = 0; x < zi.size(); ++x) {
    const int row = reduced ? pos(zi[x]) : zi[x];
    for (std::size_t y = 0; y < za.size(); ++y) {
      r.cross_z(Eigen::Index(x), Eigen::Index(y)) = Jz(row, reduced ? pos(za[y]) : za[y]);
    }
    r.cross_theta.row(Eigen::Index(x)) = Jt.row(row);
  }
  r.max_z = max_abs(r.cross_z);
  r.max_theta = max_abs(r.cross_theta);
  r.pass = r.max_z <= tol && r.max_theta <= tol;
  return r;
}

double dyn_lap_penalty(const DynamicSystem& sys, const std::vector<Point>& samples, const LapWeights& w) {
  if (samples.empty()) throw QueryError("lap penalty needs at least one sample");
  const auto pairs = lap_pairs(sys.model());
  double total = 0.0;
  for (const Point& p : samples) {
    for (const auto& [a, i] : pairs) {
      const auto [lambda, mu] = w.at(a, i);
      if (lambda == 0.0 && mu == 0.0) continue;
      const LapReport r = dyn_lap_check(sys, a, i, p);
      total += lambda * r.cross_z.squaredNorm() + mu * r.cross_theta.squaredNorm();
    }
  }
  return total / double(samples.size());
}

IcmReport dyn_icm_check(const DynamicSystem& sys, int i, const Point& p, double tol) {
  const Model& m = sys.model();
  if (i < 0 || i >= m.num_endogenous()) throw QueryError("unknown module");
  IcmReport r;
  r.node = i;
  r.tolerance = tol;
  std::set<CoordId> pa;
  for (int q : m.parents(i)) {
    for (CoordId c : sys.module_params(q)) {
      if (m.param_owner(c)) pa.insert(c);
    }
  }
  r.theta_pa.assign(pa.begin(), pa.end());
  for (CoordId c : sys.module_params(i)) {
    if (m.param_owner(c)) r.theta_i.push_back(c);
  }
  std::set<CoordId> all(pa.begin(), pa.end());
  all.insert(r.theta_i.begin(), r.theta_i.end());
  const std::vector<CoordId> coords(all.begin(), all.end());
  auto slot = [&](CoordId c) { return Eigen::Index(std::lower_bound(coords.begin(), coords.end(), c) - coords.begin()); };
  const Eigen::Index np = Eigen::Index(r.theta_pa.size()), ni = Eigen::Index(r.theta_i.size());
  const auto zi = m.z_coords(i);
  r.first = Eigen::MatrixXd::Zero(Eigen::Index(zi.size()), np);
  for (std::size_t k = 0; k < zi.size(); ++k) {
    const Derivatives d = sys.component(zi[k], p, coords);
    Eigen::MatrixXd mixed(np, ni);
    for (Eigen::Index a = 0; a < np; ++a) {
      r.first(Eigen::Index(k), a) = d.grad[slot(r.theta_pa[std::size_t(a)])];
      for (Eigen::Index b = 0; b < ni; ++b) mixed(a, b) = d.hess(slot(r.theta_pa[std::size_t(a)]), slot(r.theta_i[std::size_t(b)]));
    }
    r.mixed.push_back(mixed);
    r.max_mixed = std::max(r.max_mixed, max_abs(mixed));
  }
  r.max_first = max_abs(r.first);
  r.pass_first = r.max_first <= tol;
  r.pass_mixed = r.max_mixed <= tol;
  r.pass = r.pass_first && r.pass_mixed;
  return r;
}

double dyn_icm_penalty(const DynamicSystem& sys, const std::vector<Point>& samples, const IcmWeights& w) {
  if (samples.empty()) throw QueryError("icm penalty needs at least one sample");
  double total = 0.0;
  for (const Point& p : samples) {
    for (int i = 0; i < sys.model().num_endogenous(); ++i) {
      const auto [alpha, beta] = w.at(i);
      if (alpha == 0.0 && beta == 0.0) continue;
      const IcmReport r = dyn_icm_check(sys, i, p);
      double mixed = 0.0;
      for (const auto& s : r.mixed) mixed += s.squaredNorm();
      total += alpha * r.first.squaredNorm() + beta * mixed;
    }
  }
  return total / double(samples.size());
}

}  // namespace escm
