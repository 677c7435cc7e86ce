#include "escm/energy.hpp"

#include <algorithm>
#include <unordered_map>

namespace escm {

Point::Point(const Model& m) : x(Eigen::VectorXd::Zero(m.ncoords())), nz(m.nz()), nu(m.nu()) {
  theta() = m.default_theta();
}

Objective Objective::total(const Model& m) {
  Objective o;
  for (const auto& t : m.terms()) o.terms.push_back({1.0, t.expr, t.owner.label()});
  return o;
}

Objective Objective::subset(const Model& m, const std::vector<std::string>& labels) {
  Objective o;
  for (const auto& t : m.terms()) {
    const std::string l = t.owner.label();
    if (std::find(labels.begin(), labels.end(), l) != labels.end()) o.terms.push_back({1.0, t.expr, l});
  }
  return o;
}

namespace {

template <class F>
auto guarded(const WeightedTerm& t, F&& f) {
  try {
    return f();
  } catch (const DomainError& e) {
    throw DomainError("term '" + t.label + "': " + e.what());
  }
}

double term_value(const WeightedTerm& t, const Point& p) {
  return guarded(t, [&] { return evaluate_at(*t.expr, [&](CoordId c) { return p[c]; }); });
}

// Positions of the coordinates of interest, for O(1) lookup while binding symbols.
class CoordIndex {
 public:
  explicit CoordIndex(const std::vector<CoordId>& coords) {
    for (std::size_t k = 0; k < coords.size(); ++k) pos_.emplace(coords[k], int(k));
  }
  int find(CoordId c) const {
    auto it = pos_.find(c);
    return it == pos_.end() ? -1 : it->second;
  }

 private:
  std::unordered_map<CoordId, int> pos_;
};

// Adds weight * (value, gradient, Hessian) of one term into `out`. Jets run over only the
// term's own active symbols, then scatter into the global index.
void accumulate(const WeightedTerm& t, const Point& p, const CoordIndex& index, Derivatives& out) {
  const Expr& e = *t.expr;
  std::vector<int> slot_local(e.symbols().size(), -1);
  std::vector<int> local_global;
  for (std::size_t s = 0; s < e.symbols().size(); ++s) {
    const int g = index.find(e.symbols()[s]);
    if (g >= 0) {
      slot_local[s] = int(local_global.size());
      local_global.push_back(g);
    }
  }
  if (local_global.empty()) {
    out.value += t.weight * term_value(t, p);
    return;
  }
  const std::size_t d = local_global.size();
  struct Bind {
    const Expr& e;
    const Point& p;
    const std::vector<int>& slot_local;
    std::size_t d;
    Jet operator()(int slot) const {
      const double v = p[e.symbols()[std::size_t(slot)]];
      const int l = slot_local[std::size_t(slot)];
      return l >= 0 ? Jet::variable(d, std::size_t(l), v) : Jet(d, v);
    }
    Jet constant(double c) const { return Jet(d, c); }
  } bind{e, p, slot_local, d};
  const Jet r = guarded(t, [&] { return evaluate<Jet>(e, bind); });
  out.value += t.weight * r.value();
  for (std::size_t a = 0; a < d; ++a) {
    out.grad[local_global[a]] += t.weight * r.grad(a);
    for (std::size_t b = 0; b < d; ++b) out.hess(local_global[a], local_global[b]) += t.weight * r.hess(a, b);
  }
}

Derivatives zero_derivatives(Eigen::Index n) {
  Derivatives d;
  d.grad = Eigen::VectorXd::Zero(n);
  d.hess = Eigen::MatrixXd::Zero(n, n);
  return d;
}

}  // namespace

double Objective::value(const Point& p) const {
  double v = 0.0;
  for (const auto& t : terms) v += t.weight * term_value(t, p);
  return v;
}

bool Objective::depends_on(CoordId c) const {
  return std::any_of(terms.begin(), terms.end(), [&](const WeightedTerm& t) { return t.expr->references(c); });
}

Derivatives differentiate(const Objective& obj, const Point& p, const std::vector<CoordId>& coords) {
  Derivatives out = zero_derivatives(Eigen::Index(coords.size()));
  const CoordIndex index(coords);
  for (const auto& t : obj.terms) accumulate(t, p, index, out);
  return out;
}

Derivatives differentiate_chart(const Objective& obj, const Point& p, const std::vector<CoordId>& coords,
                                const Eigen::MatrixXd& M) {
  if (M.rows() != Eigen::Index(coords.size())) throw QueryError("chart matrix rows must match the coordinate list");
  const std::size_t d = std::size_t(M.cols());
  Derivatives out = zero_derivatives(M.cols());
  const CoordIndex index(coords);
  for (const auto& t : obj.terms) {
    const Expr& e = *t.expr;
    const bool touched = std::any_of(e.symbols().begin(), e.symbols().end(), [&](CoordId c) { return index.find(c) >= 0; });
    if (!touched) {
      out.value += t.weight * term_value(t, p);
      continue;
    }
    struct Bind {
      const Expr& e;
      const Point& p;
      const CoordIndex& index;
      const Eigen::MatrixXd& M;
      std::size_t d;
      Jet operator()(int slot) const {
        const CoordId c = e.symbols()[std::size_t(slot)];
        Jet j(d, p[c]);
        if (const int k = index.find(c); k >= 0) {
          for (std::size_t w = 0; w < d; ++w) j.grad(w) = M(k, Eigen::Index(w));
        }
        return j;
      }
      Jet constant(double c) const { return Jet(d, c); }
    } bind{e, p, index, M, d};
    const Jet r = guarded(t, [&] { return evaluate<Jet>(e, bind); });
    out.value += t.weight * r.value();
    for (std::size_t a = 0; a < d; ++a) {
      out.grad[Eigen::Index(a)] += t.weight * r.grad(a);
      for (std::size_t b = 0; b < d; ++b) out.hess(Eigen::Index(a), Eigen::Index(b)) += t.weight * r.hess(a, b);
    }
  }
  return out;
}

Derivatives differentiate_along(const Objective& obj, const Point& p, CoordId dir, const std::vector<CoordId>& coords) {
  Derivatives out = zero_derivatives(Eigen::Index(coords.size()));
  const CoordIndex index(coords);
  using T = Dual<Jet>;
  for (const auto& t : obj.terms) {
    const Expr& e = *t.expr;
    if (!e.references(dir)) continue;
    std::vector<int> slot_local(e.symbols().size(), -1);
    std::vector<int> local_global;
    for (std::size_t s = 0; s < e.symbols().size(); ++s) {
      const int g = index.find(e.symbols()[s]);
      if (g >= 0) {
        slot_local[s] = int(local_global.size());
        local_global.push_back(g);
      }
    }
    const std::size_t d = local_global.size();
    struct Bind {
      const Expr& e;
      const Point& p;
      const std::vector<int>& slot_local;
      CoordId dir;
      std::size_t d;
      T operator()(int slot) const {
        const CoordId c = e.symbols()[std::size_t(slot)];
        const int l = slot_local[std::size_t(slot)];
        Jet v = l >= 0 ? Jet::variable(d, std::size_t(l), p[c]) : Jet(d, p[c]);
        return {std::move(v), Jet(d, c == dir ? 1.0 : 0.0)};
      }
      T constant(double c) const { return {Jet(d, c), Jet(d, 0.0)}; }
    } bind{e, p, slot_local, dir, d};
    const T r = guarded(t, [&] { return evaluate<T>(e, bind); });
    out.value += t.weight * r.d.value();
    for (std::size_t a = 0; a < d; ++a) {
      out.grad[local_global[a]] += t.weight * r.d.grad(a);
      for (std::size_t b = 0; b < d; ++b) out.hess(local_global[a], local_global[b]) += t.weight * r.d.hess(a, b);
    }
  }
  return out;
}

namespace {

std::vector<CoordId> all_coords(const Model& m) {
  std::vector<CoordId> c(std::size_t(m.ncoords()));
  for (CoordId k = 0; k < m.ncoords(); ++k) c[std::size_t(k)] = k;
  return c;
}

HessianBlocks blocks(const Model& m, const Eigen::MatrixXd& H) {
  return {H.topLeftCorner(m.nz(), m.nz()), H.block(0, m.nz(), m.nz(), m.nu()),
          H.block(0, m.nz() + m.nu(), m.nz(), m.ntheta())};
}

}  // namespace

FirstOrder eval(const Model& m, const Objective& obj, const Point& p) {
  const Derivatives d = differentiate(obj, p, all_coords(m));
  FirstOrder f;
  f.value = d.value;
  f.grad_z = d.grad.head(m.nz());
  f.grad_u = d.grad.segment(m.nz(), m.nu());
  f.grad_theta = d.grad.tail(m.ntheta());
  return f;
}

FirstOrder eval(const Model& m, const Point& p) { return eval(m, Objective::total(m), p); }

SecondOrder second_order(const Model& m, const Objective& obj, const Point& p) {
  const std::vector<CoordId> coords = all_coords(m);
  const CoordIndex index(coords);
  Derivatives total = zero_derivatives(m.ncoords());
  std::map<std::string, Derivatives> per_label;
  for (const auto& t : obj.terms) {
    auto [it, inserted] = per_label.try_emplace(t.label);
    if (inserted) it->second = zero_derivatives(m.ncoords());
    accumulate(t, p, index, it->second);
    accumulate(t, p, index, total);
  }
  SecondOrder s;
  const HessianBlocks b = blocks(m, total.hess);
  s.H_zz = b.zz;
  s.H_zu = b.zu;
  s.H_ztheta = b.ztheta;
  for (const auto& [label, d] : per_label) s.attribution.emplace(label, blocks(m, d.hess));
  return s;
}

SecondOrder second_order(const Model& m, const Point& p) { return second_order(m, Objective::total(m), p); }

PairEnergy::PairEnergy(const Model& m, int a, int i, const Point& p) : m_(m), a_(a), i_(i), p_(p) {
  if (a == i || m.descendants(a)[std::size_t(i)]) {
    throw QueryError("pair error: " + m.endo_name(i) + " is not a non-descendant of " + m.endo_name(a));
  }
  std::vector<std::string> labels{"local:" + m.endo_name(i), "global"};
  for (int k : m.exogenous_of(i)) labels.push_back("exo:" + m.exo_name(k));
  obj_ = Objective::subset(m, labels);
}

double PairEnergy::value(const Eigen::VectorXd& zi, const Eigen::VectorXd& za) const {
  Point q = p_;
  const auto ci = m_.z_coords(i_);
  const auto ca = m_.z_coords(a_);
  for (std::size_t k = 0; k < ci.size(); ++k) q[ci[k]] = zi[Eigen::Index(k)];
  for (std::size_t k = 0; k < ca.size(); ++k) q[ca[k]] = za[Eigen::Index(k)];
  return obj_.value(q);
}

Eigen::MatrixXd PairEnergy::cross_zz() const {
  std::vector<CoordId> coords = m_.z_coords(i_);
  const auto ca = m_.z_coords(a_);
  coords.insert(coords.end(), ca.begin(), ca.end());
  const Derivatives d = differentiate(obj_, p_, coords);
  return d.hess.topRightCorner(m_.endo_dim(i_), m_.endo_dim(a_));
}

Eigen::MatrixXd PairEnergy::cross_ztheta(const std::vector<CoordId>& thetas) const {
  std::vector<CoordId> coords = m_.z_coords(i_);
  coords.insert(coords.end(), thetas.begin(), thetas.end());
  const Derivatives d = differentiate(obj_, p_, coords);
  return d.hess.topRightCorner(m_.endo_dim(i_), Eigen::Index(thetas.size()));
}

PairEnergy effective_energy_pair(const Model& m, std::string_view a, std::string_view i, const Point& p) {
  return PairEnergy(m, m.endo_index(a), m.endo_index(i), p);
}

}  // namespace escm
