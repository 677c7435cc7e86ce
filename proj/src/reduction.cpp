#include "escm/reduction.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <sstream>

#include "escm/causal.hpp"
#include "parallel.hpp"

namespace escm {

namespace {

std::string point_text(const Model& m, const Point& p, int endo) {
  std::ostringstream os;
  os.precision(6);
  os << "{";
  bool first = true;
  auto put = [&](CoordId c) {
    os << (first ? "" : ", ") << m.coord_name(c) << "=" << p[c];
    first = false;
  };
  for (int q : m.parents(endo)) {
    for (CoordId c : m.z_coords(q)) put(c);
  }
  for (int k : m.exogenous_of(endo)) {
    for (CoordId c : m.u_coords(k)) put(c);
  }
  os << "}";
  return os.str();
}

}  // namespace

InducedScm::InducedScm(const Model& m, const std::vector<Surgery>& surgeries)
    : m_(m), hard_(std::size_t(m.num_endogenous())), mechanism_(std::size_t(m.num_endogenous())) {
  if (m.global_term()) {
    throw ClassViolation(
        "model has a global energy term; the induced SCM requires a separable energy (local and exogenous terms only)");
  }
  const EditedEnergy edit = apply_surgery(m, surgeries);
  for (const Surgery& s : surgeries) {
    if (const auto* h = std::get_if<HardSurgery>(&s)) hard_[std::size_t(m.endo_index(h->target))] = h->value;
  }
  for (const auto& t : edit.objective.terms) {
    for (int i = 0; i < m.num_endogenous(); ++i) {
      if (is_mechanism_label(m, i, t.label)) mechanism_[std::size_t(i)].terms.push_back(t);
    }
  }
}

Eigen::VectorXd InducedScm::mechanism(int endo, const Point& p) const {
  if (hard_[std::size_t(endo)]) return *hard_[std::size_t(endo)];
  const Objective& obj = mechanism_[std::size_t(endo)];
  const std::vector<CoordId> coords = m_.z_coords(endo);
  const Eigen::Index n = Eigen::Index(coords.size());
  Point x = p;
  for (CoordId c : coords) x[c] = 0.0;
  auto non_convex = [&](const char* what) {
    return ClassViolation(std::string(what) + " in the local block of " + m_.endo_name(endo) + " at " +
                          point_text(m_, x, endo));
  };

  Derivatives d = differentiate(obj, x, coords);
  for (int it = 0;; ++it) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(d.hess, Eigen::EigenvaluesOnly);
    const Eigen::VectorXd ev = eig.eigenvalues();
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    if (ev.minCoeff() < -1e-12 * scale) throw non_convex("negative curvature");
    const double g = d.grad.cwiseAbs().maxCoeff();
    if (g <= 1e-14 * scale) break;
    if (it >= 100) {
      std::ostringstream os;
      os << "blockwise argmin of " << m_.endo_name(endo) << " did not converge (gradient " << g << ")";
      throw SolverError(os.str());
    }
    // Newton where the block is positive definite; a shifted step through flat curvature.
    const double shift = ev.minCoeff() > 1e-12 * scale ? 0.0 : std::max(1e-8, g);
    const Eigen::VectorXd step =
        (d.hess + shift * Eigen::MatrixXd::Identity(n, n)).ldlt().solve(-d.grad);
    bool moved = false;
    for (double t = 1.0; t > 1e-12; t *= 0.5) {
      Point y = x;
      for (Eigen::Index k = 0; k < n; ++k) y[coords[std::size_t(k)]] += t * step[k];
      Derivatives dy;
      try {
        dy = differentiate(obj, y, coords);
      } catch (const DomainError&) {
        continue;
      }
      const double slack = 8.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(d.value));
      if (dy.value < d.value || (dy.value <= d.value + slack && dy.grad.cwiseAbs().maxCoeff() < g)) {
        x = std::move(y);
        d = std::move(dy);
        moved = true;
        break;
      }
    }
    if (!moved) {
      // Rounding floor: accept when the gradient is already tiny, otherwise report.
      if (g <= 1e-9 * scale) break;
      std::ostringstream os;
      os << "blockwise argmin of " << m_.endo_name(endo) << " stalled (gradient " << g << ")";
      throw SolverError(os.str());
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(d.hess);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(d.hess, Eigen::EigenvaluesOnly);
  if (llt.info() != Eigen::Success || !(eig.eigenvalues().minCoeff() > 0.0)) {
    throw non_convex("singular or non-convex minimum");
  }
  Eigen::VectorXd out(n);
  for (Eigen::Index k = 0; k < n; ++k) out[k] = x[coords[std::size_t(k)]];
  return out;
}

Point InducedScm::solve(const Point& base, const std::vector<bool>& held) const {
  Point x = base;
  for (int i : m_.topo_order()) {
    if (!held.empty() && held[std::size_t(i)]) continue;
    const Eigen::VectorXd v = mechanism(i, x);
    const auto coords = m_.z_coords(i);
    for (std::size_t k = 0; k < coords.size(); ++k) x[coords[k]] = v[Eigen::Index(k)];
  }
  return x;
}

InducedScm induce_scm(const Model& m) { return InducedScm(m); }

Eigen::VectorXd scm_solve(const Model& m, const Eigen::VectorXd& u, const std::vector<Surgery>& surgeries) {
  if (u.size() != m.nu()) throw QueryError("exogenous vector has the wrong length");
  Point p(m);
  p.u() = u;
  return InducedScm(m, surgeries).solve(p).z();
}

Point forward_scm_point(const Model& m, const Point& base) { return InducedScm(m).solve(base); }

Point scm_counterfactual(const Model& m, const Evidence& ev, const std::vector<Surgery>& surgeries,
                         const SolverConfig& cfg) {
  const InducedScm scm(m, surgeries);
  const Explanation x = abduct(m, ev, cfg);
  const EditedEnergy edit = apply_surgery(m, surgeries);
  std::vector<bool> held(std::size_t(m.num_endogenous()), true);
  for (int t : edit.targets) {
    held[std::size_t(t)] = false;
    const auto d = m.descendants(t);
    for (int i = 0; i < m.num_endogenous(); ++i) {
      if (d[std::size_t(i)]) held[std::size_t(i)] = false;
    }
  }
  return scm.solve(x.point, held);
}

namespace {

std::mt19937_64 trial_rng(std::uint64_t seed, int trial, std::uint32_t stream) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(trial), stream};
  return std::mt19937_64(seq);
}

double draw_uniform(std::mt19937_64& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Energy-side outcome for exogenous context p.u() under the surgeries: hard targets and
// u clamped, every other z free, zero initialization.
Point energy_side(const Model& m, const Point& context, const std::vector<Surgery>& surgeries) {
  const EditedEnergy edit = apply_surgery(m, surgeries);
  ClampSet clamps = edit.clamps;
  for (CoordId c = m.nz(); c < m.nz() + m.nu(); ++c) clamps[c] = context[c];
  std::vector<CoordId> free;
  for (CoordId c = 0; c < m.nz(); ++c) {
    if (!clamps.count(c)) free.push_back(c);
  }
  SolverConfig cfg;
  cfg.start = context;
  return solve(m, edit.objective, clamps, free, cfg).point;
}

double max_abs_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

std::string soft_replacement(const Model& m, int endo, SoftFamily family, std::mt19937_64& rng, double lo, double hi) {
  auto number = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  const auto coords = m.z_coords(endo);
  std::vector<double> draw;
  for (std::size_t c = 0; c < coords.size(); ++c) draw.push_back(draw_uniform(rng, lo, hi));
  if (family == SoftFamily::Shift) {
    const Expr& e = *m.terms()[std::size_t(m.local_term(endo))].expr;
    return e.rewrite([&](CoordId id) -> std::optional<std::string> {
      for (std::size_t c = 0; c < coords.size(); ++c) {
        if (coords[c] == id) return "(" + m.coord_name(id) + " - (" + number(draw[c]) + "))";
      }
      return std::nullopt;
    });
  }
  std::string s;
  for (std::size_t c = 0; c < coords.size(); ++c) {
    s += (c ? " + " : "") + std::string("0.5*sq(") + m.coord_name(coords[c]) + " - (" + number(draw[c]) + "))";
  }
  return s;
}

}  // namespace

EquivalenceReport equivalence_check(const Model& m, const EquivalenceOptions& opt) {
  const InducedScm probe(m);  // refuses models outside the class up front
  std::vector<int> targets;
  for (const auto& name : opt.targets) targets.push_back(m.endo_index(name));
  if (targets.empty()) {
    for (int i = 0; i < m.num_endogenous(); ++i) targets.push_back(i);
  }

  std::vector<std::vector<EquivalenceTrial>> per_trial(std::size_t(std::max(opt.trials, 0)));
  detail::parallel_for(opt.trials, opt.threads, [&](int t) {
    std::mt19937_64 rng = trial_rng(opt.seed, t, 0);
    Point context(m);
    for (CoordId c = m.nz(); c < m.nz() + m.nu(); ++c) context[c] = draw_uniform(rng, -opt.u_scale, opt.u_scale);

    std::vector<std::vector<Surgery>> cases;
    if (opt.observational) cases.push_back({});
    if (opt.hard) {
      const int i = targets[std::size_t(rng() % targets.size())];
      Eigen::VectorXd v(m.endo_dim(i));
      for (Eigen::Index k = 0; k < v.size(); ++k) v[k] = draw_uniform(rng, opt.value_lo, opt.value_hi);
      cases.push_back({HardSurgery{m.endo_name(i), v}});
    }
    if (opt.soft) {
      const int i = targets[std::size_t(rng() % targets.size())];
      const double lambda = draw_uniform(rng, 0.0, 1.0);
      cases.push_back({SoftSurgery{m.endo_name(i), lambda, soft_replacement(m, i, opt.soft_family, rng, opt.value_lo, opt.value_hi)}});
    }

    for (const auto& surgeries : cases) {
      const InducedScm scm(m, surgeries);
      const Point e = energy_side(m, context, surgeries);
      const Point s = scm.solve(context);
      EquivalenceTrial r;
      r.trial = t;
      r.surgery = surgeries.empty() ? "observational" : describe(surgeries[0]);
      r.deviation = max_abs_diff(e.z(), s.z());
      for (int i = 0; i < m.num_endogenous(); ++i) {
        const Eigen::VectorXd f = scm.mechanism(i, e);
        const auto coords = m.z_coords(i);
        for (std::size_t k = 0; k < coords.size(); ++k) {
          r.reduction_residual = std::max(r.reduction_residual, std::abs(e[coords[k]] - f[Eigen::Index(k)]));
        }
      }
      per_trial[std::size_t(t)].push_back(r);
    }
  });

  EquivalenceReport rep;
  rep.tolerance = opt.tolerance;
  for (auto& v : per_trial) {
    for (auto& r : v) {
      rep.max_deviation = std::max(rep.max_deviation, r.deviation);
      rep.max_reduction_residual = std::max(rep.max_reduction_residual, r.reduction_residual);
      rep.trials.push_back(std::move(r));
    }
  }
  rep.pass = rep.max_deviation <= opt.tolerance;
  return rep;
}

PushforwardReport pushforward_check(const Model& m, const PushforwardOptions& opt) {
  const InducedScm scm(m, opt.surgeries);
  if (int(opt.samplers.size()) != m.num_exogenous()) {
    throw QueryError("pushforward needs one sampler per exogenous variable (" + std::to_string(m.num_exogenous()) + ")");
  }
  for (const auto& s : opt.samplers) {
    if (s.kind == ExoSampler::Kind::Uniform && !(s.a <= s.b)) throw QueryError("uniform sampler needs low <= high");
    if (s.kind == ExoSampler::Kind::Gauss && !(s.b >= 0.0)) throw QueryError("gauss sampler needs sd >= 0");
  }
  if (opt.trials < 1) throw QueryError("pushforward needs at least one trial");
  std::vector<Expr> stats;
  for (const auto& [name, text] : opt.statistics) stats.push_back(m.parse_expr(text));

  const std::size_t N = std::size_t(opt.trials), S = stats.size();
  std::vector<double> ev(N * S), sv(N * S);
  detail::parallel_for(opt.trials, opt.threads, [&](int t) {
    std::mt19937_64 rng = trial_rng(opt.seed, t, 1);
    Point context(m);
    for (int k = 0; k < m.num_exogenous(); ++k) {
      const ExoSampler& s = opt.samplers[std::size_t(k)];
      for (CoordId c : m.u_coords(k)) {
        if (s.kind == ExoSampler::Kind::Uniform) {
          context[c] = draw_uniform(rng, s.a, s.b);
        } else {
          context[c] = s.b == 0.0 ? s.a : std::normal_distribution<double>(s.a, s.b)(rng);
        }
      }
    }
    const Point e = energy_side(m, context, opt.surgeries);
    const Point q = scm.solve(context);
    for (std::size_t j = 0; j < S; ++j) {
      ev[std::size_t(t) * S + j] = evaluate_at(stats[j], [&](CoordId c) { return e[c]; });
      sv[std::size_t(t) * S + j] = evaluate_at(stats[j], [&](CoordId c) { return q[c]; });
    }
  });

  PushforwardReport rep;
  for (std::size_t j = 0; j < S; ++j) {
    StatisticSummary s;
    s.name = opt.statistics[j].first;
    for (std::size_t t = 0; t < N; ++t) {
      s.energy_mean += ev[t * S + j];
      s.scm_mean += sv[t * S + j];
      s.max_paired_deviation = std::max(s.max_paired_deviation, std::abs(ev[t * S + j] - sv[t * S + j]));
    }
    s.energy_mean /= double(N);
    s.scm_mean /= double(N);
    for (std::size_t t = 0; t < N; ++t) {
      s.energy_var += (ev[t * S + j] - s.energy_mean) * (ev[t * S + j] - s.energy_mean);
      s.scm_var += (sv[t * S + j] - s.scm_mean) * (sv[t * S + j] - s.scm_mean);
    }
    s.energy_var /= double(N);
    s.scm_var /= double(N);
    rep.max_paired_deviation = std::max(rep.max_paired_deviation, s.max_paired_deviation);
    rep.statistics.push_back(s);
  }
  rep.pass = rep.max_paired_deviation <= opt.tolerance;
  return rep;
}

double contraction_estimate(const Model& m, const Eigen::VectorXd& u) {
  const InducedScm scm(m);
  Point p(m);
  p.u() = u;
  p = scm.solve(p);
  // DT rows for node i: -(d2E_i/dz_i^2)^-1 d2E_i/dz_i dz_PA(i).
  Eigen::MatrixXd DT = Eigen::MatrixXd::Zero(m.nz(), m.nz());
  for (int i = 0; i < m.num_endogenous(); ++i) {
    std::vector<CoordId> coords = m.z_coords(i);
    const Eigen::Index di = Eigen::Index(coords.size());
    for (int q : m.parents(i)) {
      const auto pc = m.z_coords(q);
      coords.insert(coords.end(), pc.begin(), pc.end());
    }
    const Derivatives d = differentiate(Objective::subset(m, {"local:" + m.endo_name(i)}), p, coords);
    const Eigen::MatrixXd block =
        -d.hess.topLeftCorner(di, di).ldlt().solve(d.hess.topRightCorner(di, Eigen::Index(coords.size()) - di));
    for (Eigen::Index r = 0; r < di; ++r) {
      for (Eigen::Index c = di; c < Eigen::Index(coords.size()); ++c) DT(coords[std::size_t(r)], coords[std::size_t(c)]) = block(r, c - di);
    }
  }
  const Eigen::MatrixXd A = DT.transpose() * DT;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(m.nz()).normalized();
  double lambda = 0.0;
  for (int it = 0; it < 1000; ++it) {
    const Eigen::VectorXd w = A * v;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    const double next = v.dot(w);
    v = w / norm;
    if (std::abs(next - lambda) <= 1e-15 * std::max(1.0, next)) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return std::sqrt(std::max(lambda, 0.0));
}

}  // namespace escm
