#include "escm/causal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "parallel.hpp"

namespace escm {

bool lexicographic_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

Explanation abduct(const Model& m, const Evidence& ev, const SolverConfig& cfg) {
  for (const auto& [c, v] : ev) {
    if (!(m.is_z(c) || m.is_u(c))) throw QueryError("evidence must name z or u coordinates");
  }
  std::vector<CoordId> free;
  for (CoordId c = 0; c < m.nz() + m.nu(); ++c) {
    if (!ev.count(c)) free.push_back(c);
  }
  SolverConfig zc = cfg;
  zc.init = InitMode::Zeros;
  const Equilibrium eq = solve(m, Objective::total(m), ev, free, zc);
  Explanation x;
  x.point = eq.point;
  x.evidence = ev;
  x.selector = "min-norm zero-init";
  x.free = free;
  x.residual = eq.residual;
  x.iterations = eq.iterations;
  x.hessian_pd = eq.hessian_pd;
  x.energy = eq.energy;
  return x;
}

HoldPartition default_hold(const Model& m, const EditedEnergy& edit) {
  std::vector<bool> moved(std::size_t(m.num_endogenous()), false);
  for (int t : edit.targets) {
    moved[std::size_t(t)] = true;
    const auto d = m.descendants(t);
    for (int i = 0; i < m.num_endogenous(); ++i) {
      if (d[std::size_t(i)]) moved[std::size_t(i)] = true;
    }
  }
  HoldPartition h;
  for (CoordId c = 0; c < m.nz(); ++c) {
    if (edit.clamps.count(c)) continue;
    (moved[std::size_t(m.endo_of(c))] ? h.free : h.held).push_back(c);
  }
  for (CoordId c = m.nz(); c < m.nz() + m.nu(); ++c) h.held.push_back(c);
  std::sort(h.held.begin(), h.held.end());
  return h;
}

HoldPartition hold_override(const Model& m, const EditedEnergy& edit, const std::vector<CoordId>& held) {
  HoldPartition h;
  for (CoordId c : held) {
    if (!(m.is_z(c) || m.is_u(c))) throw QueryError("hold set must name z or u coordinates");
    if (edit.clamps.count(c)) throw QueryError("hold set names " + m.coord_name(c) + ", which a hard surgery clamps");
  }
  h.held = held;
  std::sort(h.held.begin(), h.held.end());
  h.held.erase(std::unique(h.held.begin(), h.held.end()), h.held.end());
  for (CoordId c = 0; c < m.nz() + m.nu(); ++c) {
    if (!edit.clamps.count(c) && !std::binary_search(h.held.begin(), h.held.end(), c)) h.free.push_back(c);
  }
  return h;
}

CounterfactualResult counterfactual(const Model& m, const Explanation& abducted, const std::vector<Surgery>& surgeries,
                                    const Readouts& readouts, const std::optional<std::vector<CoordId>>& hold,
                                    const SolverConfig& cfg) {
  const EditedEnergy edit = apply_surgery(m, surgeries);
  CounterfactualResult r;
  r.pre = abducted.point;
  r.surgeries = surgeries;
  r.partition = hold ? hold_override(m, edit, *hold) : default_hold(m, edit);
  std::vector<std::pair<std::string, Expr>> parsed;
  for (const auto& [name, text] : readouts) parsed.emplace_back(name, m.parse_expr(text));

  ClampSet clamps = edit.clamps;
  for (CoordId c : r.partition.held) clamps[c] = r.pre[c];
  SolverConfig sc = cfg;
  sc.init = InitMode::Given;
  sc.start = r.pre;
  const Equilibrium eq = solve(m, edit.objective, clamps, r.partition.free, sc);
  r.post = eq.point;
  r.post_energy = eq.energy;
  r.residual = eq.residual;
  r.iterations = eq.iterations;
  r.hessian_pd = eq.hessian_pd;
  for (const auto& [name, e] : parsed) {
    r.readouts.emplace_back(name, evaluate_at(e, [&](CoordId c) { return r.post[c]; }));
  }
  return r;
}

CounterfactualResult counterfactual(const Model& m, const Evidence& ev, const std::vector<Surgery>& surgeries,
                                    const Readouts& readouts, const std::optional<std::vector<CoordId>>& hold,
                                    const SolverConfig& cfg) {
  return counterfactual(m, abduct(m, ev, cfg), surgeries, readouts, hold, cfg);
}

namespace {

std::vector<Eigen::VectorXd> distinct(std::vector<Eigen::VectorXd> values) {
  if (values.empty()) throw QueryError("disjunctive value set is empty");
  std::sort(values.begin(), values.end(), lexicographic_less);
  values.erase(std::unique(values.begin(), values.end(),
                           [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
                             return !lexicographic_less(a, b) && !lexicographic_less(b, a);
                           }),
               values.end());
  return values;
}

std::string value_text(const Eigen::VectorXd& v) {
  std::string s = "[";
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v[k]);
    s += (k ? "," : "") + std::string(buf);
  }
  return s + "]";
}

// Solves every branch from the same abducted context; errors name the branch.
std::vector<Branch> solve_branches(const Model& m, const Explanation& abducted, const std::string& target,
                                   const std::vector<Eigen::VectorXd>& values, const std::string& readout,
                                   const SolverConfig& cfg, int threads) {
  std::vector<Branch> out(values.size());
  detail::parallel_for(int(values.size()), threads, [&](int k) {
    const Eigen::VectorXd& v = values[std::size_t(k)];
    const std::string where = "branch " + std::to_string(k) + " (" + target + " := " + value_text(v) + "): ";
    try {
      const CounterfactualResult r = counterfactual(m, abducted, {HardSurgery{target, v}}, {{"phi", readout}}, {}, cfg);
      Branch& b = out[std::size_t(k)];
      b.value = v;
      b.readout = r.readouts[0].second;
      b.energy = r.post_energy;
      b.post = r.post;
    } catch (const SolverError& e) {
      throw SolverError(where + e.what());
    } catch (const DomainError& e) {
      throw DomainError(where + e.what());
    } catch (const QueryError& e) {
      throw QueryError(where + e.what());
    }
  });
  return out;
}

}  // namespace

Envelope disjunctive_envelope(const Model& m, const Evidence& ev, const std::string& target,
                              const std::vector<Eigen::VectorXd>& values, const std::string& readout,
                              const SolverConfig& cfg, int threads) {
  const auto set = distinct(values);
  Envelope env;
  env.branches = solve_branches(m, abduct(m, ev, cfg), target, set, readout, cfg, threads);
  env.min = env.max = env.branches[0].readout;
  for (const auto& b : env.branches) {
    env.min = std::min(env.min, b.readout);
    env.max = std::max(env.max, b.readout);
  }
  return env;
}

Selection disjunctive_select(const Model& m, const Evidence& ev, const std::string& target,
                             const std::vector<Eigen::VectorXd>& values, const std::string& readout,
                             const SelectOptions& opt, const SolverConfig& cfg) {
  if (!(opt.rho >= 0.0)) throw QueryError("rho must be non-negative");
  if (!(opt.tau >= 0.0)) throw QueryError("tau must be non-negative");
  const auto set = distinct(values);
  const Explanation abducted = abduct(m, ev, cfg);
  Selection sel;
  sel.branches = solve_branches(m, abducted, target, set, readout, cfg, opt.threads);

  std::optional<Expr> control;
  if (!opt.control.empty()) control = m.parse_expr(opt.control, true);
  for (auto& b : sel.branches) {
    if (control) {
      b.control = evaluate_at(*control, [&](CoordId c) {
        if (c < m.ncoords()) return abducted.point[c];
        const int k = c - m.ncoords();
        if (k >= b.value.size()) throw QueryError("control symbol s[" + std::to_string(k) + "] exceeds the value dimension");
        return b.value[k];
      });
    }
    b.score = b.energy + opt.rho * b.control;
  }

  double best = std::numeric_limits<double>::infinity();
  for (const auto& b : sel.branches) best = std::min(best, b.score);
  // Branches are in lexicographic order, so the first near-minimal one wins ties.
  const double tie = 1e-12 * std::max(1.0, std::abs(best));
  for (std::size_t k = 0; k < sel.branches.size(); ++k) {
    if (sel.branches[k].score <= best + tie) {
      sel.selected = int(k);
      break;
    }
  }
  if (opt.tau == 0.0) {
    sel.branches[std::size_t(sel.selected)].weight = 1.0;
    sel.readout = sel.branches[std::size_t(sel.selected)].readout;
    return sel;
  }
  double z = 0.0;
  for (auto& b : sel.branches) {
    b.weight = std::exp(-(b.score - best) / opt.tau);
    z += b.weight;
  }
  sel.readout = 0.0;
  for (auto& b : sel.branches) {
    b.weight /= z;
    sel.readout += b.weight * b.readout;
  }
  sel.blended = true;
  return sel;
}

}  // namespace escm
