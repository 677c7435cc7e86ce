#include "escm/surgery.hpp"

#include <cmath>
#include <sstream>

namespace escm {

const std::string& surgery_target(const Surgery& s) {
  return std::visit([](const auto& x) -> const std::string& { return x.target; }, s);
}

std::string describe(const Surgery& s) {
  std::ostringstream os;
  os.precision(17);
  if (const auto* h = std::get_if<HardSurgery>(&s)) {
    os << "do(" << h->target << " := ";
    for (Eigen::Index k = 0; k < h->value.size(); ++k) os << (k ? "," : "") << h->value[k];
    os << ")";
  } else {
    const auto& soft = std::get<SoftSurgery>(s);
    os << "soft(" << soft.target << ", lambda=" << soft.lambda << ", " << soft.replacement << ")";
  }
  return os.str();
}

bool is_mechanism_label(const Model& m, int endo, const std::string& label) {
  return label == "local:" + m.endo_name(endo) || label == "soft:" + m.endo_name(endo);
}

EditedEnergy apply_surgery(const Model& m, const std::vector<Surgery>& surgeries) {
  EditedEnergy out;
  std::vector<const Surgery*> by_target(std::size_t(m.num_endogenous()), nullptr);
  for (const Surgery& s : surgeries) {
    const int i = m.endo_index(surgery_target(s));
    if (by_target[std::size_t(i)]) throw QueryError("more than one surgery on " + m.endo_name(i));
    by_target[std::size_t(i)] = &s;
    out.targets.push_back(i);
    if (const auto* h = std::get_if<HardSurgery>(&s)) {
      if (h->value.size() != m.endo_dim(i)) {
        throw QueryError("do(" + m.endo_name(i) + "): value has " + std::to_string(h->value.size()) +
                         " components, variable has " + std::to_string(m.endo_dim(i)));
      }
      if (!h->value.allFinite()) throw QueryError("do(" + m.endo_name(i) + "): value is not finite");
      for (int c = 0; c < m.endo_dim(i); ++c) out.clamps[m.z_coord(i, c)] = h->value[c];
    } else {
      const auto& soft = std::get<SoftSurgery>(s);
      if (!(soft.lambda >= 0.0 && soft.lambda <= 1.0)) {
        throw QueryError("soft intervention on " + m.endo_name(i) + ": lambda must lie in [0, 1]");
      }
    }
  }
  for (const auto& t : m.terms()) {
    const std::string label = t.owner.label();
    if (t.owner.kind != TermOwner::Kind::Local) {
      out.objective.terms.push_back({1.0, t.expr, label});
      continue;
    }
    const int i = m.endo_index(t.owner.name);
    const Surgery* s = by_target[std::size_t(i)];
    if (!s) {
      out.objective.terms.push_back({1.0, t.expr, label});
    } else if (const auto* soft = std::get_if<SoftSurgery>(s)) {
      auto replacement = m.parse_local_expr(i, soft->replacement);
      out.objective.terms.push_back({1.0 - soft->lambda, t.expr, label});
      out.objective.terms.push_back({soft->lambda, std::move(replacement), "soft:" + m.endo_name(i)});
    }
  }
  return out;
}

EditedEnergy apply_surgery(const Model& m, const Surgery& s) { return apply_surgery(m, std::vector<Surgery>{s}); }

}  // namespace escm
