#include "escm/model.hpp"

#include <algorithm>
#include <cctype>
#include <queue>

#include "json.hpp"

namespace escm {

using json = nlohmann::json;

std::string TermOwner::label() const {
  switch (kind) {
    case Kind::Local: return "local:" + name;
    case Kind::Exo: return "exo:" + name;
    case Kind::Global: return "global";
  }
  return "global";
}

TermOwner TermOwner::parse(std::string_view label) {
  TermOwner o;
  if (label == "global") {
    o.kind = Kind::Global;
  } else if (label.substr(0, 6) == "local:") {
    o.kind = Kind::Local;
    o.name = std::string(label.substr(6));
  } else if (label.substr(0, 4) == "exo:") {
    o.kind = Kind::Exo;
    o.name = std::string(label.substr(4));
  } else {
    throw ValidationError("invalid term owner '" + std::string(label) + "' (expected local:NAME, exo:NAME or global)");
  }
  return o;
}

namespace {

bool is_identifier(const std::string& s) {
  if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  return std::all_of(s.begin(), s.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; });
}

const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ValidationError(where + ": missing key '" + key + "'");
  return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_string()) throw ValidationError(where + ": '" + key + "' must be a string");
  return v.get<std::string>();
}

}  // namespace

int Model::endo_index(std::string_view name) const {
  if (auto i = find_endo(name)) return *i;
  throw QueryError("unknown endogenous variable '" + std::string(name) + "'");
}

int Model::exo_index(std::string_view name) const {
  if (auto k = find_exo(name)) return *k;
  throw QueryError("unknown exogenous variable '" + std::string(name) + "'");
}

std::optional<int> Model::find_endo(std::string_view name) const {
  for (std::size_t i = 0; i < endo_.size(); ++i) {
    if (variables_[std::size_t(endo_[i])].name == name) return int(i);
  }
  return std::nullopt;
}

std::optional<int> Model::find_exo(std::string_view name) const {
  for (std::size_t k = 0; k < exo_.size(); ++k) {
    if (variables_[std::size_t(exo_[k])].name == name) return int(k);
  }
  return std::nullopt;
}

std::vector<CoordId> Model::z_coords(int endo) const {
  std::vector<CoordId> out;
  for (int c = 0; c < endo_dim(endo); ++c) out.push_back(z_coord(endo, c));
  return out;
}

std::vector<CoordId> Model::u_coords(int exo) const {
  std::vector<CoordId> out;
  for (int c = 0; c < exo_dim(exo); ++c) out.push_back(u_coord(exo, c));
  return out;
}

std::optional<CoordId> Model::find_theta(std::string_view module, std::string_view name) const {
  for (std::size_t p = 0; p < params_.size(); ++p) {
    if (params_[p].module == module && params_[p].name == name) return nz_ + nu_ + int(p);
  }
  return std::nullopt;
}

int Model::endo_of(CoordId z) const {
  for (int i = num_endogenous() - 1; i >= 0; --i) {
    if (z >= z_offset_[std::size_t(i)]) return i;
  }
  throw QueryError("not an endogenous coordinate: " + std::to_string(z));
}

int Model::exo_of_coord(CoordId u) const {
  const int local = u - nz_;
  for (int k = num_exogenous() - 1; k >= 0; --k) {
    if (local >= u_offset_[std::size_t(k)]) return k;
  }
  throw QueryError("not an exogenous coordinate: " + std::to_string(u));
}

std::string Model::coord_name(CoordId c) const {
  if (is_z(c)) {
    const int i = endo_of(c);
    std::string s = "z." + endo_name(i);
    if (endo_dim(i) > 1) s += "[" + std::to_string(c - z_offset_[std::size_t(i)]) + "]";
    return s;
  }
  if (is_u(c)) {
    const int k = exo_of_coord(c);
    std::string s = "u." + exo_name(k);
    if (exo_dim(k) > 1) s += "[" + std::to_string(c - nz_ - u_offset_[std::size_t(k)]) + "]";
    return s;
  }
  if (is_theta(c)) {
    const Parameter& p = params_[std::size_t(c - nz_ - nu_)];
    return "theta." + p.module + "." + p.name;
  }
  return "s[" + std::to_string(c - ncoords()) + "]";
}

CoordId Model::coord_by_name(std::string_view name) const {
  Expr e;
  try {
    e = parse_expr(name);
  } catch (const ValidationError& err) {
    throw QueryError("invalid coordinate '" + std::string(name) + "': " + err.what());
  }
  if (e.nodes().size() != 1 || e.nodes()[0].op != Op::Sym) {
    throw QueryError("invalid coordinate '" + std::string(name) + "'");
  }
  return e.symbols()[0];
}

std::vector<bool> Model::descendants(int endo) const {
  std::vector<bool> seen(std::size_t(num_endogenous()), false);
  std::vector<int> stack(children(endo).begin(), children(endo).end());
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    if (seen[std::size_t(v)]) continue;
    seen[std::size_t(v)] = true;
    for (int c : children(v)) stack.push_back(c);
  }
  return seen;
}

std::vector<bool> Model::nondescendants(int endo) const {
  std::vector<bool> d = descendants(endo);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = !d[i];
  d[std::size_t(endo)] = false;
  return d;
}

std::optional<int> Model::exo_term(int exo) const {
  const int t = exo_term_[std::size_t(exo)];
  if (t < 0) return std::nullopt;
  return t;
}

std::optional<int> Model::exo_owner(int exo) const {
  const int o = exo_owner_[std::size_t(exo)];
  if (o < 0) return std::nullopt;
  return o;
}

std::vector<int> Model::exogenous_of(int endo) const {
  std::vector<int> out;
  for (int k = 0; k < num_exogenous(); ++k) {
    if (exo_owner_[std::size_t(k)] == endo) out.push_back(k);
  }
  return out;
}

std::vector<CoordId> Model::module_params(int endo, bool dynamic) const {
  std::set<CoordId> out;
  for (std::size_t p = 0; p < params_.size(); ++p) {
    if (params_[p].module == endo_name(endo)) out.insert(nz_ + nu_ + int(p));
  }
  auto collect = [&](const Expr& e) {
    for (CoordId c : e.symbols()) {
      if (is_theta(c)) out.insert(c);
    }
  };
  if (dynamic) {
    for (const auto& d : dynamics_) {
      if (d.var == endo_name(endo)) collect(*d.expr);
    }
  } else {
    collect(*terms_[std::size_t(local_term(endo))].expr);
  }
  return {out.begin(), out.end()};
}

std::optional<int> Model::param_owner(CoordId theta) const {
  const Parameter& p = params_.at(std::size_t(theta - nz_ - nu_));
  if (auto i = find_endo(p.module)) return *i;
  if (auto k = find_exo(p.module)) return exo_owner(*k);
  return std::nullopt;
}

Eigen::VectorXd Model::default_theta() const {
  Eigen::VectorXd t(ntheta());
  for (std::size_t p = 0; p < params_.size(); ++p) t[Eigen::Index(p)] = params_[p].default_value;
  return t;
}

const Expr* Model::field(CoordId z) const {
  if (field_.empty()) return nullptr;
  return field_.at(std::size_t(z));
}

CoordId Model::resolve(const SymbolName& s, std::size_t pos, bool allow_control) const {
  auto component = [&](int dim) {
    if (!s.component) {
      if (dim != 1) throw ParseError("symbol '" + to_string(s) + "' needs a component index", pos);
      return 0;
    }
    if (*s.component < 0 || *s.component >= dim) {
      throw ParseError("component out of range in '" + to_string(s) + "'", pos);
    }
    return *s.component;
  };
  switch (s.kind) {
    case SymbolKind::Z:
      if (auto i = find_endo(s.name)) return z_coord(*i, component(endo_dim(*i)));
      break;
    case SymbolKind::U:
      if (auto k = find_exo(s.name)) return u_coord(*k, component(exo_dim(*k)));
      break;
    case SymbolKind::Theta:
      if (auto c = find_theta(s.module, s.name)) return *c;
      break;
    case SymbolKind::Control:
      if (!allow_control) throw ParseError("control symbol 's' is only valid in control energies", pos);
      return ncoords() + s.component.value_or(0);
  }
  throw ParseError("unknown symbol '" + to_string(s) + "'", pos);
}

Expr Model::parse_expr(std::string_view text, bool allow_control) const {
  return Expr::parse(text, [&](const SymbolName& s, std::size_t pos) { return resolve(s, pos, allow_control); });
}

void Model::check_mask(int endo, const Expr& e, const std::string& where, std::map<int, int>& owners) const {
  for (std::size_t k = 0; k < e.symbols().size(); ++k) {
    const CoordId c = e.symbols()[k];
    if (is_z(c)) {
      const int v = endo_of(c);
      const auto& pa = parents(endo);
      if (v != endo && std::find(pa.begin(), pa.end(), v) == pa.end()) {
        throw ValidationError("parent-mask violation: symbol '" + to_string(e.symbol_names()[k]) + "' in " + where);
      }
    } else if (is_u(c)) {
      const int x = exo_of_coord(c);
      auto [it, inserted] = owners.emplace(x, endo);
      if (!inserted && it->second != endo) {
        throw ValidationError("parent-mask violation: symbol '" + to_string(e.symbol_names()[k]) + "' in " + where +
                              " (already read by the mechanism of " + endo_name(it->second) + ")");
      }
    }
  }
}

std::shared_ptr<const Expr> Model::parse_local_expr(int endo, std::string_view text) const {
  auto e = std::make_shared<Expr>(parse_expr(text));
  std::map<int, int> owners;
  for (int k = 0; k < num_exogenous(); ++k) {
    if (exo_owner_[std::size_t(k)] >= 0) owners[k] = exo_owner_[std::size_t(k)];
  }
  check_mask(endo, *e, "replacement term for local:" + endo_name(endo), owners);
  return e;
}

std::shared_ptr<const Expr> Model::parse_field_expr(int endo, std::string_view text) const {
  auto e = std::make_shared<Expr>(parse_expr(text));
  std::map<int, int> owners;
  for (int k = 0; k < num_exogenous(); ++k) {
    if (exo_owner_[std::size_t(k)] >= 0) owners[k] = exo_owner_[std::size_t(k)];
  }
  check_mask(endo, *e, "replacement field for " + endo_name(endo), owners);
  return e;
}

void Model::build_layout() {
  endo_.clear();
  exo_.clear();
  for (std::size_t v = 0; v < variables_.size(); ++v) {
    (variables_[v].kind == VarKind::Endogenous ? endo_ : exo_).push_back(int(v));
  }
  nz_ = 0;
  z_offset_.clear();
  for (int i = 0; i < num_endogenous(); ++i) {
    z_offset_.push_back(nz_);
    nz_ += endo_dim(i);
  }
  nu_ = 0;
  u_offset_.clear();
  for (int k = 0; k < num_exogenous(); ++k) {
    u_offset_.push_back(nu_);
    nu_ += exo_dim(k);
  }
}

void Model::build_graph() {
  const std::size_t n = endo_.size();
  dag_.nodes.clear();
  for (int i = 0; i < int(n); ++i) dag_.nodes.push_back(endo_name(i));
  dag_.parents.assign(n, {});
  dag_.children.assign(n, {});
  std::set<std::pair<int, int>> seen;
  for (const auto& [p, c] : dag_.edges) {
    auto pi = find_endo(p);
    auto ci = find_endo(c);
    if (!pi || !ci) {
      throw ValidationError("edge [" + p + ", " + c + "] references an undeclared endogenous variable");
    }
    if (!seen.insert({*pi, *ci}).second) throw ValidationError("duplicate edge [" + p + ", " + c + "]");
    dag_.parents[std::size_t(*ci)].push_back(*pi);
    dag_.children[std::size_t(*pi)].push_back(*ci);
  }
  for (auto& v : dag_.parents) std::sort(v.begin(), v.end());
  for (auto& v : dag_.children) std::sort(v.begin(), v.end());

  // Kahn's algorithm with the smallest declaration index first.
  std::vector<int> indegree(n);
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (std::size_t i = 0; i < n; ++i) {
    indegree[i] = int(dag_.parents[i].size());
    if (indegree[i] == 0) ready.push(int(i));
  }
  topo_.clear();
  while (!ready.empty()) {
    const int v = ready.top();
    ready.pop();
    topo_.push_back(v);
    for (int c : dag_.children[std::size_t(v)]) {
      if (--indegree[std::size_t(c)] == 0) ready.push(c);
    }
  }
  if (topo_.size() == n) return;

  // Every unprocessed node keeps an unprocessed parent; walk parents until a repeat.
  int v = 0;
  while (indegree[std::size_t(v)] == 0) ++v;
  std::vector<int> walk;
  std::vector<int> pos_in_walk(n, -1);
  while (pos_in_walk[std::size_t(v)] < 0) {
    pos_in_walk[std::size_t(v)] = int(walk.size());
    walk.push_back(v);
    for (int p : dag_.parents[std::size_t(v)]) {
      if (indegree[std::size_t(p)] > 0) {
        v = p;
        break;
      }
    }
  }
  std::vector<int> cycle(walk.begin() + pos_in_walk[std::size_t(v)], walk.end());
  std::reverse(cycle.begin(), cycle.end());
  std::rotate(cycle.begin(), std::min_element(cycle.begin(), cycle.end()), cycle.end());
  std::string msg = "cycle detected: ";
  for (int c : cycle) msg += endo_name(c) + " -> ";
  msg += endo_name(cycle.front());
  throw ValidationError(msg);
}

Model Model::parse(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model file is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ValidationError("model file must be a JSON object");

  Model m;
  std::set<std::string> names;
  const json& vars = require(doc, "variables", "model");
  if (!vars.is_array()) throw ValidationError("model: 'variables' must be a list");
  for (const json& v : vars) {
    VariableDecl d;
    d.name = require_string(v, "name", "variable");
    const std::string where = "variable '" + d.name + "'";
    if (!is_identifier(d.name)) throw ValidationError(where + ": name is not an identifier");
    if (d.name == "global") throw ValidationError(where + ": 'global' is reserved");
    const std::string kind = require_string(v, "kind", where);
    if (kind == "endogenous") {
      d.kind = VarKind::Endogenous;
    } else if (kind == "exogenous") {
      d.kind = VarKind::Exogenous;
    } else {
      throw ValidationError(where + ": kind must be 'endogenous' or 'exogenous'");
    }
    if (auto it = v.find("dim"); it != v.end()) {
      if (!it->is_number_integer() || it->get<long long>() < 1) throw ValidationError(where + ": dim must be a positive integer");
      d.dim = it->get<int>();
    }
    if (!names.insert(d.name).second) throw ValidationError("duplicate variable name '" + d.name + "'");
    m.variables_.push_back(d);
  }
  m.build_layout();

  if (auto it = doc.find("edges"); it != doc.end()) {
    if (!it->is_array()) throw ValidationError("model: 'edges' must be a list");
    for (const json& e : *it) {
      if (!e.is_array() || e.size() != 2 || !e[0].is_string() || !e[1].is_string()) {
        throw ValidationError("edge must be a [parent, child] pair of names");
      }
      m.dag_.edges.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
    }
  }
  m.build_graph();

  // First pass: owners and parameter declarations, so later terms can be referenced.
  const json& terms = require(doc, "terms", "model");
  if (!terms.is_array()) throw ValidationError("model: 'terms' must be a list");
  m.local_term_.assign(std::size_t(m.num_endogenous()), -1);
  m.exo_term_.assign(std::size_t(m.num_exogenous()), -1);
  std::vector<std::string> sources;
  for (const json& t : terms) {
    EnergyTerm term;
    term.owner = TermOwner::parse(require_string(t, "owner", "term"));
    const std::string where = "term '" + term.owner.label() + "'";
    const int idx = int(m.terms_.size());
    switch (term.owner.kind) {
      case TermOwner::Kind::Local: {
        auto i = m.find_endo(term.owner.name);
        if (!i) throw ValidationError(where + ": no endogenous variable '" + term.owner.name + "'");
        if (m.local_term_[std::size_t(*i)] >= 0) throw ValidationError(where + ": duplicate local term");
        m.local_term_[std::size_t(*i)] = idx;
        break;
      }
      case TermOwner::Kind::Exo: {
        auto k = m.find_exo(term.owner.name);
        if (!k) throw ValidationError(where + ": no exogenous variable '" + term.owner.name + "'");
        if (m.exo_term_[std::size_t(*k)] >= 0) throw ValidationError(where + ": duplicate exogenous term");
        m.exo_term_[std::size_t(*k)] = idx;
        break;
      }
      case TermOwner::Kind::Global:
        if (m.global_term_) throw ValidationError("more than one global term");
        m.global_term_ = idx;
        break;
    }
    if (auto it = t.find("params"); it != t.end()) {
      if (!it->is_object()) throw ValidationError(where + ": 'params' must be an object");
      for (auto p = it->begin(); p != it->end(); ++p) {
        if (!is_identifier(p.key())) throw ValidationError(where + ": parameter name '" + p.key() + "' is not an identifier");
        if (!p.value().is_number()) throw ValidationError(where + ": parameter '" + p.key() + "' must be numeric");
        term.params.emplace_back(p.key(), p.value().get<double>());
      }
      std::sort(term.params.begin(), term.params.end());
    }
    for (const auto& [name, value] : term.params) m.params_.push_back({term.owner.module(), name, value});
    sources.push_back(require_string(t, "expr", where));
    m.terms_.push_back(std::move(term));
  }
  for (int i = 0; i < m.num_endogenous(); ++i) {
    if (m.local_term_[std::size_t(i)] < 0) throw ValidationError("endogenous variable '" + m.endo_name(i) + "' has no local term");
  }

  // Second pass: expressions and masks.
  std::map<int, int> owners;
  for (std::size_t t = 0; t < m.terms_.size(); ++t) {
    EnergyTerm& term = m.terms_[t];
    const std::string where = "term '" + term.owner.label() + "'";
    try {
      term.expr = std::make_shared<Expr>(m.parse_expr(sources[t]));
    } catch (const ParseError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    const Expr& e = *term.expr;
    if (term.owner.kind == TermOwner::Kind::Local) {
      m.check_mask(m.endo_index(term.owner.name), e, where, owners);
    } else if (term.owner.kind == TermOwner::Kind::Exo) {
      const int k = m.exo_index(term.owner.name);
      for (std::size_t s = 0; s < e.symbols().size(); ++s) {
        const CoordId c = e.symbols()[s];
        if (m.is_z(c) || (m.is_u(c) && m.exo_of_coord(c) != k)) {
          throw ValidationError("parent-mask violation: symbol '" + to_string(e.symbol_names()[s]) + "' in " + where);
        }
      }
    }
  }

  if (auto it = doc.find("dynamics"); it != doc.end()) {
    if (!it->is_array()) throw ValidationError("model: 'dynamics' must be a list");
    m.field_.assign(std::size_t(m.nz()), nullptr);
    for (const json& d : *it) {
      DynamicsEntry entry;
      entry.var = require_string(d, "var", "dynamics entry");
      const std::string where = "dynamics for '" + entry.var + "'";
      auto i = m.find_endo(entry.var);
      if (!i) throw ValidationError(where + ": no endogenous variable '" + entry.var + "'");
      if (auto c = d.find("component"); c != d.end()) {
        if (!c->is_number_integer()) throw ValidationError(where + ": component must be an integer");
        entry.component = c->get<int>();
      }
      if (entry.component < 0 || entry.component >= m.endo_dim(*i)) throw ValidationError(where + ": component out of range");
      try {
        entry.expr = std::make_shared<Expr>(m.parse_expr(require_string(d, "expr", where)));
      } catch (const ParseError& e) {
        throw ValidationError(where + ": " + e.what());
      }
      m.check_mask(*i, *entry.expr, where, owners);
      const CoordId z = m.z_coord(*i, entry.component);
      if (m.field_[std::size_t(z)]) throw ValidationError(where + ": duplicate field component");
      m.dynamics_.push_back(std::move(entry));
    }
    for (const auto& entry : m.dynamics_) {
      m.field_[std::size_t(m.z_coord(m.endo_index(entry.var), entry.component))] = entry.expr.get();
    }
    for (CoordId z = 0; z < m.nz(); ++z) {
      if (!m.field_[std::size_t(z)]) throw ValidationError("dynamics: no field component for " + m.coord_name(z));
    }
  }

  m.exo_owner_.assign(std::size_t(m.num_exogenous()), -1);
  for (const auto& [k, i] : owners) m.exo_owner_[std::size_t(k)] = i;
  return m;
}

std::string Model::serialize() const {
  json doc = json::object();
  json vars = json::array();
  for (const auto& v : variables_) {
    vars.push_back({{"name", v.name}, {"kind", v.kind == VarKind::Endogenous ? "endogenous" : "exogenous"}, {"dim", v.dim}});
  }
  doc["variables"] = vars;
  json edges = json::array();
  for (const auto& [p, c] : dag_.edges) edges.push_back({p, c});
  doc["edges"] = edges;
  json terms = json::array();
  for (const auto& t : terms_) {
    json params = json::object();
    for (const auto& [name, value] : t.params) params[name] = value;
    terms.push_back({{"owner", t.owner.label()}, {"expr", t.expr->source()}, {"params", params}});
  }
  doc["terms"] = terms;
  if (!dynamics_.empty()) {
    json dyn = json::array();
    for (const auto& d : dynamics_) dyn.push_back({{"var", d.var}, {"component", d.component}, {"expr", d.expr->source()}});
    doc["dynamics"] = dyn;
  }
  return doc.dump(2) + "\n";
}

bool Model::operator==(const Model& other) const {
  if (variables_ != other.variables_ || dag_.edges != other.dag_.edges || terms_.size() != other.terms_.size() ||
      dynamics_.size() != other.dynamics_.size()) {
    return false;
  }
  for (std::size_t t = 0; t < terms_.size(); ++t) {
    const auto& a = terms_[t];
    const auto& b = other.terms_[t];
    if (!(a.owner == b.owner) || a.params != b.params || a.expr->source() != b.expr->source() ||
        a.expr->symbols() != b.expr->symbols()) {
      return false;
    }
  }
  for (std::size_t d = 0; d < dynamics_.size(); ++d) {
    const auto& a = dynamics_[d];
    const auto& b = other.dynamics_[d];
    if (a.var != b.var || a.component != b.component || a.expr->source() != b.expr->source()) return false;
  }
  return true;
}

Model parse_model(std::string_view text) { return Model::parse(text); }

std::vector<std::string> topo_order(const Model& m) {
  std::vector<std::string> out;
  for (int i : m.topo_order()) out.push_back(m.endo_name(i));
  return out;
}

std::set<std::string> descendants(const Model& m, std::string_view a) {
  const auto d = m.descendants(m.endo_index(a));
  std::set<std::string> out;
  for (int i = 0; i < m.num_endogenous(); ++i) {
    if (d[std::size_t(i)]) out.insert(m.endo_name(i));
  }
  return out;
}

std::set<std::string> nondescendants(const Model& m, std::string_view a) {
  const auto d = m.nondescendants(m.endo_index(a));
  std::set<std::string> out;
  for (int i = 0; i < m.num_endogenous(); ++i) {
    if (d[std::size_t(i)]) out.insert(m.endo_name(i));
  }
  return out;
}

}  // namespace escm
