#pragma once

// Energy-structured causal model: variables, DAG, energy terms, parameters.
//
// Coordinates are flattened deterministically into one id space:
//   [ z (endogenous, declaration order, then component) |
//     u (exogenous, same rule) |
//     theta (term declaration order, then parameter name) ]
// A Model is immutable after parsing and safe to share between threads.

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "escm/expr.hpp"

namespace escm {

enum class VarKind { Endogenous, Exogenous };

struct VariableDecl {
  std::string name;
  VarKind kind = VarKind::Endogenous;
  int dim = 1;

  bool operator==(const VariableDecl&) const = default;
};

struct Dag {
  std::vector<std::string> nodes;                            // endogenous names, declaration order
  std::vector<std::pair<std::string, std::string>> edges;    // (parent, child), file order
  std::vector<std::vector<int>> parents;                     // per node, ascending
  std::vector<std::vector<int>> children;                    // per node, ascending
};

struct TermOwner {
  enum class Kind { Local, Exo, Global };
  Kind kind = Kind::Global;
  std::string name;  // variable name; empty for the global term

  // "local:Z1", "exo:U1" or "global".
  std::string label() const;
  // Parameter namespace: the variable name, or "global".
  std::string module() const { return kind == Kind::Global ? "global" : name; }
  static TermOwner parse(std::string_view label);

  bool operator==(const TermOwner&) const = default;
};

struct Parameter {
  std::string module;
  std::string name;
  double default_value = 0.0;
};

struct EnergyTerm {
  TermOwner owner;
  std::shared_ptr<const Expr> expr;
  std::vector<std::pair<std::string, double>> params;  // ascending by name
};

// One component of a declared vector field F_i.
struct DynamicsEntry {
  std::string var;
  int component = 0;
  std::shared_ptr<const Expr> expr;
};

class Model {
 public:
  // Parses and validates a model file (JSON). Throws ValidationError.
  static Model parse(std::string_view json_text);
  // Canonical JSON: sorted keys, shortest round-trip numbers, two-space indent.
  std::string serialize() const;

  const std::vector<VariableDecl>& variables() const { return variables_; }
  const Dag& dag() const { return dag_; }
  const std::vector<EnergyTerm>& terms() const { return terms_; }
  const std::vector<DynamicsEntry>& dynamics() const { return dynamics_; }
  bool has_dynamics() const { return !dynamics_.empty(); }
  const std::vector<Parameter>& parameters() const { return params_; }

  int num_endogenous() const { return int(endo_.size()); }
  int num_exogenous() const { return int(exo_.size()); }
  const std::string& endo_name(int i) const { return variables_[std::size_t(endo_[std::size_t(i)])].name; }
  const std::string& exo_name(int k) const { return variables_[std::size_t(exo_[std::size_t(k)])].name; }
  int endo_dim(int i) const { return variables_[std::size_t(endo_[std::size_t(i)])].dim; }
  int exo_dim(int k) const { return variables_[std::size_t(exo_[std::size_t(k)])].dim; }
  // Throws QueryError for unknown names.
  int endo_index(std::string_view name) const;
  int exo_index(std::string_view name) const;
  std::optional<int> find_endo(std::string_view name) const;
  std::optional<int> find_exo(std::string_view name) const;

  int nz() const { return nz_; }
  int nu() const { return nu_; }
  int ntheta() const { return int(params_.size()); }
  int ncoords() const { return nz_ + nu_ + ntheta(); }
  bool is_z(CoordId c) const { return c >= 0 && c < nz_; }
  bool is_u(CoordId c) const { return c >= nz_ && c < nz_ + nu_; }
  bool is_theta(CoordId c) const { return c >= nz_ + nu_ && c < ncoords(); }

  CoordId z_coord(int endo, int component = 0) const { return z_offset_[std::size_t(endo)] + component; }
  CoordId u_coord(int exo, int component = 0) const { return nz_ + u_offset_[std::size_t(exo)] + component; }
  std::vector<CoordId> z_coords(int endo) const;
  std::vector<CoordId> u_coords(int exo) const;
  std::optional<CoordId> find_theta(std::string_view module, std::string_view name) const;
  // Endogenous variable owning a z coordinate.
  int endo_of(CoordId z) const;
  int exo_of_coord(CoordId u) const;

  // "z.Z1", "z.V[1]", "u.U1", "theta.Z2.a". coord_by_name accepts the same forms.
  std::string coord_name(CoordId c) const;
  CoordId coord_by_name(std::string_view name) const;

  const std::vector<int>& parents(int endo) const { return dag_.parents[std::size_t(endo)]; }
  const std::vector<int>& children(int endo) const { return dag_.children[std::size_t(endo)]; }
  // Parents before children; ties broken by declaration order.
  const std::vector<int>& topo_order() const { return topo_; }
  // Membership flags over endogenous indices. descendants(a) excludes a.
  std::vector<bool> descendants(int endo) const;
  std::vector<bool> nondescendants(int endo) const;

  int local_term(int endo) const { return local_term_[std::size_t(endo)]; }
  std::optional<int> exo_term(int exo) const;
  std::optional<int> global_term() const { return global_term_; }
  // Endogenous variable whose mechanism reads this exogenous variable, if any.
  std::optional<int> exo_owner(int exo) const;
  std::vector<int> exogenous_of(int endo) const;

  // theta_i: parameters declared under module i plus those read by its local term
  // (static) or its declared dynamics (dynamic). Ascending coordinate order.
  std::vector<CoordId> module_params(int endo, bool dynamic = false) const;
  // Module whose namespace declares the parameter; nullopt for global parameters.
  std::optional<int> param_owner(CoordId theta) const;
  Eigen::VectorXd default_theta() const;

  // Field component F for a z coordinate; null when dynamics are absent.
  const Expr* field(CoordId z) const;

  // Unrestricted expression over this model's symbols (readouts, control energies).
  Expr parse_expr(std::string_view text, bool allow_control = false) const;
  // Replacement local term for `endo`, checked against its parent mask.
  std::shared_ptr<const Expr> parse_local_expr(int endo, std::string_view text) const;
  // Replacement dynamics component for `endo`, checked against its parent mask.
  std::shared_ptr<const Expr> parse_field_expr(int endo, std::string_view text) const;

  // Field-by-field structural equality (used for round-trip checks).
  bool operator==(const Model& other) const;

 private:
  void build_layout();
  void build_graph();
  void check_mask(int endo, const Expr& e, const std::string& where, std::map<int, int>& exo_owner) const;
  CoordId resolve(const SymbolName& s, std::size_t pos, bool allow_control) const;

  std::vector<VariableDecl> variables_;
  std::vector<int> endo_, exo_;  // indices into variables_
  Dag dag_;
  std::vector<EnergyTerm> terms_;
  std::vector<DynamicsEntry> dynamics_;
  std::vector<Parameter> params_;

  int nz_ = 0, nu_ = 0;
  std::vector<int> z_offset_, u_offset_;
  std::vector<int> topo_;
  std::vector<int> local_term_;
  std::vector<int> exo_term_;  // -1 when absent
  std::optional<int> global_term_;
  std::vector<int> exo_owner_;  // -1 when unowned
  std::vector<const Expr*> field_;
};

// Free-function forms of the graph queries, by name.
Model parse_model(std::string_view text);
std::vector<std::string> topo_order(const Model& m);
std::set<std::string> descendants(const Model& m, std::string_view a);
std::set<std::string> nondescendants(const Model& m, std::string_view a);

}  // namespace escm
