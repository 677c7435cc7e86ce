#pragma once

#include <string>

#include "escm/model.hpp"

namespace escm::testing {

inline const char* kChain2 = R"J({
  "variables": [
    {"name": "Z1", "kind": "endogenous", "dim": 1},
    {"name": "Z2", "kind": "endogenous", "dim": 1},
    {"name": "U1", "kind": "exogenous", "dim": 1},
    {"name": "U2", "kind": "exogenous", "dim": 1}
  ],
  "edges": [["Z1", "Z2"]],
  "terms": [
    {"owner": "local:Z1", "expr": "0.5*sq(z.Z1 - u.U1)", "params": {}},
    {"owner": "local:Z2", "expr": "0.5*sq(z.Z2 - theta.Z2.a*z.Z1 - u.U2)", "params": {"a": 2}},
    {"owner": "exo:U1", "expr": "0.5*sq(u.U1)", "params": {}},
    {"owner": "exo:U2", "expr": "0.5*sq(u.U2)", "params": {}}
  ]
})J";

// chain2 plus an unconnected Z3 (with its own U3) and a global coupling term.
inline std::string chain2_with_z3(const std::string& global_expr) {
  std::string g = global_expr.empty() ? "" : R"J(,
    {"owner": "global", "expr": ")J" + global_expr + R"J(", "params": {}})J";
  return R"J({
  "variables": [
    {"name": "Z1", "kind": "endogenous"},
    {"name": "Z2", "kind": "endogenous"},
    {"name": "Z3", "kind": "endogenous"},
    {"name": "U1", "kind": "exogenous"},
    {"name": "U2", "kind": "exogenous"},
    {"name": "U3", "kind": "exogenous"}
  ],
  "edges": [["Z1", "Z2"]],
  "terms": [
    {"owner": "local:Z1", "expr": "0.5*sq(z.Z1 - u.U1)"},
    {"owner": "local:Z2", "expr": "0.5*sq(z.Z2 - theta.Z2.a*z.Z1 - u.U2)", "params": {"a": 2}},
    {"owner": "local:Z3", "expr": "0.5*sq(z.Z3 - u.U3)"},
    {"owner": "exo:U1", "expr": "0.5*sq(u.U1)"},
    {"owner": "exo:U2", "expr": "0.5*sq(u.U2)"},
    {"owner": "exo:U3", "expr": "0.5*sq(u.U3)"})J" + g + R"J(
  ]
})J";
}

inline Model chain2() { return Model::parse(kChain2); }

// chain2 with declared dynamics F1, F2.
inline std::string chain2_dynamics(const std::string& f1 = "-(z.Z1 - u.U1)",
                                   const std::string& f2 = "-(z.Z2 - theta.Z2.a*z.Z1 - u.U2)") {
  std::string s = kChain2;
  const std::string tail = "\n  ]\n}";
  s.replace(s.rfind(tail), tail.size(),
            "\n  ],\n  \"dynamics\": [{\"var\": \"Z1\", \"expr\": \"" + f1 + "\"}, {\"var\": \"Z2\", \"expr\": \"" + f2 + "\"}]\n}");
  return s;
}

// One endogenous variable Z1 (with exogenous U1) whose local term is `expr`.
inline std::string single(const std::string& expr, const std::string& params = "{}") {
  return R"J({
  "variables": [{"name": "Z1", "kind": "endogenous"}, {"name": "U1", "kind": "exogenous"}],
  "edges": [],
  "terms": [{"owner": "local:Z1", "expr": ")J" + expr + R"J(", "params": )J" + params + R"J(}]
})J";
}

}  // namespace escm::testing
