#pragma once

// Seeded random models for derivative property checks. Expressions mix every grammar
// construct but stay inside their domains for arguments of moderate size
// (logs and negative powers only see strictly positive arguments).

#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "escm/energy.hpp"
#include "escm/model.hpp"

namespace escm::testing {

class RandomExprGen {
 public:
  explicit RandomExprGen(std::mt19937_64& rng) : rng_(rng) {}

  std::string expr(int depth, const std::vector<std::string>& symbols) {
    if (depth == 0 || pick(5) == 0) return leaf(symbols);
    const int op = pick(11);
    // Operands are generated before concatenation so the draw order is fixed.
    const std::string l = expr(depth - 1, symbols);
    const std::string r = op <= 2 || op == 7 ? expr(depth - 1, symbols) : "";
    switch (op) {
      case 0: return "(" + l + " + " + r + ")";
      case 1: return "(" + l + " - " + r + ")";
      case 2: return l + "*" + r;
      case 3: return "sq(" + l + ")";
      case 4: return "tanh(" + l + ")";
      case 5: return "exp(tanh(" + l + "))";
      case 6: return "log(1 + sq(" + l + "))";
      case 7: return l + "/(1 + sq(" + r + "))";
      case 8: return "pow(" + l + ", " + std::to_string(2 + pick(2)) + ")";
      case 9: return "pow(1.5 + tanh(" + l + "), -2)";
      default: return "-" + l;
    }
  }

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int pick(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng_); }

 private:
  std::string leaf(const std::vector<std::string>& symbols) {
    if (symbols.empty() || pick(4) == 0) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3g", uniform(0.1, 2.0));
      return buf;
    }
    return symbols[std::size_t(pick(int(symbols.size())))];
  }

  std::mt19937_64& rng_;
};

struct RandomModelOptions {
  int max_nodes = 4;
  int depth = 3;
  bool global = true;
  int max_dim = 2;
};

// A random valid model file: DAG, vector-valued variables, per-module parameters,
// exogenous priors and (optionally) a global term over everything.
inline std::string random_model_json(std::mt19937_64& rng, const RandomModelOptions& opt = {}) {
  RandomExprGen g(rng);
  const int n = 1 + g.pick(opt.max_nodes);
  std::vector<int> dim(static_cast<std::size_t>(n));
  std::vector<std::vector<int>> parents(static_cast<std::size_t>(n));
  std::string vars, edges, terms;
  auto comma = [](std::string& s) {
    if (!s.empty()) s += ",";
  };
  auto syms = [&](char kind, const std::string& name, int d) {
    std::vector<std::string> out;
    for (int k = 0; k < d; ++k) {
      out.push_back(std::string(1, kind) + "." + name + (d > 1 ? "[" + std::to_string(k) + "]" : ""));
    }
    return out;
  };
  std::vector<std::string> all;
  for (int i = 0; i < n; ++i) {
    dim[std::size_t(i)] = 1 + g.pick(opt.max_dim);
    comma(vars);
    vars += R"({"name":"Z)" + std::to_string(i) + R"(","kind":"endogenous","dim":)" + std::to_string(dim[std::size_t(i)]) + "}";
    comma(vars);
    vars += R"({"name":"U)" + std::to_string(i) + R"(","kind":"exogenous","dim":1})";
    for (int p = 0; p < i; ++p) {
      if (g.pick(2) == 0) {
        parents[std::size_t(i)].push_back(p);
        comma(edges);
        edges += R"(["Z)" + std::to_string(p) + R"(","Z)" + std::to_string(i) + R"("])";
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    const std::string zi = "Z" + std::to_string(i), ui = "U" + std::to_string(i);
    std::vector<std::string> s = syms('z', zi, dim[std::size_t(i)]);
    for (int p : parents[std::size_t(i)]) {
      auto ps = syms('z', "Z" + std::to_string(p), dim[std::size_t(p)]);
      s.insert(s.end(), ps.begin(), ps.end());
    }
    s.push_back("u." + ui);
    s.push_back("theta." + zi + ".a");
    s.push_back("theta." + zi + ".b");
    all.insert(all.end(), s.begin(), s.end());
    // A convex anchor keeps typical energies bounded below; the random part adds structure.
    std::string local = "0.5*sq(z." + zi + (dim[std::size_t(i)] > 1 ? "[0]" : "") + ") + " + g.expr(opt.depth, s);
    char a[32], b[32];
    std::snprintf(a, sizeof a, "%.3g", g.uniform(-1.5, 1.5));
    std::snprintf(b, sizeof b, "%.3g", g.uniform(-1.5, 1.5));
    comma(terms);
    terms += R"({"owner":"local:)" + zi + R"(","expr":")" + local + R"(","params":{"a":)" + a + R"(,"b":)" + b + "}}";
    comma(terms);
    std::snprintf(a, sizeof a, "%.3g", g.uniform(0.5, 2.0));
    terms += R"({"owner":"exo:)" + ui + R"(","expr":"0.5*theta.)" + ui + ".s*sq(u." + ui + R"J()","params":{"s":)J" + a + "}}";
  }
  if (opt.global && g.pick(2) == 0) {
    all.push_back("theta.global.g");
    comma(terms);
    terms += R"({"owner":"global","expr":")" + g.expr(opt.depth, all) + R"(","params":{"g":0.7}})";
  }
  return R"({"variables":[)" + vars + R"(],"edges":[)" + edges + R"(],"terms":[)" + terms + "]}";
}

inline Point random_point(const Model& m, std::mt19937_64& rng, double scale = 1.0) {
  Point p(m);
  std::uniform_real_distribution<double> d(-scale, scale);
  for (CoordId c = 0; c < m.nz() + m.nu(); ++c) p[c] = d(rng);
  return p;
}

// Separable model whose mechanisms are strictly convex but nonlinear in parents and z_i.
inline std::string convex_model(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<> U(-1, 1), W(0.5, 2);
  auto num = [](double x) { return "(" + std::to_string(x) + ")"; };
  std::string vars, edges, terms;
  for (int i = 0; i < n; ++i) {
    const std::string Z = "Z" + std::to_string(i), Uv = "U" + std::to_string(i);
    vars += (i ? ", " : "") + std::string("{\"name\": \"") + Z + "\", \"kind\": \"endogenous\"}, {\"name\": \"" + Uv +
            "\", \"kind\": \"exogenous\"}";
    std::string drive = "0";
    for (int j = 0; j < i; ++j) {
      if (rng() % 2) continue;
      edges += std::string(edges.empty() ? "" : ", ") + "[\"Z" + std::to_string(j) + "\", \"" + Z + "\"]";
      drive += " + " + num(U(rng)) + (j % 2 ? "*tanh(z.Z" : "*sq(z.Z") + std::to_string(j) + ")";
    }
    const std::string e = "0.5*theta." + Z + ".w*sq(z." + Z + " - " + drive + " - u." + Uv + ") + " + num(0.1 * W(rng)) +
                          "*pow(z." + Z + " - " + drive + " - u." + Uv + ", 4)";
    terms += (i ? ", " : "") + std::string("{\"owner\": \"local:") + Z + "\", \"expr\": \"" + e + "\", \"params\": {\"w\": " +
             std::to_string(W(rng)) + "}}, {\"owner\": \"exo:" + Uv + "\", \"expr\": \"0.5*sq(u." + Uv + ")\"}";
  }
  return "{\"variables\": [" + vars + "], \"edges\": [" + edges + "], \"terms\": [" + terms + "]}";
}

}  // namespace escm::testing
