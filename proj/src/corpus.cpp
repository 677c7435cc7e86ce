#include "escm/corpus.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <random>

#include "escm/error.hpp"
#include "escm/model.hpp"
#include "json.hpp"

namespace escm {

namespace {

using json = nlohmann::json;

std::string node(int i) { return "Z" + std::to_string(i + 1); }
std::string exo(int i) { return "U" + std::to_string(i + 1); }

std::string number(double x) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

// Portable draws from raw generator output.
struct Draw {
  std::mt19937_64 rng;
  explicit Draw(std::uint64_t seed) : rng(seed) {}
  int integer(int lo, int hi) { return lo + int(rng() % std::uint64_t(hi - lo + 1)); }
  double milli(int lo, int hi) { return double(integer(lo, hi)) / 1000.0; }
  bool bernoulli(double p) { return double(rng() >> 11) * 0x1.0p-53 < p; }
  // Nonzero coefficient with magnitude in [lo, hi] thousandths.
  double signed_milli(int lo, int hi) {
    const double v = milli(lo, hi);
    return bernoulli(0.5) ? v : -v;
  }
};

QuadraticDag random_dag(Draw& d, int n, double density) {
  QuadraticDag g;
  g.n = n;
  g.parents.resize(std::size_t(n));
  g.extra.resize(std::size_t(n));
  g.extra_params.resize(std::size_t(n));
  for (int i = 0; i < n; ++i) {
    g.w.push_back(d.milli(500, 2000));
    for (int j = 0; j < i; ++j) {
      if (d.bernoulli(density)) g.parents[std::size_t(i)].emplace_back(j, d.signed_milli(100, 1000));
    }
  }
  return g;
}

}  // namespace

std::string QuadraticDag::model_json() const {
  json vars = json::array(), edges = json::array(), terms = json::array();
  for (int i = 0; i < n; ++i) vars.push_back({{"name", node(i)}, {"kind", "endogenous"}});
  for (int i = 0; i < n; ++i) vars.push_back({{"name", exo(i)}, {"kind", "exogenous"}});
  for (int i = 0; i < n; ++i) {
    const std::string Z = node(i);
    std::string drive;
    json params = {{"w", w[std::size_t(i)]}};
    for (const auto& [j, b] : parents[std::size_t(i)]) {
      edges.push_back({node(j), Z});
      drive += " - theta." + Z + ".b_" + node(j) + "*z." + node(j);
      params["b_" + node(j)] = b;
    }
    if (i < int(extra_params.size())) {
      for (const auto& [name, v] : extra_params[std::size_t(i)]) params[name] = v;
    }
    std::string e = "0.5*theta." + Z + ".w*sq(z." + Z + drive + " - u." + exo(i) + ")";
    if (i < int(extra.size())) e += extra[std::size_t(i)];
    terms.push_back({{"owner", "local:" + Z}, {"expr", e}, {"params", params}});
  }
  for (int i = 0; i < n; ++i) terms.push_back({{"owner", "exo:" + exo(i)}, {"expr", "0.5*sq(u." + exo(i) + ")"}});
  if (!global.empty()) terms.push_back({{"owner", "global"}, {"expr", global}});
  const json doc = {{"variables", vars}, {"edges", edges}, {"terms", terms}};
  return Model::parse(doc.dump()).serialize();
}

std::vector<bool> QuadraticDag::nondescendants(int a) const {
  std::vector<bool> desc(std::size_t(n), false);
  desc[std::size_t(a)] = true;
  // Parents always have smaller indices, so one ascending sweep closes the set.
  for (int i = a + 1; i < n; ++i) {
    for (const auto& [j, b] : parents[std::size_t(i)]) {
      if (desc[std::size_t(j)]) desc[std::size_t(i)] = true;
    }
  }
  std::vector<bool> nd(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) nd[std::size_t(i)] = !desc[std::size_t(i)];
  return nd;
}

Eigen::VectorXd QuadraticDag::forward(const Eigen::VectorXd& u) const {
  Eigen::VectorXd z(n);
  for (int i = 0; i < n; ++i) {
    double v = u[i];
    for (const auto& [j, b] : parents[std::size_t(i)]) v += b * z[j];
    z[i] = v;
  }
  return z;
}

std::vector<CorpusModel> generate_corpus(const CorpusOptions& opt) {
  if (opt.count < 0 || opt.count > 10000) throw QueryError("corpus count must lie in [0, 10000]");
  if (opt.min_nodes < 1 || opt.max_nodes < opt.min_nodes || opt.max_nodes > 64) {
    throw QueryError("node range must satisfy 1 <= min_nodes <= max_nodes <= 64");
  }
  if (!(opt.density >= 0.0 && opt.density <= 1.0)) throw QueryError("density must lie in [0, 1]");
  if (opt.contexts < 0 || opt.contexts > 10000) throw QueryError("contexts must lie in [0, 10000]");
  Draw d(opt.seed);
  std::vector<CorpusModel> out;
  for (int k = 0; k < opt.count; ++k) {
    CorpusModel m;
    char name[32];
    std::snprintf(name, sizeof name, "model_%03d", k);
    m.name = name;
    m.dag = random_dag(d, d.integer(opt.min_nodes, opt.max_nodes), opt.density);
    m.model_json = m.dag.model_json();
    for (int c = 0; c < opt.contexts; ++c) {
      Eigen::VectorXd u(m.dag.n);
      for (int i = 0; i < m.dag.n; ++i) u[i] = d.milli(-2000, 2000);
      m.z.push_back(m.dag.forward(u));
      m.u.push_back(std::move(u));
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::string fixture_json(const CorpusModel& m) {
  json contexts = json::array();
  for (std::size_t c = 0; c < m.u.size(); ++c) {
    contexts.push_back({{"u", std::vector<double>(m.u[c].data(), m.u[c].data() + m.u[c].size())},
                        {"z", std::vector<double>(m.z[c].data(), m.z[c].data() + m.z[c].size())}});
  }
  return json{{"model", m.name}, {"contexts", contexts}}.dump(2) + "\n";
}

std::vector<std::string> write_corpus(const std::string& dir, const std::vector<CorpusModel>& corpus,
                                      const CorpusOptions& opt) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw QueryError("cannot create corpus directory '" + dir + "': " + ec.message());
  std::vector<std::string> written;
  auto put = [&](const std::string& file, const std::string& text) {
    const std::string path = (fs::path(dir) / file).string();
    std::ofstream f(path, std::ios::binary);
    f << text;
    if (!f) throw QueryError("cannot write '" + path + "'");
    written.push_back(path);
  };
  json names = json::array();
  for (const auto& m : corpus) {
    put(m.name + ".json", m.model_json);
    put(m.name + ".fixture.json", fixture_json(m));
    names.push_back(m.name);
  }
  const json manifest = {{"count", opt.count},     {"min_nodes", opt.min_nodes}, {"max_nodes", opt.max_nodes},
                         {"density", opt.density}, {"contexts", opt.contexts},   {"seed", opt.seed},
                         {"models", names}};
  put("manifest.json", manifest.dump(2) + "\n");
  return written;
}

// ---- planted violations ------------------------------------------------------------

const char* plant_name(PlantKind k) {
  switch (k) {
    case PlantKind::Clean: return "clean";
    case PlantKind::LapState: return "lap-state";
    case PlantKind::LapParam: return "lap-param";
    case PlantKind::IcmFirst: return "icm-first";
    case PlantKind::IcmMixed: return "icm-mixed";
  }
  return "?";
}

std::vector<PlantedCase> planted_corpus(int count, std::uint64_t seed) {
  if (count < 0) throw QueryError("planted corpus count must be non-negative");
  Draw d(seed);
  std::vector<PlantedCase> out;
  for (int k = 0; k < count; ++k) {
    PlantedCase pc;
    pc.kind = PlantKind(k % 5);
    const bool needs_edge = pc.kind == PlantKind::IcmFirst || pc.kind == PlantKind::IcmMixed;
    do {
      pc.dag = random_dag(d, d.integer(3, 6), 0.5);
    } while (needs_edge && [&] {
      for (const auto& p : pc.dag.parents) {
        if (!p.empty()) return false;
      }
      return true;
    }());
    QuadraticDag& g = pc.dag;
    const double c = d.signed_milli(100, 2000);
    switch (pc.kind) {
      case PlantKind::Clean:
        break;
      case PlantKind::LapState: {
        const int p = d.integer(0, g.n - 1);
        int q = d.integer(0, g.n - 2);
        if (q >= p) ++q;
        g.global = number(c) + "*z." + node(p) + "*z." + node(q);
        if (g.nondescendants(q)[std::size_t(p)]) pc.expected.push_back({ExpectedFlag::Block::LapZ, q, p, "", "", c});
        if (g.nondescendants(p)[std::size_t(q)]) pc.expected.push_back({ExpectedFlag::Block::LapZ, p, q, "", "", c});
        break;
      }
      case PlantKind::LapParam: {
        // Every lower-indexed node is a non-descendant of a.
        const int a = d.integer(1, g.n - 1);
        const auto nd = g.nondescendants(a);
        std::vector<int> pool;
        for (int i = 0; i < g.n; ++i) {
          if (nd[std::size_t(i)]) pool.push_back(i);
        }
        const int i = pool[std::size_t(d.integer(0, int(pool.size()) - 1))];
        g.extra_params[std::size_t(a)].emplace_back("k", d.milli(500, 2000));
        g.extra[std::size_t(i)] = " + " + number(c) + "*theta." + node(a) + ".k*z." + node(i);
        pc.expected.push_back({ExpectedFlag::Block::LapTheta, a, i, "theta." + node(a) + ".k", "", c});
        break;
      }
      case PlantKind::IcmFirst:
      case PlantKind::IcmMixed: {
        std::vector<int> pool;
        for (int i = 0; i < g.n; ++i) {
          if (!g.parents[std::size_t(i)].empty()) pool.push_back(i);
        }
        const int i = pool[std::size_t(d.integer(0, int(pool.size()) - 1))];
        const auto& ps = g.parents[std::size_t(i)];
        const int p = ps[std::size_t(d.integer(0, int(ps.size()) - 1))].first;
        g.extra_params[std::size_t(p)].emplace_back("k", d.milli(500, 2000));
        const std::string k = "theta." + node(p) + ".k";
        if (pc.kind == PlantKind::IcmFirst) {
          g.extra[std::size_t(i)] = " + " + number(c) + "*" + k + "*z." + node(i);
          pc.expected.push_back({ExpectedFlag::Block::IcmFirst, i, i, k, "", c});
        } else {
          const std::string w = "theta." + node(i) + ".w";
          g.extra[std::size_t(i)] = " + " + number(c) + "*" + k + "*" + w + "*z." + node(i);
          pc.expected.push_back({ExpectedFlag::Block::IcmFirst, i, i, k, "", c * g.w[std::size_t(i)]});
          pc.expected.push_back({ExpectedFlag::Block::IcmMixed, i, i, k, w, c});
        }
        break;
      }
    }
    pc.model_json = g.model_json();
    out.push_back(std::move(pc));
  }
  return out;
}

}  // namespace escm
