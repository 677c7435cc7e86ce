#include "escm/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "escm/causal.hpp"
#include "escm/corpus.hpp"
#include "escm/diagnostics.hpp"
#include "escm/dynamics.hpp"
#include "escm/error.hpp"
#include "escm/reduction.hpp"
#include "json.hpp"

namespace escm::cli {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

using json = nlohmann::json;

std::string hex_digest(std::string_view bytes) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw QueryError("cannot read '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Inline JSON, or @path for a file.
json read_json(const std::string& text, const std::string& what) {
  const std::string body = !text.empty() && text[0] == '@' ? slurp(text.substr(1)) : text;
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    throw QueryError("malformed JSON in " + what + ": " + e.what());
  }
}

json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json mat(const Eigen::MatrixXd& a) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < a.rows(); ++r) rows.push_back(vec(a.row(r).transpose()));
  return rows;
}

json names(const Model& m, const std::vector<CoordId>& cs) {
  json out = json::array();
  for (CoordId c : cs) out.push_back(m.coord_name(c));
  return out;
}

// z and u coordinates of a point, by name.
json state(const Model& m, const Point& p) {
  json out = json::object();
  for (CoordId c = 0; c < m.nz() + m.nu(); ++c) out[m.coord_name(c)] = p[c];
  return out;
}

json theta(const Model& m, const Point& p) {
  json out = json::object();
  for (CoordId c = m.nz() + m.nu(); c < m.ncoords(); ++c) out[m.coord_name(c)] = p[c];
  return out;
}

double number(const json& j, const std::string& what) {
  if (!j.is_number()) throw QueryError(what + " must be a number");
  return j.get<double>();
}

Eigen::VectorXd vector_value(const json& j, const std::string& what) {
  if (j.is_number()) return Eigen::VectorXd::Constant(1, j.get<double>());
  if (!j.is_array() || j.empty()) throw QueryError(what + " must be a number or a non-empty array of numbers");
  Eigen::VectorXd v(Eigen::Index(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v[Eigen::Index(k)] = number(j[k], what);
  return v;
}

std::string text(const json& j, const std::string& what) {
  if (!j.is_string()) throw QueryError(what + " must be a string");
  return j.get<std::string>();
}

const json& field(const json& obj, const char* key, const std::string& what) {
  if (!obj.is_object() || !obj.contains(key)) throw QueryError(what + " needs \"" + key + "\"");
  return obj.at(key);
}

// coordinate name -> value; arrays expand to name[0], name[1], ...
ClampSet coord_values(const Model& m, const json& j, const std::string& what) {
  if (!j.is_object()) throw QueryError(what + " must be an object mapping coordinates to values");
  ClampSet out;
  for (const auto& [k, v] : j.items()) {
    if (v.is_array()) {
      for (std::size_t c = 0; c < v.size(); ++c) {
        out[m.coord_by_name(k + "[" + std::to_string(c) + "]")] = number(v[c], what + " entry " + k);
      }
    } else {
      out[m.coord_by_name(k)] = number(v, what + " entry " + k);
    }
  }
  return out;
}

// Context values split into state clamps and parameter overrides.
struct Context {
  ClampSet state;
  ClampSet theta;

  Point point(const Model& m) const {
    Point p(m);
    for (const auto& [c, v] : state) p[c] = v;
    for (const auto& [c, v] : theta) p[c] = v;
    return p;
  }
  Point theta_point(const Model& m) const {
    Point p(m);
    for (const auto& [c, v] : theta) p[c] = v;
    return p;
  }
};

Context read_context(const Model& m, const json& j, const std::string& what) {
  Context ctx;
  for (const auto& [c, v] : coord_values(m, j, what)) (m.is_theta(c) ? ctx.theta : ctx.state)[c] = v;
  return ctx;
}

Surgery read_surgery(const json& s) {
  const std::string kind = text(field(s, "kind", "surgery"), "surgery kind");
  const std::string target = text(field(s, "target", "surgery"), "surgery target");
  if (kind == "hard") return HardSurgery{target, vector_value(field(s, "value", "hard surgery"), "hard surgery value")};
  if (kind == "soft") {
    return SoftSurgery{target, number(field(s, "lambda", "soft surgery"), "soft surgery lambda"),
                       text(field(s, "replacement", "soft surgery"), "soft surgery replacement")};
  }
  throw QueryError("surgery kind must be \"hard\" or \"soft\", got \"" + kind + "\"");
}

std::vector<Surgery> read_surgeries(const json& j) {
  std::vector<Surgery> out;
  if (j.is_null()) return out;
  if (j.is_object()) return {read_surgery(j)};
  if (!j.is_array()) throw QueryError("surgeries must be an object or an array of objects");
  for (const auto& s : j) out.push_back(read_surgery(s));
  return out;
}

DynSurgery read_dyn_surgery(const json& s) {
  const std::string kind = text(field(s, "kind", "surgery"), "surgery kind");
  const std::string target = text(field(s, "target", "surgery"), "surgery target");
  if (kind == "hard") {
    DynHardSurgery h{target, vector_value(field(s, "value", "hard surgery"), "hard surgery value")};
    if (s.contains("gain")) h.gain = number(s.at("gain"), "gain");
    return h;
  }
  if (kind == "soft") {
    DynSoftSurgery d{target, number(field(s, "lambda", "soft surgery"), "soft surgery lambda"), {}};
    const json& r = field(s, "replacement", "soft surgery");
    if (r.is_array()) {
      for (const auto& e : r) d.replacement.push_back(text(e, "replacement component"));
    } else {
      d.replacement.push_back(text(r, "soft surgery replacement"));
    }
    return d;
  }
  throw QueryError("surgery kind must be \"hard\" or \"soft\", got \"" + kind + "\"");
}

std::vector<DynSurgery> read_dyn_surgeries(const json& j) {
  std::vector<DynSurgery> out;
  if (j.is_null()) return out;
  if (j.is_object()) return {read_dyn_surgery(j)};
  if (!j.is_array()) throw QueryError("surgeries must be an object or an array of objects");
  for (const auto& s : j) out.push_back(read_dyn_surgery(s));
  return out;
}

double unit(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }

// n points with z, u uniform in [-1, 1] and theta from ctx; one context point when n = 0.
std::vector<Point> sample_points(const Model& m, const Context& ctx, int n, std::optional<std::uint64_t> seed) {
  if (n < 0) throw QueryError("--samples must be non-negative");
  if (n == 0) return {ctx.point(m)};
  if (!seed) throw QueryError("--samples draws random points and requires --seed");
  std::mt19937_64 rng(*seed);
  std::vector<Point> pts;
  for (int k = 0; k < n; ++k) {
    Point p = ctx.theta_point(m);
    for (CoordId c = 0; c < m.nz() + m.nu(); ++c) p[c] = 2.0 * unit(rng) - 1.0;
    pts.push_back(std::move(p));
  }
  return pts;
}

struct Args {
  std::string model;
  std::string context = "{}";
  std::string surgery = "[]";
  std::string evidence;
  std::string query;
  std::string gauge;
  std::string out;
  std::string init = "zeros";
  std::string family = "shift";
  std::vector<std::string> heads, wrt, samplers, stats, targets;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  int trials = -1;
  int samples = 0;
  int max_iter = 200;
  int count = 10, nodes = 0, min_nodes = 2, max_nodes = 8, contexts = 10;
  int record_every = 1;
  double tol = -1.0;
  double grad_tol = 1e-10;
  double t_end = 10.0, dt = 0.01;
  double density = 0.5, u_scale = 2.0;
  bool no_timing = false;
  bool gradient_flow = false, steady = false;
  bool per_trial = false, no_obs = false, no_hard = false, no_soft = false;
  bool metric = false, values = false;
  std::string dynamics = "none";

  double tolerance(double fallback) const { return tol >= 0.0 ? tol : fallback; }
  SolverConfig solver() const {
    SolverConfig cfg;
    cfg.tol_grad = grad_tol;
    cfg.max_iter = max_iter;
    cfg.init = init == "forward-scm" ? InitMode::ForwardScm : InitMode::Zeros;
    return cfg;
  }
};

// Loads the model once; validation errors after this point belong to the query.
struct Session {
  const Args& a;
  std::optional<Model> model;

  const Model& load() {
    if (!model) model.emplace(Model::parse(slurp(a.model)));
    return *model;
  }
};

// ---- commands ------------------------------------------------------------------------

json cmd_validate(Session& s) {
  const Model& m = s.load();
  json vars = json::array();
  for (const auto& v : m.variables()) {
    vars.push_back({{"name", v.name}, {"kind", v.kind == VarKind::Endogenous ? "endogenous" : "exogenous"}, {"dim", v.dim}});
  }
  json edges = json::array();
  for (const auto& [p, c] : m.dag().edges) edges.push_back({p, c});
  json labels = json::array();
  for (const auto& t : m.terms()) labels.push_back(t.owner.label());
  json params = json::array();
  for (CoordId c = m.nz() + m.nu(); c < m.ncoords(); ++c) params.push_back(m.coord_name(c));
  return {{"valid", true},
          {"variables", vars},
          {"edges", edges},
          {"topo_order", topo_order(m)},
          {"terms", labels},
          {"parameters", params},
          {"global_term", m.global_term().has_value()},
          {"dynamics", m.has_dynamics()},
          {"dimensions", {{"z", m.nz()}, {"u", m.nu()}, {"theta", m.ntheta()}}}};
}

json equilibrium_json(const Model& m, const Equilibrium& eq) {
  json clamped = json::object();
  for (const auto& [c, v] : eq.clamps) clamped[m.coord_name(c)] = v;
  return {{"z", vec(eq.point.z())},
          {"state", state(m, eq.point)},
          {"energy", eq.energy},
          {"residual", eq.residual},
          {"iterations", eq.iterations},
          {"hessian_pd", eq.hessian_pd},
          {"condition_number", eq.condition_number},
          {"free", names(m, eq.free)},
          {"clamped", clamped}};
}

json cmd_solve(Session& s) {
  const Model& m = s.load();
  const Context ctx = read_context(m, read_json(s.a.context, "--context"), "--context");
  const auto surgeries = read_surgeries(read_json(s.a.surgery, "--surgery"));
  const EditedEnergy edit = apply_surgery(m, surgeries);
  ClampSet clamps = edit.clamps;
  for (const auto& [c, v] : ctx.state) {
    if (clamps.count(c)) throw QueryError(m.coord_name(c) + " is set by both the context and a hard surgery");
    clamps[c] = v;
  }
  std::vector<CoordId> free;
  for (CoordId c = 0; c < m.nz() + m.nu(); ++c) {
    if (!clamps.count(c)) free.push_back(c);
  }
  SolverConfig cfg = s.a.solver();
  cfg.start = ctx.theta_point(m);
  const Equilibrium eq = solve(m, edit.objective, clamps, free, cfg);
  json r = equilibrium_json(m, eq);
  json desc = json::array();
  for (const auto& sg : surgeries) desc.push_back(describe(sg));
  r["surgeries"] = desc;
  r["theta"] = theta(m, eq.point);
  return r;
}

json cmd_abduct(Session& s) {
  const Model& m = s.load();
  const Context ctx = read_context(m, read_json(s.a.evidence, "--evidence"), "--evidence");
  SolverConfig cfg = s.a.solver();
  cfg.start = ctx.theta_point(m);
  const Explanation ex = abduct(m, ctx.state, cfg);
  return {{"u_hat", vec(ex.point.u())}, {"z", vec(ex.point.z())},   {"state", state(m, ex.point)},
          {"selector", ex.selector},    {"free", names(m, ex.free)}, {"residual", ex.residual},
          {"iterations", ex.iterations}, {"hessian_pd", ex.hessian_pd}, {"energy", ex.energy}};
}

json cmd_counterfactual(Session& s) {
  const Model& m = s.load();
  const json q = read_json(s.a.query, "--query");
  if (!q.is_object()) throw QueryError("query must be a JSON object");
  const Context ctx = read_context(m, q.value("evidence", json::object()), "evidence");
  const auto surgeries = read_surgeries(q.value("surgeries", json::array()));
  Readouts readouts;
  const json ro = q.value("readouts", json::object());
  if (!ro.is_object()) throw QueryError("readouts must be an object mapping names to expressions");
  for (const auto& [k, v] : ro.items()) readouts.emplace_back(k, text(v, "readout " + k));
  std::optional<std::vector<CoordId>> hold;
  if (q.contains("hold") && !q.at("hold").is_null()) {
    if (!q.at("hold").is_array()) throw QueryError("hold must be an array of coordinate names");
    hold.emplace();
    for (const auto& h : q.at("hold")) hold->push_back(m.coord_by_name(text(h, "hold entry")));
  }
  SolverConfig cfg = s.a.solver();
  cfg.start = ctx.theta_point(m);
  const CounterfactualResult r = counterfactual(m, ctx.state, surgeries, readouts, hold, cfg);
  json values = json::object();
  for (const auto& [k, v] : r.readouts) values[k] = v;
  json desc = json::array();
  for (const auto& sg : r.surgeries) desc.push_back(describe(sg));
  return {{"pre", state(m, r.pre)},
          {"post", state(m, r.post)},
          {"u_hat", vec(r.pre.u())},
          {"z_pre", vec(r.pre.z())},
          {"z_post", vec(r.post.z())},
          {"readouts", values},
          {"held", names(m, r.partition.held)},
          {"free", names(m, r.partition.free)},
          {"surgeries", desc},
          {"post_energy", r.post_energy},
          {"residual", r.residual},
          {"iterations", r.iterations},
          {"hessian_pd", r.hessian_pd}};
}

json cmd_disjunct(Session& s) {
  const Model& m = s.load();
  const json q = read_json(s.a.query, "--query");
  if (!q.is_object()) throw QueryError("query must be a JSON object");
  const Context ctx = read_context(m, q.value("evidence", json::object()), "evidence");
  const std::string target = text(field(q, "target", "disjunctive query"), "target");
  const std::string readout = text(field(q, "readout", "disjunctive query"), "readout");
  const json& vs = field(q, "values", "disjunctive query");
  if (!vs.is_array() || vs.empty()) throw QueryError("values must be a non-empty array");
  std::vector<Eigen::VectorXd> values;
  for (const auto& v : vs) values.push_back(vector_value(v, "disjunct value"));
  SelectOptions opt;
  opt.rho = q.contains("rho") ? number(q.at("rho"), "rho") : 0.0;
  opt.tau = q.contains("tau") ? number(q.at("tau"), "tau") : 0.0;
  opt.control = q.contains("control") ? text(q.at("control"), "control") : "";
  opt.threads = s.a.threads;
  SolverConfig cfg = s.a.solver();
  cfg.start = ctx.theta_point(m);

  const Envelope env = disjunctive_envelope(m, ctx.state, target, values, readout, cfg, s.a.threads);
  json ebranches = json::array();
  for (const auto& b : env.branches) {
    ebranches.push_back({{"value", vec(b.value)}, {"readout", b.readout}, {"energy", b.energy}});
  }
  const Selection sel = disjunctive_select(m, ctx.state, target, values, readout, opt, cfg);
  json sbranches = json::array();
  for (const auto& b : sel.branches) {
    sbranches.push_back({{"value", vec(b.value)},
                         {"readout", b.readout},
                         {"energy", b.energy},
                         {"control", b.control},
                         {"score", b.score},
                         {"weight", b.weight}});
  }
  return {{"envelope", {{"min", env.min}, {"max", env.max}, {"branches", ebranches}}},
          {"selection",
           {{"selected", sel.selected},
            {"value", vec(sel.branches[std::size_t(sel.selected)].value)},
            {"readout", sel.readout},
            {"blended", sel.blended},
            {"rho", opt.rho},
            {"tau", opt.tau},
            {"branches", sbranches}}}};
}

json lap_json(const Model& m, const LapReport& r) {
  return {{"a", m.endo_name(r.a)},        {"i", m.endo_name(r.i)},     {"max_z", r.max_z},
          {"max_theta", r.max_theta},     {"pass", r.pass},            {"cross_z", mat(r.cross_z)},
          {"cross_theta", mat(r.cross_theta)}, {"theta", names(m, r.theta)}};
}

// Worst report over the points for every LAP pair and ICM node.
template <class LapFn, class IcmFn>
json modularity(const Model& m, const std::vector<Point>& pts, LapFn lap, IcmFn icm, double penalty_lap,
                double penalty_icm, json& violations, const std::string& tag) {
  json laps = json::array();
  bool lap_pass = true;
  for (const auto& [a, i] : lap_pairs(m)) {
    std::optional<LapReport> worst;
    for (const Point& p : pts) {
      LapReport r = lap(a, i, p);
      if (!worst || std::max(r.max_z, r.max_theta) > std::max(worst->max_z, worst->max_theta)) worst = std::move(r);
    }
    if (!worst->pass) {
      lap_pass = false;
      violations.push_back(tag + "LAP(" + m.endo_name(a) + " -> " + m.endo_name(i) + ")");
    }
    laps.push_back(lap_json(m, *worst));
  }
  json icms = json::array();
  bool icm_pass = true;
  for (int i = 0; i < m.num_endogenous(); ++i) {
    std::optional<IcmReport> worst;
    double max_first = 0.0, max_mixed = 0.0;
    bool pass_first = true, pass_mixed = true;
    for (const Point& p : pts) {
      IcmReport r = icm(i, p);
      max_first = std::max(max_first, r.max_first);
      max_mixed = std::max(max_mixed, r.max_mixed);
      pass_first = pass_first && r.pass_first;
      pass_mixed = pass_mixed && r.pass_mixed;
      if (!worst || std::max(r.max_first, r.max_mixed) > std::max(worst->max_first, worst->max_mixed)) {
        worst = std::move(r);
      }
    }
    json mixed = json::array();
    for (const auto& b : worst->mixed) mixed.push_back(mat(b));
    if (!(pass_first && pass_mixed)) {
      icm_pass = false;
      violations.push_back(tag + "ICM(" + m.endo_name(i) + ")");
    }
    icms.push_back({{"node", m.endo_name(i)},
                    {"theta_pa", names(m, worst->theta_pa)},
                    {"theta_i", names(m, worst->theta_i)},
                    {"first", mat(worst->first)},
                    {"mixed", mixed},
                    {"max_first", max_first},
                    {"max_mixed", max_mixed},
                    {"pass_first", pass_first},
                    {"pass_mixed", pass_mixed},
                    {"pass", pass_first && pass_mixed}});
  }
  return {{"lap", laps},
          {"icm", icms},
          {"lap_pass", lap_pass},
          {"icm_pass", icm_pass},
          {"penalties", {{"lap", penalty_lap}, {"icm", penalty_icm}}}};
}

json cmd_diagnose(Session& s) {
  const Model& m = s.load();
  const Context ctx = read_context(m, read_json(s.a.context, "--context"), "--context");
  const std::vector<Point> pts = sample_points(m, ctx, s.a.samples, s.a.seed);
  const double tol = s.a.tolerance(1e-10);
  json violations = json::array();
  json r = modularity(
      m, pts, [&](int a, int i, const Point& p) { return lap_check(m, a, i, p, tol); },
      [&](int i, const Point& p) { return icm_check(m, i, p, tol); }, lap_penalty(m, pts), icm_penalty(m, pts),
      violations, "");
  r["points"] = int(pts.size());
  r["tolerance"] = tol;

  if (s.a.dynamics != "none") {
    const DynamicSystem sys = s.a.dynamics == "gradient-flow" ? DynamicSystem::gradient_flow(m) : DynamicSystem::declared(m);
    r["dynamic"] = modularity(
        m, pts, [&](int a, int i, const Point& p) { return dyn_lap_check(sys, a, i, p, tol); },
        [&](int i, const Point& p) { return dyn_icm_check(sys, i, p, tol); }, dyn_lap_penalty(sys, pts),
        dyn_icm_penalty(sys, pts), violations, "dynamic ");
    r["dynamic"]["field"] = s.a.dynamics;
  }

  if (s.a.metric || !s.a.wrt.empty()) {
    // Equilibrium with u (and any given z) clamped at the context point.
    const Point base = ctx.point(m);
    ClampSet clamps;
    for (CoordId c = m.nz(); c < m.nz() + m.nu(); ++c) clamps[c] = base[c];
    for (const auto& [c, v] : ctx.state) clamps[c] = v;
    std::vector<CoordId> free;
    for (CoordId c = 0; c < m.nz(); ++c) {
      if (!clamps.count(c)) free.push_back(c);
    }
    SolverConfig cfg = s.a.solver();
    cfg.start = base;
    const Objective obj = Objective::total(m);
    const Equilibrium eq = solve(m, obj, clamps, free, cfg);
    json met = {{"equilibrium", equilibrium_json(m, eq)}};
    if (s.a.metric) {
      const Eigen::MatrixXd H = causal_metric(obj, eq);
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
      const auto attribution = second_order(m, obj, eq.point).attribution;
      json attr = json::object();
      for (const auto& [label, blocks] : attribution) {
        Eigen::MatrixXd b(free.size(), free.size());
        for (std::size_t r0 = 0; r0 < free.size(); ++r0) {
          for (std::size_t c0 = 0; c0 < free.size(); ++c0) b(Eigen::Index(r0), Eigen::Index(c0)) = blocks.zz(free[r0], free[c0]);
        }
        attr[label] = mat(b);
      }
      met["H"] = mat(H);
      met["eigenvalues"] = H.size() ? vec(es.eigenvalues()) : json::array();
      met["attribution"] = attr;
    }
    if (!s.a.wrt.empty()) {
      json sus = json::array();
      for (const auto& w : s.a.wrt) {
        const Susceptibility x = susceptibility(m, obj, eq, m.coord_by_name(w));
        json resp = json::object();
        for (std::size_t k = 0; k < x.free.size(); ++k) resp[m.coord_name(x.free[k])] = x.response[Eigen::Index(k)];
        sus.push_back({{"wrt", w}, {"response", resp}, {"structural", x.structural}});
      }
      met["susceptibilities"] = sus;
    }
    r["metric"] = met;
  }
  r["violations"] = violations;
  r["pass"] = violations.empty();
  return r;
}

json cmd_probes(Session& s) {
  const Model& m = s.load();
  const json gj = read_json(s.a.gauge, "--gauge");
  if (!gj.is_object()) throw QueryError("gauge must be a JSON object");
  GaugeTransform g;
  for (const char* key : {"scale", "offset"}) {
    const json part = gj.value(key, json::object());
    if (!part.is_object()) throw QueryError(std::string("gauge ") + key + " must map term labels to numbers");
    for (const auto& [label, v] : part.items()) (key[0] == 's' ? g.scale : g.offset)[label] = number(v, label);
  }
  if (gj.contains("J") && !gj.at("J").is_null()) {
    const json& J = gj.at("J");
    if (!J.is_array() || int(J.size()) != m.nz()) throw QueryError("gauge J must be an nz x nz array");
    g.J.resize(m.nz(), m.nz());
    for (int r = 0; r < m.nz(); ++r) {
      if (!J[std::size_t(r)].is_array() || int(J[std::size_t(r)].size()) != m.nz()) {
        throw QueryError("gauge J must be an nz x nz array");
      }
      for (int c = 0; c < m.nz(); ++c) g.J(r, c) = number(J[std::size_t(r)][std::size_t(c)], "J entry");
    }
  }
  std::vector<ProbeHead> heads;
  if (s.a.heads.empty()) {
    heads = {ProbeHead::E, ProbeHead::dE, ProbeHead::gradE, ProbeHead::deltaE, ProbeHead::Hess};
  } else {
    for (const auto& h : s.a.heads) {
      auto ph = parse_head(h);
      if (!ph) ph = parse_head("H_" + h);
      if (!ph) throw QueryError("unknown probe head '" + h + "'");
      heads.push_back(*ph);
    }
  }
  const Context ctx = read_context(m, read_json(s.a.context, "--context"), "--context");
  const std::vector<Point> pts = sample_points(m, ctx, s.a.samples, s.a.seed);
  const Point base = ctx.point(m);
  const double tol = s.a.tolerance(1e-10);
  json checks = json::array(), kept = json::array(), broken = json::array();
  for (const auto& c : gauge_preserved(m, g, heads, pts, base, tol)) {
    checks.push_back({{"head", head_name(c.head)}, {"max_difference", c.max_difference}, {"preserved", c.preserved}});
    (c.preserved ? kept : broken).push_back(head_name(c.head));
  }
  json r = {{"checks", checks}, {"preserved", kept}, {"broken", broken}, {"points", int(pts.size())}, {"tolerance", tol}};
  if (s.a.values) {
    json vals = json::object();
    for (ProbeHead h : heads) {
      const ProbeReport pr = probe(m, h, pts, base);
      json per_point = json::array();
      for (const auto& row : pr.values) {
        json o = json::object();
        for (std::size_t k = 0; k < row.size(); ++k) o[pr.modules[k]] = vec(row[k]);
        per_point.push_back(o);
      }
      vals[head_name(h)] = per_point;
    }
    r["values"] = vals;
  }
  return r;
}

json cmd_reduce_check(Session& s) {
  const Model& m = s.load();
  EquivalenceOptions opt;
  opt.trials = s.a.trials < 0 ? 100 : s.a.trials;
  opt.seed = *s.a.seed;
  opt.observational = !s.a.no_obs;
  opt.hard = !s.a.no_hard;
  opt.soft = !s.a.no_soft;
  if (s.a.family == "anchor") opt.soft_family = SoftFamily::Anchor;
  opt.u_scale = s.a.u_scale;
  opt.targets = s.a.targets;
  opt.threads = s.a.threads;
  opt.tolerance = s.a.tolerance(1e-8);
  const EquivalenceReport rep = equivalence_check(m, opt);
  json r = {{"pass", rep.pass},
            {"max_deviation", rep.max_deviation},
            {"max_reduction_residual", rep.max_reduction_residual},
            {"tolerance", rep.tolerance},
            {"trials", opt.trials},
            {"checks", int(rep.trials.size())},
            {"soft_family", s.a.family}};
  if (s.a.per_trial) {
    json ts = json::array();
    for (const auto& t : rep.trials) {
      ts.push_back({{"trial", t.trial},
                    {"surgery", t.surgery},
                    {"deviation", t.deviation},
                    {"reduction_residual", t.reduction_residual}});
    }
    r["per_trial"] = ts;
  }
  return r;
}

ExoSampler read_sampler(const std::string& spec, std::string& name) {
  // NAME=uniform:lo:hi or NAME=gauss:mean:sd
  const auto eq = spec.find('=');
  if (eq == std::string::npos) throw QueryError("sampler '" + spec + "' must look like U1=uniform:-1:1");
  name = spec.substr(0, eq);
  std::stringstream ss(spec.substr(eq + 1));
  std::string kind, a, b;
  std::getline(ss, kind, ':');
  std::getline(ss, a, ':');
  std::getline(ss, b, ':');
  ExoSampler out;
  if (kind == "uniform") {
    out.kind = ExoSampler::Kind::Uniform;
  } else if (kind == "gauss") {
    out.kind = ExoSampler::Kind::Gauss;
  } else {
    throw QueryError("sampler kind must be uniform or gauss in '" + spec + "'");
  }
  try {
    std::size_t pa = 0, pb = 0;
    out.a = std::stod(a, &pa);
    out.b = std::stod(b, &pb);
    if (pa != a.size() || pb != b.size()) throw std::invalid_argument(spec);
  } catch (const std::logic_error&) {
    throw QueryError("sampler '" + spec + "' has malformed bounds");
  }
  return out;
}

json cmd_pushforward(Session& s) {
  const Model& m = s.load();
  PushforwardOptions opt;
  opt.trials = s.a.trials < 0 ? 1000 : s.a.trials;
  opt.seed = *s.a.seed;
  opt.threads = s.a.threads;
  opt.tolerance = s.a.tolerance(1e-8);
  opt.samplers.assign(std::size_t(m.num_exogenous()), ExoSampler{});
  for (const auto& spec : s.a.samplers) {
    std::string name;
    const ExoSampler smp = read_sampler(spec, name);
    opt.samplers[std::size_t(m.exo_index(name))] = smp;
  }
  opt.surgeries = read_surgeries(read_json(s.a.surgery, "--surgery"));
  for (const auto& st : s.a.stats) {
    const auto eq = st.find('=');
    if (eq == std::string::npos) throw QueryError("statistic '" + st + "' must look like name=expression");
    opt.statistics.emplace_back(st.substr(0, eq), st.substr(eq + 1));
  }
  if (opt.statistics.empty()) {
    for (CoordId c = 0; c < m.nz(); ++c) opt.statistics.emplace_back(m.coord_name(c), m.coord_name(c));
  }
  const PushforwardReport rep = pushforward_check(m, opt);
  json stats = json::array();
  for (const auto& st : rep.statistics) {
    stats.push_back({{"name", st.name},
                     {"energy_mean", st.energy_mean},
                     {"energy_var", st.energy_var},
                     {"scm_mean", st.scm_mean},
                     {"scm_var", st.scm_var},
                     {"max_paired_deviation", st.max_paired_deviation}});
  }
  return {{"pass", rep.pass},
          {"max_paired_deviation", rep.max_paired_deviation},
          {"trials", opt.trials},
          {"tolerance", opt.tolerance},
          {"statistics", stats}};
}

json cmd_simulate(Session& s) {
  const Model& m = s.load();
  const Context ctx = read_context(m, read_json(s.a.context, "--context"), "--context");
  const auto surgeries = read_dyn_surgeries(read_json(s.a.surgery, "--surgery"));
  const DynamicSystem sys = s.a.gradient_flow ? DynamicSystem::gradient_flow(m) : DynamicSystem::declared(m);
  IntegrateOptions opt;
  opt.t_end = s.a.t_end;
  opt.dt = s.a.dt;
  opt.record_every = s.a.record_every;
  const Point start = ctx.point(m);
  const Trajectory tr = integrate(sys, start, opt, surgeries);
  json zs = json::array();
  for (const auto& z : tr.z) zs.push_back(vec(z));
  json events = json::array();
  for (const auto& e : tr.events) events.push_back({{"t", e.t}, {"label", e.label}});
  json r = {{"names", names(m, [&] {
               std::vector<CoordId> cs;
               for (CoordId c = 0; c < m.nz(); ++c) cs.push_back(c);
               return cs;
             }())},
            {"field", s.a.gradient_flow ? "gradient-flow" : "declared"},
            {"t", tr.t},
            {"z", zs},
            {"events", events},
            {"final", tr.z.empty() ? json::array() : vec(tr.z.back())}};
  if (s.a.steady) {
    Point from = start;
    if (!tr.z.empty()) from.z() = tr.z.back();
    const SteadyState ss = steady_state(sys, from, surgeries);
    json eig = json::array();
    for (Eigen::Index k = 0; k < ss.eigenvalues.size(); ++k) {
      eig.push_back({{"re", ss.eigenvalues[k].real()}, {"im", ss.eigenvalues[k].imag()}});
    }
    r["steady_state"] = {{"z", vec(ss.point.z())},
                         {"residual", ss.residual},
                         {"iterations", ss.iterations},
                         {"stable", ss.stable},
                         {"eigenvalues", eig}};
  }
  return r;
}

json cmd_gen_corpus(Session& s) {
  CorpusOptions opt;
  opt.count = s.a.count;
  opt.min_nodes = s.a.nodes > 0 ? s.a.nodes : s.a.min_nodes;
  opt.max_nodes = s.a.nodes > 0 ? s.a.nodes : s.a.max_nodes;
  opt.density = s.a.density;
  opt.contexts = s.a.contexts;
  opt.seed = *s.a.seed;
  const auto paths = write_corpus(s.a.out, generate_corpus(opt), opt);
  json files = json::array();
  for (const auto& p : paths) {
    files.push_back({{"name", std::filesystem::path(p).filename().string()}, {"digest", hex_digest(slurp(p))}});
  }
  return {{"directory", s.a.out}, {"models", opt.count}, {"files", files}};
}

struct Failure {
  int code;
  const char* kind;
};

Failure classify(const std::exception& e, bool model_loaded) {
  if (dynamic_cast<const ValidationError*>(&e)) return model_loaded ? Failure{3, "query"} : Failure{1, "validation"};
  if (dynamic_cast<const SolverError*>(&e)) return {2, "solver"};
  if (dynamic_cast<const DomainError*>(&e)) return {2, "domain"};
  if (dynamic_cast<const ClassViolation*>(&e)) return {3, "class"};
  return {3, "query"};
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Args a;
  CLI::App app{"Energy-structured causal models: equilibria, interventions, diagnostics.", "escm"};
  app.require_subcommand(1, 1);

  auto model_arg = [&](CLI::App* sub) { sub->add_option("model", a.model, "Model file (JSON)")->required(); };
  auto common = [&](CLI::App* sub) {
    sub->add_flag("--no-timing", a.no_timing, "Omit the timing field from the report");
    sub->add_option("--threads", a.threads, "Worker threads for parallel sweeps")->check(CLI::Range(1, 256));
  };
  auto solver_opts = [&](CLI::App* sub) {
    sub->add_option("--init", a.init, "Starting point")->check(CLI::IsMember({"zeros", "forward-scm"}));
    sub->add_option("--max-iter", a.max_iter, "Newton iteration cap")->check(CLI::Range(1, 100000));
    sub->add_option("--grad-tol", a.grad_tol, "Gradient tolerance")->check(CLI::PositiveNumber);
  };
  auto context_opt = [&](CLI::App* sub) {
    sub->add_option("--context", a.context, "Coordinate values as JSON, or @file");
  };
  auto seed_opt = [&](CLI::App* sub, bool required) {
    auto* o = sub->add_option("--seed", a.seed, "Random seed");
    if (required) o->required();
  };

  auto* validate = app.add_subcommand("validate", "Parse and validate a model file");
  model_arg(validate);
  common(validate);

  auto* solve_cmd = app.add_subcommand("solve", "Energy equilibrium with context clamps and optional surgeries");
  model_arg(solve_cmd);
  common(solve_cmd);
  context_opt(solve_cmd);
  solve_cmd->add_option("--surgery", a.surgery, "Surgery object or array (JSON or @file)");
  solver_opts(solve_cmd);

  auto* abduct_cmd = app.add_subcommand("abduct", "Explain evidence by clamped energy minimization");
  model_arg(abduct_cmd);
  common(abduct_cmd);
  abduct_cmd->add_option("--evidence", a.evidence, "Evidence as JSON, or @file")->required();
  solver_opts(abduct_cmd);

  auto* cf_cmd = app.add_subcommand("counterfactual", "Abduction, action and prediction for a query file");
  model_arg(cf_cmd);
  common(cf_cmd);
  cf_cmd->add_option("--query", a.query, "Query as JSON, or @file")->required();
  solver_opts(cf_cmd);

  auto* dj_cmd = app.add_subcommand("disjunct", "Disjunctive intervention: envelope and selection");
  model_arg(dj_cmd);
  common(dj_cmd);
  dj_cmd->add_option("--query", a.query, "Query as JSON, or @file")->required();
  solver_opts(dj_cmd);

  auto* diag_cmd = app.add_subcommand("diagnose", "LAP and ICM checks, causal metric, susceptibilities");
  model_arg(diag_cmd);
  common(diag_cmd);
  context_opt(diag_cmd);
  diag_cmd->add_option("--samples", a.samples, "Random points to check (needs --seed)");
  seed_opt(diag_cmd, false);
  diag_cmd->add_option("--tol", a.tol, "Violation tolerance");
  diag_cmd->add_option("--dynamics", a.dynamics, "Also check a vector field")
      ->check(CLI::IsMember({"none", "declared", "gradient-flow"}));
  diag_cmd->add_flag("--metric", a.metric, "Causal metric at the context equilibrium");
  diag_cmd->add_option("--wrt", a.wrt, "Susceptibility coordinates");
  solver_opts(diag_cmd);

  auto* probe_cmd = app.add_subcommand("probes", "Probe heads preserved by a gauge transform");
  model_arg(probe_cmd);
  common(probe_cmd);
  probe_cmd->add_option("--gauge", a.gauge, "Gauge as JSON {scale, offset, J}, or @file")->required();
  probe_cmd->add_option("--heads", a.heads, "Probe heads (H_E H_dE H_gradE H_deltaE H_Hess)");
  context_opt(probe_cmd);
  probe_cmd->add_option("--samples", a.samples, "Random points to probe (needs --seed)");
  seed_opt(probe_cmd, false);
  probe_cmd->add_option("--tol", a.tol, "Preservation tolerance");
  probe_cmd->add_flag("--values", a.values, "Include the probe values");

  auto* rc_cmd = app.add_subcommand("reduce-check", "Energy equilibria against the induced SCM");
  model_arg(rc_cmd);
  common(rc_cmd);
  seed_opt(rc_cmd, true);
  rc_cmd->add_option("--trials", a.trials, "Random trials")->check(CLI::Range(0, 1000000));
  rc_cmd->add_option("--family", a.family, "Soft replacement family")->check(CLI::IsMember({"shift", "anchor"}));
  rc_cmd->add_flag("--no-observational", a.no_obs, "Skip observational trials");
  rc_cmd->add_flag("--no-hard", a.no_hard, "Skip hard-intervention trials");
  rc_cmd->add_flag("--no-soft", a.no_soft, "Skip soft-intervention trials");
  rc_cmd->add_option("--targets", a.targets, "Restrict surgery targets");
  rc_cmd->add_option("--u-scale", a.u_scale, "Contexts drawn from [-s, s]")->check(CLI::PositiveNumber);
  rc_cmd->add_option("--tol", a.tol, "Equivalence tolerance");
  rc_cmd->add_flag("--per-trial", a.per_trial, "List every trial");

  auto* pf_cmd = app.add_subcommand("pushforward", "Distributions of statistics under both semantics");
  model_arg(pf_cmd);
  common(pf_cmd);
  seed_opt(pf_cmd, true);
  pf_cmd->add_option("--trials", a.trials, "Monte Carlo draws")->check(CLI::Range(1, 10000000));
  pf_cmd->add_option("--sampler", a.samplers, "NAME=uniform:lo:hi or NAME=gauss:mean:sd");
  pf_cmd->add_option("--stat", a.stats, "name=expression");
  pf_cmd->add_option("--surgery", a.surgery, "Surgery object or array (JSON or @file)");
  pf_cmd->add_option("--tol", a.tol, "Paired deviation tolerance");

  auto* sim_cmd = app.add_subcommand("simulate", "Integrate the model's dynamics");
  model_arg(sim_cmd);
  common(sim_cmd);
  context_opt(sim_cmd);
  sim_cmd->add_option("--surgery", a.surgery, "Dynamic surgery object or array (JSON or @file)");
  sim_cmd->add_flag("--gradient-flow", a.gradient_flow, "Use F = -grad_z E instead of declared dynamics");
  sim_cmd->add_flag("--steady-state", a.steady, "Newton steady state from the final state");
  sim_cmd->add_option("--t-end", a.t_end, "Final time")->check(CLI::NonNegativeNumber);
  sim_cmd->add_option("--dt", a.dt, "RK4 step")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--record-every", a.record_every, "Record every k-th step")->check(CLI::Range(1, 1000000000));

  auto* gc_cmd = app.add_subcommand("gen-corpus", "Write a seeded corpus of quadratic DAG models and fixtures");
  common(gc_cmd);
  seed_opt(gc_cmd, true);
  gc_cmd->add_option("--out", a.out, "Output directory")->required();
  gc_cmd->add_option("--count", a.count, "Number of models");
  gc_cmd->add_option("--nodes", a.nodes, "Nodes per model (sets both bounds)");
  gc_cmd->add_option("--min-nodes", a.min_nodes, "Fewest nodes");
  gc_cmd->add_option("--max-nodes", a.max_nodes, "Most nodes");
  gc_cmd->add_option("--density", a.density, "Edge probability");
  gc_cmd->add_option("--contexts", a.contexts, "Fixture contexts per model");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "escm: " << e.what() << "\n\n" << app.help();
    return 3;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  Session s{a, {}};
  json report;
  report["command"] = {{"name", name}, {"args", args}};
  report["model_hash"] = nullptr;
  int code = 0;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    json results;
    if (name == "validate") results = cmd_validate(s);
    else if (name == "solve") results = cmd_solve(s);
    else if (name == "abduct") results = cmd_abduct(s);
    else if (name == "counterfactual") results = cmd_counterfactual(s);
    else if (name == "disjunct") results = cmd_disjunct(s);
    else if (name == "diagnose") results = cmd_diagnose(s);
    else if (name == "probes") results = cmd_probes(s);
    else if (name == "reduce-check") results = cmd_reduce_check(s);
    else if (name == "pushforward") results = cmd_pushforward(s);
    else if (name == "simulate") results = cmd_simulate(s);
    else results = cmd_gen_corpus(s);
    report["results"] = results;
    report["diagnostics"] = {{"status", "ok"}, {"exit_code", 0}};
  } catch (const std::exception& e) {
    const Failure f = classify(e, s.model.has_value());
    code = f.code;
    json error = {{"kind", f.kind}, {"message", e.what()}};
    if (const auto* b = dynamic_cast<const BlowUpError*>(&e)) error["last_finite_time"] = b->last_finite_time();
    report["results"] = name == "validate" && code == 1 ? json{{"valid", false}} : json(nullptr);
    report["diagnostics"] = {{"status", "error"}, {"exit_code", code}, {"error", error}};
    err << "escm " << name << ": " << f.kind << " error: " << e.what() << "\n";
  }
  if (s.model) report["model_hash"] = hex_digest(s.model->serialize());
  if (!a.no_timing) {
    report["timing"] = {
        {"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
  }
  out << report.dump(2) << "\n";
  return code;
}

}  // namespace escm::cli
