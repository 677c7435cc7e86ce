#pragma once

// Seeded generators: strongly convex quadratic DAG models with SCM forward-solve fixtures,
// and a planted-violation corpus for the LAP/ICM checks.
//
// Node i of a quadratic DAG has
//   E_i = 0.5*theta.Zi.w*sq(z.Zi - sum_j theta.Zi.b_Zj*z.Zj - u.Ui),  E_Ui = 0.5*sq(u.Ui)
// so its mechanism is z_i = sum_j b_ij z_j + u_i. All draws go through raw mt19937_64
// output with integer arithmetic, so the text of a corpus depends only on the seed.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace escm {

struct QuadraticDag {
  int n = 0;
  std::vector<double> w;                                   // per node, in [0.5, 2]
  std::vector<std::vector<std::pair<int, double>>> parents;  // (parent index, b_ij), ascending parent
  // Planted additions: text appended to a node's local term, extra declared parameters,
  // and an optional global term.
  std::vector<std::string> extra;
  std::vector<std::vector<std::pair<std::string, double>>> extra_params;
  std::string global;

  // Model file text (canonical serialization).
  std::string model_json() const;
  // Non-descendant flags of node a (a itself excluded).
  std::vector<bool> nondescendants(int a) const;
  // z = B z + u solved in index order.
  Eigen::VectorXd forward(const Eigen::VectorXd& u) const;
};

struct CorpusOptions {
  int count = 10;
  int min_nodes = 2;
  int max_nodes = 8;
  double density = 0.5;  // probability of each edge j -> i, j < i
  int contexts = 10;
  std::uint64_t seed = 0;
};

struct CorpusModel {
  std::string name;  // "model_000", ...
  QuadraticDag dag;
  std::string model_json;
  std::vector<Eigen::VectorXd> u;  // contexts, entries in [-2, 2]
  std::vector<Eigen::VectorXd> z;  // forward solves
};

// Throws QueryError for parameters outside their ranges.
std::vector<CorpusModel> generate_corpus(const CorpusOptions& opt);
std::string fixture_json(const CorpusModel& m);
// Writes <name>.json and <name>.fixture.json per model plus manifest.json into dir
// (created if missing). Returns the written paths in order.
std::vector<std::string> write_corpus(const std::string& dir, const std::vector<CorpusModel>& corpus,
                                      const CorpusOptions& opt);

// ---- planted violations ------------------------------------------------------------

enum class PlantKind {
  Clean,
  LapState,   // global c*z.Zp*z.Zq between two nodes
  LapParam,   // E_i += c*theta.Za.k*z.Zi, k declared (unused) by a, i in NonDesc(a)
  IcmFirst,   // E_i += c*theta.Zp.k*z.Zi, p a parent of i
  IcmMixed,   // E_i += c*theta.Zp.k*theta.Zi.w*z.Zi, p a parent of i
};
const char* plant_name(PlantKind k);

struct ExpectedFlag {
  enum class Block { LapZ, LapTheta, IcmFirst, IcmMixed };
  Block block = Block::LapZ;
  int a = 0;  // LAP: intervened module; ICM: node
  int i = 0;  // LAP: non-descendant module; ICM: same as a
  std::string theta_row;  // parameter name for theta blocks ("theta.Z1.k"), parent side for ICM mixed
  std::string theta_col;  // ICM mixed: own-side parameter
  double coefficient = 0.0;
};

struct PlantedCase {
  PlantKind kind = PlantKind::Clean;
  QuadraticDag dag;
  std::string model_json;
  std::vector<ExpectedFlag> expected;
};

// count cases cycling through the kinds; nodes in [3, 6].
std::vector<PlantedCase> planted_corpus(int count, std::uint64_t seed);

}  // namespace escm
