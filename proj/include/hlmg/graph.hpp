#pragma once

// Undirected graphs, random generation (pre-defined families + graphons),
// node-index permutation, and the exact task oracles used for labeling.

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hlmg/common.hpp"

namespace hlmg {

struct Graph {
  int num_nodes = 0;
  // canonical storage: i < j, sorted, no duplicates
  std::vector<std::pair<int, int>> edges;
  // empty, or one (key, value) list per node
  std::vector<std::vector<std::pair<std::string, std::string>>> node_features;
  // optional free-form text per canonical edge
  std::map<std::pair<int, int>, std::string> edge_features;

  static Graph from_edges(int n, std::vector<std::pair<int, int>> e);

  int num_edges() const { return static_cast<int>(edges.size()); }
  bool has_node_features() const { return !node_features.empty(); }
  bool has_edge(int i, int j) const;
  int degree(int i) const;
  std::vector<int> neighbors(int i) const;  // ascending
  std::vector<std::vector<int>> adjacency() const;
  void validate() const;  // throws Error on invariant violation
};

enum class GraphFamily { Cycle, Star, Complete, Path, Tree, Wheel, Barbell, Graphon };

enum class GraphonKind {
  Constant,
  Sparse,
  Dense,
  Linear,
  Quadratic,
  Sigmoidal,
  Step,
  Sin,
  Avg,
  ExpDecay,
  Softmax
};

// W : [0,1]^2 -> [0,1]. Constant/Sparse/Dense draw their probability once per
// graph from [p_low, p_high]; Step draws its threshold once per graph. Those
// draws are materialized by resolve_graphon before evaluation.
struct GraphonSpec {
  GraphonKind kind = GraphonKind::Constant;
  double p_low = 0.0, p_high = 0.0;  // range for the constant-valued kinds
  double p = -1.0;                   // resolved constant (valid when >= 0)
  double threshold = -1.0;           // resolved step threshold (valid when >= 0)

  static GraphonSpec make(GraphonKind kind);
  bool needs_resolution() const;
};

GraphonSpec resolve_graphon(GraphonSpec spec, Rng& rng);
double evaluate_graphon(const GraphonSpec& spec, double v1, double v2);

struct Permutation {
  std::vector<int> map;  // node i -> map[i]

  static Permutation identity(int n);
  static Permutation random(int n, Rng& rng);
  int size() const { return static_cast<int>(map.size()); }
  int operator()(int i) const { return map[i]; }
  Permutation inverse() const;
  bool is_valid() const;
};

Graph generate_graph(GraphFamily family, int n, const std::optional<GraphonSpec>& graphon,
                     uint64_t seed);

// Relabels node i as p(i); features carried along. Output is isomorphic to input.
Graph permute(const Graph& g, const Permutation& p);

enum class Task {
  NodeDegree,
  EdgeExistence,
  ShortestDistance,
  Reachable,
  Cycle,
  EdgeCount,
  Components
};

struct TaskQuery {
  Task task = Task::Cycle;
  int u = -1;  // first queried node (degree/existence/distance/reachable)
  int v = -1;  // second queried node (existence/distance/reachable)

  TaskQuery permuted(const Permutation& p) const;
};

struct OracleAnswer {
  // degree / 0-1 flags / counts; shortest distance uses -1 for "no path"
  long long value = 0;
  // interpretation ground truth (sorted); empty for tasks without one
  std::vector<int> gt_nodes;
};

// Exact answers by classic algorithms, plus the interpretation ground-truth
// node set where the task defines one (edge existence, node degree, shortest
// distance, reachability).
OracleAnswer oracle(const Graph& g, const TaskQuery& q);

// building blocks, also used as independent oracles in tests
std::vector<int> bfs_distances(const Graph& g, int src);
int count_components(const Graph& g);
bool has_cycle(const Graph& g);
// union of nodes on all shortest u-v paths ({} if unreachable)
std::vector<int> shortest_path_gt(const Graph& g, int u, int v);
// union of nodes on all simple u-v paths via block-cut-tree traversal (poly time)
std::vector<int> reachable_gt_blockcut(const Graph& g, int u, int v);
// same set by exhaustive simple-path enumeration; guarded to n <= 15
std::vector<int> reachable_gt_exhaustive(const Graph& g, int u, int v);

const char* to_string(GraphFamily f);
const char* to_string(GraphonKind k);
const char* to_string(Task t);
Task task_from_string(const std::string& s);
GraphFamily family_from_string(const std::string& s);

}  // namespace hlmg
