#include "hlmg/graph.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <queue>
#include <set>

namespace hlmg {

Graph Graph::from_edges(int n, std::vector<std::pair<int, int>> e) {
  Graph g;
  g.num_nodes = n;
  for (auto& [a, b] : e)
    if (a > b) std::swap(a, b);
  std::sort(e.begin(), e.end());
  e.erase(std::unique(e.begin(), e.end()), e.end());
  g.edges = std::move(e);
  g.validate();
  return g;
}

bool Graph::has_edge(int i, int j) const {
  if (i > j) std::swap(i, j);
  return std::binary_search(edges.begin(), edges.end(), std::make_pair(i, j));
}

int Graph::degree(int i) const {
  int d = 0;
  for (const auto& [a, b] : edges) d += (a == i) + (b == i);
  return d;
}

std::vector<int> Graph::neighbors(int i) const {
  std::vector<int> out;
  for (const auto& [a, b] : edges) {
    if (a == i) out.push_back(b);
    if (b == i) out.push_back(a);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::vector<int>> Graph::adjacency() const {
  std::vector<std::vector<int>> adj(num_nodes);
  for (const auto& [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  for (auto& row : adj) std::sort(row.begin(), row.end());
  return adj;
}

void Graph::validate() const {
  if (num_nodes < 0) throw Error("graph: negative node count");
  for (size_t i = 0; i < edges.size(); ++i) {
    const auto& [a, b] = edges[i];
    if (a >= b) throw Error("graph: edge not canonical or self-loop (" + std::to_string(a) + "," +
                            std::to_string(b) + ")");
    if (b >= num_nodes) throw Error("graph: edge endpoint " + std::to_string(b) + " out of range");
    if (i > 0 && edges[i - 1] == edges[i]) throw Error("graph: duplicate edge");
  }
  if (!node_features.empty() && static_cast<int>(node_features.size()) != num_nodes)
    throw Error("graph: node_features size mismatch");
  for (const auto& [e, txt] : edge_features) {
    (void)txt;
    if (!has_edge(e.first, e.second)) throw Error("graph: edge feature on missing edge");
  }
}

// --- graphons ---------------------------------------------------------------

GraphonSpec GraphonSpec::make(GraphonKind kind) {
  GraphonSpec s;
  s.kind = kind;
  switch (kind) {
    case GraphonKind::Constant: s.p_low = 0.3; s.p_high = 0.7; break;
    case GraphonKind::Sparse: s.p_low = 0.05; s.p_high = 0.15; break;
    case GraphonKind::Dense: s.p_low = 0.8; s.p_high = 1.0; break;
    default: break;
  }
  return s;
}

bool GraphonSpec::needs_resolution() const {
  switch (kind) {
    case GraphonKind::Constant:
    case GraphonKind::Sparse:
    case GraphonKind::Dense:
      return p < 0.0;
    case GraphonKind::Step:
      return threshold < 0.0;
    default:
      return false;
  }
}

GraphonSpec resolve_graphon(GraphonSpec spec, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  switch (spec.kind) {
    case GraphonKind::Constant:
    case GraphonKind::Sparse:
    case GraphonKind::Dense:
      if (spec.p < 0.0)
        spec.p = spec.p_low + (spec.p_high - spec.p_low) * unit(rng);
      break;
    case GraphonKind::Step:
      if (spec.threshold < 0.0) spec.threshold = unit(rng);
      break;
    default:
      break;
  }
  return spec;
}

double evaluate_graphon(const GraphonSpec& spec, double v1, double v2) {
  if (v1 < 0.0 || v1 > 1.0 || v2 < 0.0 || v2 > 1.0)
    throw Error("graphon: inputs must lie in [0,1], got (" + std::to_string(v1) + "," +
                std::to_string(v2) + ")");
  if (spec.needs_resolution())
    throw Error("graphon: spec not resolved; call resolve_graphon first");
  switch (spec.kind) {
    case GraphonKind::Constant:
    case GraphonKind::Sparse:
    case GraphonKind::Dense:
      return spec.p;
    case GraphonKind::Linear:
      return v1 * v2;
    case GraphonKind::Quadratic:
      return v1 * v1 * v2 * v2;
    case GraphonKind::Sigmoidal:
      return 1.0 / (1.0 + std::exp(-10.0 * (v1 - v2)));
    case GraphonKind::Step:
      return (v1 >= spec.threshold && v2 >= spec.threshold) ? 1.0 : 0.0;
    case GraphonKind::Sin:
      return std::sin(M_PI * v1) * std::sin(M_PI * v2);
    case GraphonKind::Avg:
      return (v1 + v2) / 2.0;
    case GraphonKind::ExpDecay:
      return std::exp(-(v1 * v1 + v2 * v2));
    case GraphonKind::Softmax:
      return std::exp(v1) / (std::exp(v1) + std::exp(v2));
  }
  throw Error("graphon: unknown kind");
}

// --- permutations -----------------------------------------------------------

Permutation Permutation::identity(int n) {
  Permutation p;
  p.map.resize(n);
  std::iota(p.map.begin(), p.map.end(), 0);
  return p;
}

Permutation Permutation::random(int n, Rng& rng) {
  Permutation p = identity(n);
  std::shuffle(p.map.begin(), p.map.end(), rng);
  return p;
}

Permutation Permutation::inverse() const {
  Permutation inv;
  inv.map.resize(map.size());
  for (size_t i = 0; i < map.size(); ++i) inv.map[map[i]] = static_cast<int>(i);
  return inv;
}

bool Permutation::is_valid() const {
  std::vector<char> seen(map.size(), 0);
  for (int v : map) {
    if (v < 0 || v >= static_cast<int>(map.size()) || seen[v]) return false;
    seen[v] = 1;
  }
  return true;
}

Graph permute(const Graph& g, const Permutation& p) {
  if (p.size() != g.num_nodes || !p.is_valid())
    throw Error("permute: permutation size " + std::to_string(p.size()) + " does not match graph (" +
                std::to_string(g.num_nodes) + " nodes)");
  std::vector<std::pair<int, int>> edges;
  edges.reserve(g.edges.size());
  for (const auto& [a, b] : g.edges) edges.emplace_back(p(a), p(b));
  Graph out = Graph::from_edges(g.num_nodes, std::move(edges));
  if (g.has_node_features()) {
    out.node_features.resize(g.num_nodes);
    for (int i = 0; i < g.num_nodes; ++i) out.node_features[p(i)] = g.node_features[i];
  }
  for (const auto& [e, txt] : g.edge_features) {
    int a = p(e.first), b = p(e.second);
    if (a > b) std::swap(a, b);
    out.edge_features[{a, b}] = txt;
  }
  return out;
}

TaskQuery TaskQuery::permuted(const Permutation& p) const {
  TaskQuery q = *this;
  if (q.u >= 0) q.u = p(q.u);
  if (q.v >= 0) q.v = p(q.v);
  return q;
}

// --- generation -------------------------------------------------------------

namespace {

void require_n(GraphFamily f, int n, int min) {
  if (n < min)
    throw Error(std::string("generate_graph: family ") + to_string(f) + " requires n >= " +
                std::to_string(min) + " (got " + std::to_string(n) + ")");
}

// uniform random labeled tree via Prüfer sequence decoding
std::vector<std::pair<int, int>> prufer_tree(int n, Rng& rng) {
  if (n == 2) return {{0, 1}};
  std::uniform_int_distribution<int> pick(0, n - 1);
  std::vector<int> seq(n - 2);
  for (auto& s : seq) s = pick(rng);
  std::vector<int> deg(n, 1);
  for (int s : seq) ++deg[s];
  std::priority_queue<int, std::vector<int>, std::greater<int>> leaves;
  for (int i = 0; i < n; ++i)
    if (deg[i] == 1) leaves.push(i);
  std::vector<std::pair<int, int>> edges;
  for (int s : seq) {
    int leaf = leaves.top();
    leaves.pop();
    edges.emplace_back(leaf, s);
    if (--deg[s] == 1) leaves.push(s);
  }
  int a = leaves.top();
  leaves.pop();
  int b = leaves.top();
  edges.emplace_back(a, b);
  return edges;
}

}  // namespace

Graph generate_graph(GraphFamily family, int n, const std::optional<GraphonSpec>& graphon,
                     uint64_t seed) {
  if ((family == GraphFamily::Graphon) != graphon.has_value())
    throw Error("generate_graph: graphon spec must be present exactly for the graphon family");
  Rng rng(seed);
  std::vector<std::pair<int, int>> edges;
  switch (family) {
    case GraphFamily::Cycle:
      require_n(family, n, 3);
      for (int i = 0; i < n; ++i) edges.emplace_back(i, (i + 1) % n);
      break;
    case GraphFamily::Star:
      require_n(family, n, 2);
      for (int i = 1; i < n; ++i) edges.emplace_back(0, i);
      break;
    case GraphFamily::Complete:
      require_n(family, n, 2);
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) edges.emplace_back(i, j);
      break;
    case GraphFamily::Path:
      require_n(family, n, 2);
      for (int i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
      break;
    case GraphFamily::Tree:
      require_n(family, n, 2);
      edges = prufer_tree(n, rng);
      break;
    case GraphFamily::Wheel:
      require_n(family, n, 4);
      for (int i = 1; i < n; ++i) {
        edges.emplace_back(0, i);
        edges.emplace_back(i, i + 1 == n ? 1 : i + 1);
      }
      break;
    case GraphFamily::Barbell: {
      require_n(family, n, 6);
      int m1 = std::max(3, n / 3);
      if (2 * m1 > n) m1 = n / 2;
      const int m2 = n - 2 * m1;
      for (int i = 0; i < m1; ++i)
        for (int j = i + 1; j < m1; ++j) edges.emplace_back(i, j);
      for (int i = m1 + m2; i < n; ++i)
        for (int j = i + 1; j < n; ++j) edges.emplace_back(i, j);
      // chain from clique A through the path nodes into clique B
      int prev = m1 - 1;
      for (int i = m1; i < m1 + m2; ++i) {
        edges.emplace_back(prev, i);
        prev = i;
      }
      edges.emplace_back(prev, m1 + m2);
      break;
    }
    case GraphFamily::Graphon: {
      require_n(family, n, 2);
      GraphonSpec spec = resolve_graphon(*graphon, rng);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      std::vector<double> v(n);
      for (auto& x : v) x = unit(rng);
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
          if (unit(rng) < evaluate_graphon(spec, v[i], v[j])) edges.emplace_back(i, j);
      break;
    }
  }
  return Graph::from_edges(n, std::move(edges));
}

// --- oracles ----------------------------------------------------------------

std::vector<int> bfs_distances(const Graph& g, int src) {
  std::vector<int> dist(g.num_nodes, -1);
  auto adj = g.adjacency();
  std::queue<int> q;
  dist[src] = 0;
  q.push(src);
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (int w : adj[u])
      if (dist[w] < 0) {
        dist[w] = dist[u] + 1;
        q.push(w);
      }
  }
  return dist;
}

int count_components(const Graph& g) {
  std::vector<int> parent(g.num_nodes);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  int comps = g.num_nodes;
  for (const auto& [a, b] : g.edges) {
    int ra = find(a), rb = find(b);
    if (ra != rb) {
      parent[ra] = rb;
      --comps;
    }
  }
  return comps;
}

bool has_cycle(const Graph& g) {
  // an undirected graph is acyclic iff m == n - (number of components)
  return g.num_edges() > g.num_nodes - count_components(g);
}

std::vector<int> shortest_path_gt(const Graph& g, int u, int v) {
  auto du = bfs_distances(g, u);
  if (du[v] < 0) return {};
  auto dv = bfs_distances(g, v);
  const int d = du[v];
  std::vector<int> gt;
  for (int w = 0; w < g.num_nodes; ++w)
    if (du[w] >= 0 && dv[w] >= 0 && du[w] + dv[w] == d) gt.push_back(w);
  return gt;
}

namespace {

// Tarjan biconnected components; returns the vertex sets of all blocks.
struct BlockDecomposition {
  std::vector<std::vector<int>> blocks;
  std::vector<char> is_cut;
};

BlockDecomposition biconnected_blocks(const Graph& g) {
  const int n = g.num_nodes;
  auto adj = g.adjacency();
  BlockDecomposition out;
  out.is_cut.assign(n, 0);
  std::vector<int> disc(n, -1), low(n, 0);
  std::vector<std::pair<int, int>> edge_stack;
  int timer = 0;

  // iterative DFS to avoid deep recursion
  struct Frame {
    int u, parent;
    size_t ei;
  };
  for (int root = 0; root < n; ++root) {
    if (disc[root] >= 0) continue;
    std::vector<Frame> stack{{root, -1, 0}};
    disc[root] = low[root] = timer++;
    int root_children = 0;
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.ei < adj[f.u].size()) {
        int w = adj[f.u][f.ei++];
        if (disc[w] < 0) {
          edge_stack.emplace_back(f.u, w);
          if (f.u == root) ++root_children;
          disc[w] = low[w] = timer++;
          stack.push_back({w, f.u, 0});
        } else if (w != f.parent && disc[w] < disc[f.u]) {
          edge_stack.emplace_back(f.u, w);
          low[f.u] = std::min(low[f.u], disc[w]);
        }
      } else {
        stack.pop_back();
        if (stack.empty()) break;
        int p = stack.back().u;
        low[p] = std::min(low[p], low[f.u]);
        if (low[f.u] >= disc[p]) {
          // pop one biconnected component
          std::set<int> verts;
          while (!edge_stack.empty()) {
            auto e = edge_stack.back();
            edge_stack.pop_back();
            verts.insert(e.first);
            verts.insert(e.second);
            if (e == std::make_pair(p, f.u)) break;
          }
          if (!verts.empty()) out.blocks.emplace_back(verts.begin(), verts.end());
          if (p != root || root_children > 1) out.is_cut[p] = 1;
        }
      }
    }
  }
  return out;
}

}  // namespace

std::vector<int> reachable_gt_blockcut(const Graph& g, int u, int v) {
  if (u == v) return {u};
  auto du = bfs_distances(g, u);
  if (du[v] < 0) return {};

  auto bd = biconnected_blocks(g);
  // block-cut tree: one node per block, one per cut vertex
  const int nb = static_cast<int>(bd.blocks.size());
  std::vector<int> cut_id(g.num_nodes, -1);
  int next = nb;
  for (int w = 0; w < g.num_nodes; ++w)
    if (bd.is_cut[w]) cut_id[w] = next++;
  std::vector<std::vector<int>> tree(next);
  std::vector<int> home_block(g.num_nodes, -1);  // any block containing the vertex
  for (int b = 0; b < nb; ++b)
    for (int w : bd.blocks[b]) {
      home_block[w] = b;
      if (cut_id[w] >= 0) {
        tree[b].push_back(cut_id[w]);
        tree[cut_id[w]].push_back(b);
      }
    }

  auto tree_node = [&](int w) { return cut_id[w] >= 0 ? cut_id[w] : home_block[w]; };
  const int start = tree_node(u), goal = tree_node(v);
  std::vector<int> parent(next, -2);
  std::queue<int> q;
  parent[start] = -1;
  q.push(start);
  while (!q.empty() && parent[goal] == -2) {
    int x = q.front();
    q.pop();
    for (int y : tree[x])
      if (parent[y] == -2) {
        parent[y] = x;
        q.push(y);
      }
  }
  std::set<int> gt{u, v};
  for (int x = goal; x != -1; x = parent[x])
    if (x < nb)
      for (int w : bd.blocks[x]) gt.insert(w);
  return {gt.begin(), gt.end()};
}

std::vector<int> reachable_gt_exhaustive(const Graph& g, int u, int v) {
  if (g.num_nodes > 15)
    throw Error("reachable_gt_exhaustive: limited to n <= 15 (got " +
                std::to_string(g.num_nodes) + ")");
  if (u == v) return {u};
  auto adj = g.adjacency();
  std::vector<char> on_path(g.num_nodes, 0), in_gt(g.num_nodes, 0);
  std::vector<int> path;
  std::function<void(int)> dfs = [&](int w) {
    on_path[w] = 1;
    path.push_back(w);
    if (w == v) {
      for (int x : path) in_gt[x] = 1;
    } else {
      for (int x : adj[w])
        if (!on_path[x]) dfs(x);
    }
    path.pop_back();
    on_path[w] = 0;
  };
  dfs(u);
  std::vector<int> gt;
  for (int w = 0; w < g.num_nodes; ++w)
    if (in_gt[w]) gt.push_back(w);
  return gt;
}

OracleAnswer oracle(const Graph& g, const TaskQuery& q) {
  auto check_node = [&](int x) {
    if (x < 0 || x >= g.num_nodes)
      throw Error("oracle: query node " + std::to_string(x) + " out of range");
  };
  OracleAnswer ans;
  switch (q.task) {
    case Task::NodeDegree:
      check_node(q.u);
      ans.value = g.degree(q.u);
      ans.gt_nodes = {q.u};
      break;
    case Task::EdgeExistence:
      check_node(q.u);
      check_node(q.v);
      ans.value = g.has_edge(q.u, q.v) ? 1 : 0;
      ans.gt_nodes = {std::min(q.u, q.v), std::max(q.u, q.v)};
      break;
    case Task::ShortestDistance: {
      check_node(q.u);
      check_node(q.v);
      auto d = bfs_distances(g, q.u);
      ans.value = d[q.v];  // -1 when no path exists
      ans.gt_nodes = shortest_path_gt(g, q.u, q.v);
      break;
    }
    case Task::Reachable: {
      check_node(q.u);
      check_node(q.v);
      auto d = bfs_distances(g, q.u);
      ans.value = d[q.v] >= 0 ? 1 : 0;
      ans.gt_nodes = reachable_gt_blockcut(g, q.u, q.v);
      break;
    }
    case Task::Cycle:
      ans.value = has_cycle(g) ? 1 : 0;
      break;
    case Task::EdgeCount:
      ans.value = g.num_edges();
      break;
    case Task::Components:
      ans.value = count_components(g);
      break;
  }
  return ans;
}

// --- names -------------------------------------------------------------------

const char* to_string(GraphFamily f) {
  switch (f) {
    case GraphFamily::Cycle: return "cycle";
    case GraphFamily::Star: return "star";
    case GraphFamily::Complete: return "complete";
    case GraphFamily::Path: return "path";
    case GraphFamily::Tree: return "tree";
    case GraphFamily::Wheel: return "wheel";
    case GraphFamily::Barbell: return "barbell";
    case GraphFamily::Graphon: return "graphon";
  }
  return "?";
}

const char* to_string(GraphonKind k) {
  switch (k) {
    case GraphonKind::Constant: return "constant";
    case GraphonKind::Sparse: return "sparse";
    case GraphonKind::Dense: return "dense";
    case GraphonKind::Linear: return "linear";
    case GraphonKind::Quadratic: return "quadratic";
    case GraphonKind::Sigmoidal: return "sigmoidal";
    case GraphonKind::Step: return "step";
    case GraphonKind::Sin: return "sin";
    case GraphonKind::Avg: return "avg";
    case GraphonKind::ExpDecay: return "exp_decay";
    case GraphonKind::Softmax: return "softmax";
  }
  return "?";
}

const char* to_string(Task t) {
  switch (t) {
    case Task::NodeDegree: return "node_degree";
    case Task::EdgeExistence: return "edge_existence";
    case Task::ShortestDistance: return "shortest_distance";
    case Task::Reachable: return "reachable";
    case Task::Cycle: return "cycle";
    case Task::EdgeCount: return "edge_count";
    case Task::Components: return "components";
  }
  return "?";
}

Task task_from_string(const std::string& s) {
  for (Task t : {Task::NodeDegree, Task::EdgeExistence, Task::ShortestDistance, Task::Reachable,
                 Task::Cycle, Task::EdgeCount, Task::Components})
    if (s == to_string(t)) return t;
  throw Error("unknown task: " + s);
}

GraphFamily family_from_string(const std::string& s) {
  for (GraphFamily f :
       {GraphFamily::Cycle, GraphFamily::Star, GraphFamily::Complete, GraphFamily::Path,
        GraphFamily::Tree, GraphFamily::Wheel, GraphFamily::Barbell, GraphFamily::Graphon})
    if (s == to_string(f)) return f;
  throw Error("unknown graph family: " + s);
}

}  // namespace hlmg
