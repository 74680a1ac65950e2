#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "hlmg/text.hpp"

using namespace hlmg;

namespace {

Graph path2() { return Graph::from_edges(2, {{0, 1}}); }

TaskQuery distance_query(int u, int v) { return TaskQuery{Task::ShortestDistance, u, v}; }

}  // namespace

TEST_CASE("CGDL structure templates") {
  auto s = serialize(path2(), distance_query(0, 1), Dialect::CGDL, NodeNamePolicy::Canonical, 0);
  CHECK(s.structure_text[0] == "Node 0 is connected to node 1.");
  CHECK(s.structure_text[1] == "Node 1 is connected to node 0.");
  CHECK(s.query_text == "What is the shortest distance between nodes 0 and 1?");

  auto star = Graph::from_edges(4, {{0, 1}, {0, 2}, {0, 3}});
  auto t = serialize(star, TaskQuery{Task::NodeDegree, 0}, Dialect::CGDL,
                     NodeNamePolicy::Canonical, 0);
  CHECK(t.structure_text[0] == "Node 0 is connected to nodes 1, 2, and 3.");
  CHECK(t.structure_text[1] == "Node 1 is connected to node 0.");
  CHECK(t.query_text == "What is the degree of node 0?");

  auto pair = Graph::from_edges(3, {{0, 1}, {0, 2}});
  auto u = serialize(pair, TaskQuery{Task::Cycle}, Dialect::CGDL, NodeNamePolicy::Canonical, 0);
  CHECK(u.structure_text[0] == "Node 0 is connected to nodes 1 and 2.");
  CHECK(u.query_text == "Is the graph cyclic?");
}

TEST_CASE("isolated nodes are connected to nothing") {
  auto g = Graph::from_edges(2, {});
  auto s = serialize(g, TaskQuery{Task::EdgeExistence, 0, 1}, Dialect::CGDL,
                     NodeNamePolicy::Canonical, 0);
  CHECK(s.structure_text[0] == "Node 0 is connected to nothing.");
  CHECK(s.structure_text[1] == "Node 1 is connected to nothing.");
}

TEST_CASE("edge features render inside the neighbor list") {
  Graph g = Graph::from_edges(3, {{0, 1}, {0, 2}});
  g.edge_features[{0, 1}] = "a double bond";
  g.edge_features[{0, 2}] = "a single bond";
  auto s = serialize(g, TaskQuery{Task::Cycle}, Dialect::CGDL, NodeNamePolicy::Canonical, 0);
  CHECK(s.structure_text[0] == "Node 0 is connected to nodes 1 with a double bond and 2 with a single bond.");
  CHECK(s.structure_text[1] == "Node 1 is connected to node 0 with a double bond.");
}

TEST_CASE("node features render as their own span") {
  Graph g = path2();
  g.node_features = {{{"Atomic Number", "7"}, {"Aromatic", "True"}}, {}};
  auto s = serialize(g, TaskQuery{Task::Cycle}, Dialect::CGDL, NodeNamePolicy::Canonical, 0);
  REQUIRE(s.feature_text.size() == 2);
  CHECK(s.feature_text[0] == "Node 0 features: Atomic Number: 7; Aromatic: True.");
  CHECK(s.feature_text[1] == "Node 1 features: none.");
}

TEST_CASE("adjacency-list and edge-list dialects") {
  auto star = Graph::from_edges(4, {{0, 1}, {0, 2}, {0, 3}});
  auto adj = serialize(star, TaskQuery{Task::Cycle}, Dialect::AdjList,
                       NodeNamePolicy::Canonical, 0);
  CHECK(adj.structure_text[0] == "0: [1, 2, 3]");
  CHECK(adj.structure_text[1] == "1: [0]");

  auto edges = serialize(star, TaskQuery{Task::Cycle}, Dialect::Edges,
                         NodeNamePolicy::Canonical, 0);
  CHECK(edges.structure_text[0] == "Edges of node 0: (0, 1) (0, 2) (0, 3).");
  CHECK(edges.structure_text[3] == "Edges of node 3: (3, 0).");

  auto lonely = serialize(Graph::from_edges(2, {}), TaskQuery{Task::Cycle}, Dialect::AdjList,
                          NodeNamePolicy::Canonical, 0);
  CHECK(lonely.structure_text[0] == "0: []");
  auto lonely2 = serialize(Graph::from_edges(2, {}), TaskQuery{Task::Cycle}, Dialect::Edges,
                           NodeNamePolicy::Canonical, 0);
  CHECK(lonely2.structure_text[0] == "Edges of node 0: none.");
}

TEST_CASE("random-string names are short, unique, and structure-preserving") {
  auto star = Graph::from_edges(5, {{0, 1}, {0, 2}, {0, 3}, {0, 4}});
  auto s = serialize(star, TaskQuery{Task::NodeDegree, 0}, Dialect::CGDL,
                     NodeNamePolicy::RandomString, 77);
  std::set<std::string> names(s.node_names.begin(), s.node_names.end());
  CHECK(names.size() == 5);
  for (const auto& n : s.node_names) {
    CHECK(n.size() >= 1);
    CHECK(n.size() <= 4);
    CHECK(std::any_of(n.begin(), n.end(), [](char c) { return std::isdigit(c); }));
  }
  // structure preserved: parse back and compare edges
  CHECK(parse_graph(s).edges == star.edges);
  // deterministic per seed
  auto again = serialize(star, TaskQuery{Task::NodeDegree, 0}, Dialect::CGDL,
                         NodeNamePolicy::RandomString, 77);
  CHECK(again.node_names == s.node_names);
}

TEST_CASE("vocabulary contains the corpus words plus reserved tokens") {
  auto s = serialize(path2(), distance_query(0, 1), Dialect::CGDL, NodeNamePolicy::Canonical, 0);
  auto v = Vocabulary::build({s}, 2);
  for (const char* w : {"Node", "0", "is", "connected", "to", "node", "1", ".", "?"})
    CHECK(v.contains(w));
  CHECK(v.id(Vocabulary::kPadToken) == Vocabulary::kPadId);
  CHECK(v.id(Vocabulary::kUnkToken) == Vocabulary::kUnkId);
  CHECK(v.id("0") == 2);
  CHECK(v.id("1") == 3);
  CHECK(v.id("never-seen") == Vocabulary::kUnkId);

  // idempotence and order invariance
  auto v2 = Vocabulary::build({s, s}, 2);
  CHECK(v2.tokens() == v.tokens());
  auto t = serialize(path2(), TaskQuery{Task::Cycle}, Dialect::CGDL, NodeNamePolicy::Canonical, 0);
  auto fwd = Vocabulary::build({s, t}, 2);
  auto rev = Vocabulary::build({t, s}, 2);
  CHECK(fwd.tokens() == rev.tokens());
}

TEST_CASE("vocabulary round trips through its file form") {
  auto s = serialize(path2(), distance_query(0, 1), Dialect::CGDL, NodeNamePolicy::Canonical, 0);
  auto v = Vocabulary::build({s}, 4);
  auto path = std::filesystem::temp_directory_path() / "hlmg_vocab_test.json";
  v.save(path.string());
  auto w = Vocabulary::load(path.string());
  CHECK(w.tokens() == v.tokens());
  std::filesystem::remove(path);
}

TEST_CASE("tokenize produces contiguous covering spans in node order") {
  auto g = Graph::from_edges(2, {{0, 1}});
  auto s = serialize(g, distance_query(0, 1), Dialect::CGDL, NodeNamePolicy::Canonical, 0);
  auto v = Vocabulary::build({s}, 2);
  auto t = tokenize(s, v, 512);

  REQUIRE(t.spans.size() == 3);
  CHECK(t.spans[0].node == 0);
  CHECK(t.spans[0].kind == SpanKind::Structure);
  CHECK(t.spans[1].node == 1);
  CHECK(t.spans[2].node == kQuerySegment);
  CHECK(t.spans[2].kind == SpanKind::Query);
  CHECK(t.spans[0].begin == 0);
  for (size_t i = 1; i < t.spans.size(); ++i) CHECK(t.spans[i].begin == t.spans[i - 1].end);
  CHECK(t.spans.back().end == t.length());

  // span token counts equal the word counts of the annotation strings
  CHECK(t.spans[0].end - t.spans[0].begin ==
        static_cast<int>(split_tokens(s.structure_text[0]).size()));
  CHECK(t.spans[2].end - t.spans[2].begin ==
        static_cast<int>(split_tokens(s.query_text).size()));
}

TEST_CASE("feature spans follow the structure span of their node") {
  Graph g = path2();
  g.node_features = {{{"color", "red"}}, {{"color", "blue"}}};
  auto s = serialize(g, TaskQuery{Task::Cycle}, Dialect::CGDL, NodeNamePolicy::Canonical, 0);
  auto v = Vocabulary::build({s}, 2);
  auto t = tokenize(s, v, 512);
  REQUIRE(t.spans.size() == 5);
  CHECK(t.spans[0].kind == SpanKind::Structure);
  CHECK(t.spans[1].kind == SpanKind::Feature);
  CHECK(t.spans[0].node == 0);
  CHECK(t.spans[1].node == 0);
  auto lens = t.segment_lengths();
  CHECK(lens.size() == 3);  // two nodes + query
  CHECK(lens[0] == t.spans[0].end - t.spans[0].begin + t.spans[1].end - t.spans[1].begin);
}

TEST_CASE("tokenize rejects overlong sequences with the required length") {
  auto g = generate_graph(GraphFamily::Complete, 9, std::nullopt, 0);
  auto s = serialize(g, TaskQuery{Task::Cycle}, Dialect::CGDL, NodeNamePolicy::Canonical, 0);
  auto v = Vocabulary::build({s}, 9);
  CHECK_THROWS_WITH_AS(tokenize(s, v, 10), doctest::Contains("exceeds max positions"), Error);
}

TEST_CASE("detokenize round trips modulo whitespace") {
  Rng rng(3);
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto g = generate_graph(GraphFamily::Graphon, 7, GraphonSpec::make(GraphonKind::Constant), seed);
    auto s = serialize(g, distance_query(0, 1), Dialect::CGDL, NodeNamePolicy::Canonical, 0);
    auto v = Vocabulary::build({s}, 7);
    auto t = tokenize(s, v, 2048);
    CHECK(split_tokens(detokenize(t.token_ids, v)) == split_tokens(s.full_text()));
  }
}

TEST_CASE("serialization is deterministic and parse_graph inverts it") {
  for (uint64_t seed = 0; seed < 30; ++seed) {
    auto kind = static_cast<GraphonKind>(seed % 11);
    auto g = generate_graph(GraphFamily::Graphon, 8, GraphonSpec::make(kind), seed);
    for (Dialect d : {Dialect::CGDL, Dialect::AdjList, Dialect::Edges}) {
      for (NodeNamePolicy p : {NodeNamePolicy::Canonical, NodeNamePolicy::RandomString}) {
        auto a = serialize(g, distance_query(0, 1), d, p, seed);
        auto b = serialize(g, distance_query(0, 1), d, p, seed);
        CHECK(a.full_text() == b.full_text());
        auto back = parse_graph(a);
        CHECK(back.num_nodes == g.num_nodes);
        CHECK(back.edges == g.edges);
        auto q = parse_query(a, Task::ShortestDistance);
        CHECK(q.u == 0);
        CHECK(q.v == 1);
      }
    }
  }
}

TEST_CASE("parse_graph recovers features") {
  Graph g = Graph::from_edges(3, {{0, 1}, {1, 2}});
  g.node_features = {{{"color", "red"}}, {{"size", "very big"}}, {}};
  g.edge_features[{0, 1}] = "a heavy link";
  auto s = serialize(g, TaskQuery{Task::Cycle}, Dialect::CGDL, NodeNamePolicy::Canonical, 0);
  auto back = parse_graph(s);
  CHECK(back.edges == g.edges);
  REQUIRE(back.has_node_features());
  CHECK(back.node_features[0] == g.node_features[0]);
  CHECK(back.node_features[1] == g.node_features[1]);
  CHECK(back.node_features[2].empty());
  CHECK(back.edge_features.at({0, 1}) == "a heavy link");
}

TEST_CASE("per-node annotation multiset is invariant under relabeling") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    auto g = generate_graph(GraphFamily::Graphon, 8, GraphonSpec::make(GraphonKind::Constant),
                            trial + 100);
    auto p = Permutation::random(8, rng);
    auto pg = permute(g, p);
    auto q = TaskQuery{Task::Cycle};
    auto sa = serialize(g, q, Dialect::CGDL, NodeNamePolicy::Canonical, 0);
    auto sb = serialize(pg, q, Dialect::CGDL, NodeNamePolicy::Canonical, 0);
    // rename node tokens of the original through p and compare as multisets
    std::vector<std::string> renamed;
    for (int i = 0; i < 8; ++i) {
      auto toks = split_tokens(sa.structure_text[i]);
      for (auto& t : toks) {
        for (int w = 0; w < 8; ++w)
          if (t == std::to_string(w)) {
            t = std::to_string(p(w));
            break;
          }
      }
      std::sort(toks.begin(), toks.end());  // neighbor order may differ after renaming
      std::string flat;
      for (const auto& t : toks) flat += t + " ";
      renamed.push_back(flat);
    }
    std::vector<std::string> target;
    for (int i = 0; i < 8; ++i) {
      auto toks = split_tokens(sb.structure_text[i]);
      std::sort(toks.begin(), toks.end());
      std::string flat;
      for (const auto& t : toks) flat += t + " ";
      target.push_back(flat);
    }
    std::sort(renamed.begin(), renamed.end());
    std::sort(target.begin(), target.end());
    CHECK(renamed == target);
  }
}

TEST_CASE("segment reordering moves spans as units") {
  auto g = Graph::from_edges(3, {{0, 1}, {1, 2}});
  auto s = serialize(g, distance_query(0, 2), Dialect::CGDL, NodeNamePolicy::Canonical, 0);
  auto v = Vocabulary::build({s}, 3);
  auto t = tokenize(s, v, 512);
  auto r = reorder_segments(t, {2, 0, 1});
  CHECK(r.length() == t.length());
  CHECK(r.spans[0].node == 2);
  CHECK(r.spans.back().kind == SpanKind::Query);
  // node 2's tokens moved to the front unchanged
  std::vector<int> orig(t.token_ids.begin() + t.spans[2].begin,
                        t.token_ids.begin() + t.spans[2].end);
  std::vector<int> moved(r.token_ids.begin() + r.spans[0].begin,
                         r.token_ids.begin() + r.spans[0].end);
  CHECK(orig == moved);
  CHECK_THROWS_AS(reorder_segments(t, {0, 0, 1}), Error);
}
