#include "hlmg/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace hlmg {

namespace {

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

// "a and b" / "a, b, and c" with an optional "with <feature>" clause per item
std::string neighbor_list(const std::vector<std::string>& items) {
  if (items.size() == 1) return items[0];
  if (items.size() == 2) return items[0] + " and " + items[1];
  std::string out;
  for (size_t i = 0; i + 1 < items.size(); ++i) out += items[i] + ", ";
  return out + "and " + items.back();
}

std::string structure_cgdl(const Graph& g, int i, const std::vector<std::string>& names) {
  auto ne = g.neighbors(i);
  if (ne.empty()) return "Node " + names[i] + " is connected to nothing.";
  std::vector<std::string> items;
  for (int w : ne) {
    std::string item = names[w];
    auto key = std::minmax(i, w);
    auto it = g.edge_features.find({key.first, key.second});
    if (it != g.edge_features.end()) item += " with " + it->second;
    items.push_back(std::move(item));
  }
  const char* noun = ne.size() == 1 ? "node " : "nodes ";
  return "Node " + names[i] + " is connected to " + noun + neighbor_list(items) + ".";
}

std::string structure_adjlist(const Graph& g, int i, const std::vector<std::string>& names) {
  auto ne = g.neighbors(i);
  std::vector<std::string> items;
  for (int w : ne) items.push_back(names[w]);
  return names[i] + ": [" + join(items, ", ") + "]";
}

std::string structure_edges(const Graph& g, int i, const std::vector<std::string>& names) {
  auto ne = g.neighbors(i);
  std::string head = "Edges of node " + names[i] + ": ";
  if (ne.empty()) return head + "none.";
  std::vector<std::string> pairs;
  for (int w : ne) pairs.push_back("(" + names[i] + ", " + names[w] + ")");
  return head + join(pairs, " ") + ".";
}

std::string feature_line(const Graph& g, int i, const std::vector<std::string>& names) {
  const auto& feats = g.node_features[i];
  if (feats.empty()) return "Node " + names[i] + " features: none.";
  std::vector<std::string> items;
  for (const auto& [k, v] : feats) items.push_back(k + ": " + v);
  return "Node " + names[i] + " features: " + join(items, "; ") + ".";
}

std::string query_line(const TaskQuery& q, const std::vector<std::string>& names) {
  switch (q.task) {
    case Task::ShortestDistance:
      return "What is the shortest distance between nodes " + names[q.u] + " and " + names[q.v] +
             "?";
    case Task::Cycle:
      return "Is the graph cyclic?";
    case Task::EdgeCount:
      return "What is the total number of edges in the graph?";
    case Task::Reachable:
      return "Are nodes " + names[q.u] + " and " + names[q.v] + " reachable from each other?";
    case Task::EdgeExistence:
      return "Does an edge exist between nodes " + names[q.u] + " and " + names[q.v] + "?";
    case Task::Components:
      return "How many connected components does the graph have?";
    case Task::NodeDegree:
      return "What is the degree of node " + names[q.u] + "?";
  }
  throw Error("query_line: unknown task");
}

std::vector<std::string> random_names(int n, Rng& rng) {
  static constexpr char kAlpha[] = "abcdefghijklmnopqrstuvwxyz0123456789";
  std::uniform_int_distribution<int> len_dist(1, 4);
  std::uniform_int_distribution<int> char_dist(0, 35);
  std::uniform_int_distribution<int> digit_dist(26, 35);
  std::set<std::string> used;
  std::vector<std::string> names;
  while (static_cast<int>(names.size()) < n) {
    const int len = len_dist(rng);
    std::string s(len, '?');
    for (auto& c : s) c = kAlpha[char_dist(rng)];
    // at least one digit keeps names disjoint from template words
    s[std::uniform_int_distribution<int>(0, len - 1)(rng)] = kAlpha[digit_dist(rng)];
    if (used.insert(s).second) names.push_back(std::move(s));
  }
  return names;
}

}  // namespace

std::string SerializedSample::full_text() const {
  std::vector<std::string> parts;
  for (size_t i = 0; i < structure_text.size(); ++i) {
    parts.push_back(structure_text[i]);
    if (!feature_text.empty()) parts.push_back(feature_text[i]);
  }
  parts.push_back(query_text);
  return join(parts, " ");
}

SerializedSample serialize_with_names(const Graph& g, const TaskQuery& q, Dialect dialect,
                                      std::vector<std::string> names) {
  if (static_cast<int>(names.size()) != g.num_nodes)
    throw Error("serialize: got " + std::to_string(names.size()) + " names for " +
                std::to_string(g.num_nodes) + " nodes");
  SerializedSample s;
  s.dialect = dialect;
  s.node_names = std::move(names);
  s.structure_text.reserve(g.num_nodes);
  for (int i = 0; i < g.num_nodes; ++i) {
    switch (dialect) {
      case Dialect::CGDL: s.structure_text.push_back(structure_cgdl(g, i, s.node_names)); break;
      case Dialect::AdjList: s.structure_text.push_back(structure_adjlist(g, i, s.node_names)); break;
      case Dialect::Edges: s.structure_text.push_back(structure_edges(g, i, s.node_names)); break;
    }
  }
  if (g.has_node_features())
    for (int i = 0; i < g.num_nodes; ++i) s.feature_text.push_back(feature_line(g, i, s.node_names));
  s.query_text = query_line(q, s.node_names);
  return s;
}

SerializedSample serialize(const Graph& g, const TaskQuery& q, Dialect dialect,
                           NodeNamePolicy policy, uint64_t seed) {
  std::vector<std::string> names;
  if (policy == NodeNamePolicy::Canonical) {
    for (int i = 0; i < g.num_nodes; ++i) names.push_back(std::to_string(i));
  } else {
    Rng rng(seed);
    names = random_names(g.num_nodes, rng);
  }
  return serialize_with_names(g, q, dialect, std::move(names));
}

std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur += ch;
    } else {
      if (!cur.empty()) {
        tokens.push_back(cur);
        cur.clear();
      }
      if (!std::isspace(static_cast<unsigned char>(ch))) tokens.push_back(std::string(1, ch));
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

// --- vocabulary ---------------------------------------------------------------

void Vocabulary::reindex() {
  ids_.clear();
  for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) ids_[tokens_[i]] = i;
}

Vocabulary Vocabulary::build(const std::vector<SerializedSample>& corpus, int reserved_numerals) {
  Vocabulary v;
  v.tokens_ = {kPadToken, kUnkToken};
  for (int i = 0; i < reserved_numerals; ++i) v.tokens_.push_back(std::to_string(i));
  std::set<std::string> reserved(v.tokens_.begin(), v.tokens_.end());
  std::set<std::string> rest;
  for (const auto& s : corpus)
    for (const auto& tok : split_tokens(s.full_text()))
      if (!reserved.count(tok)) rest.insert(tok);
  v.tokens_.insert(v.tokens_.end(), rest.begin(), rest.end());
  v.reindex();
  return v;
}

Vocabulary Vocabulary::extended(const std::vector<SerializedSample>& corpus) const {
  Vocabulary v = *this;
  std::set<std::string> unseen;
  for (const auto& s : corpus)
    for (const auto& tok : split_tokens(s.full_text()))
      if (!v.ids_.count(tok)) unseen.insert(tok);
  v.tokens_.insert(v.tokens_.end(), unseen.begin(), unseen.end());
  v.reindex();
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(const std::string& token) const { return ids_.count(token) > 0; }

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw Error("vocabulary: id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write vocabulary file: " + path);
  out << nlohmann::json(tokens_).dump() << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot read vocabulary file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("vocabulary file " + path + ": " + e.what());
  }
  if (!j.is_array()) throw FormatError("vocabulary file " + path + ": expected a JSON array");
  return from_tokens(j.get<std::vector<std::string>>());
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  if (v.size() < 2 || v.tokens_[0] != kPadToken || v.tokens_[1] != kUnkToken)
    throw FormatError("vocabulary: reserved tokens <pad>/<unk> missing or misplaced");
  v.reindex();
  if (static_cast<int>(v.ids_.size()) != v.size()) throw FormatError("vocabulary: duplicate token");
  return v;
}

// --- tokenization ---------------------------------------------------------------

std::vector<int> TokenizedSample::segment_ids() const {
  std::vector<int> seg(token_ids.size(), kQuerySegment);
  for (const auto& s : spans)
    for (int i = s.begin; i < s.end; ++i) seg[i] = s.node;
  return seg;
}

std::vector<int> TokenizedSample::segment_lengths() const {
  std::vector<int> lens(num_nodes + 1, 0);
  for (const auto& s : spans) {
    const int idx = s.node == kQuerySegment ? num_nodes : s.node;
    lens[idx] += s.end - s.begin;
  }
  return lens;
}

const Span& TokenizedSample::query_span() const {
  for (const auto& s : spans)
    if (s.kind == SpanKind::Query) return s;
  throw Error("tokenized sample: missing query span");
}

TokenizedSample tokenize(const SerializedSample& s, const Vocabulary& v, int max_positions) {
  TokenizedSample t;
  t.num_nodes = static_cast<int>(s.structure_text.size());
  auto push_span = [&](const std::string& text, int node, SpanKind kind) {
    Span span;
    span.node = node;
    span.kind = kind;
    span.begin = t.length();
    for (const auto& tok : split_tokens(text)) t.token_ids.push_back(v.id(tok));
    span.end = t.length();
    if (span.end == span.begin)
      throw Error("tokenize: empty span for node " + std::to_string(node));
    t.spans.push_back(span);
  };
  for (int i = 0; i < t.num_nodes; ++i) {
    push_span(s.structure_text[i], i, SpanKind::Structure);
    if (!s.feature_text.empty()) push_span(s.feature_text[i], i, SpanKind::Feature);
  }
  push_span(s.query_text, kQuerySegment, SpanKind::Query);
  if (t.length() > max_positions)
    throw Error("tokenize: sequence length " + std::to_string(t.length()) +
                " exceeds max positions " + std::to_string(max_positions));
  return t;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& v) {
  std::vector<std::string> toks;
  toks.reserve(ids.size());
  for (int id : ids) toks.push_back(v.token(id));
  return join(toks, " ");
}

// --- parsing back -----------------------------------------------------------

namespace {

std::vector<std::string> span_tokens(const std::vector<std::string>& all, const Span& s) {
  return {all.begin() + s.begin, all.begin() + s.end};
}

std::string display_name(const std::vector<std::string>& toks, Dialect dialect) {
  switch (dialect) {
    case Dialect::CGDL:
      if (toks.size() < 2 || toks[0] != "Node") throw FormatError("cgdl span: expected 'Node <name>'");
      return toks[1];
    case Dialect::AdjList:
      if (toks.empty()) throw FormatError("adjlist span: empty");
      return toks[0];
    case Dialect::Edges:
      if (toks.size() < 4 || toks[0] != "Edges") throw FormatError("edges span: expected 'Edges of node <name>'");
      return toks[3];
  }
  throw FormatError("unknown dialect");
}

}  // namespace

SerializedSample reassemble_sample(const std::string& text, const std::vector<Span>& spans,
                                   Dialect dialect, Task task) {
  (void)task;
  auto toks = split_tokens(text);
  SerializedSample s;
  s.dialect = dialect;
  int num_nodes = 0;
  for (const auto& sp : spans) num_nodes = std::max(num_nodes, sp.node + 1);
  s.structure_text.resize(num_nodes);
  s.node_names.resize(num_nodes);
  bool any_feature = false;
  for (const auto& sp : spans)
    if (sp.kind == SpanKind::Feature) any_feature = true;
  if (any_feature) s.feature_text.resize(num_nodes);
  for (const auto& sp : spans) {
    if (sp.end > static_cast<int>(toks.size()))
      throw FormatError("segment range [" + std::to_string(sp.begin) + "," + std::to_string(sp.end) +
                        ") exceeds token count " + std::to_string(toks.size()));
    auto st = span_tokens(toks, sp);
    const std::string joined = join(st, " ");
    switch (sp.kind) {
      case SpanKind::Structure:
        s.structure_text[sp.node] = joined;
        s.node_names[sp.node] = display_name(st, dialect);
        break;
      case SpanKind::Feature:
        s.feature_text[sp.node] = joined;
        break;
      case SpanKind::Query:
        s.query_text = joined;
        break;
    }
  }
  return s;
}

namespace {

// splits a CGDL neighbor run on "," and on "and" directly followed by a name
std::vector<std::vector<std::string>> split_items(const std::vector<std::string>& toks,
                                                  const std::set<std::string>& names) {
  std::vector<std::vector<std::string>> items;
  std::vector<std::string> cur;
  for (size_t i = 0; i < toks.size(); ++i) {
    const auto& tok = toks[i];
    if (tok == ",") {
      if (!cur.empty()) items.push_back(std::move(cur));
      cur = {};
    } else if (tok == "and" && i + 1 < toks.size() && names.count(toks[i + 1])) {
      if (!cur.empty()) items.push_back(std::move(cur));
      cur = {};
    } else {
      cur.push_back(tok);
    }
  }
  if (!cur.empty()) items.push_back(std::move(cur));
  return items;
}

}  // namespace

Graph parse_graph(const SerializedSample& s) {
  const int n = static_cast<int>(s.structure_text.size());
  std::unordered_map<std::string, int> index;
  for (int i = 0; i < n; ++i) index[s.node_names[i]] = i;
  std::set<std::string> name_set(s.node_names.begin(), s.node_names.end());

  std::vector<std::pair<int, int>> edges;
  std::map<std::pair<int, int>, std::string> edge_feats;
  for (int i = 0; i < n; ++i) {
    auto toks = split_tokens(s.structure_text[i]);
    switch (s.dialect) {
      case Dialect::CGDL: {
        // Node <i> is connected to {nothing | node(s) <list>} .
        if (toks.size() < 7) throw FormatError("cgdl structure span too short");
        if (toks.back() == ".") toks.pop_back();
        if (toks[5] == "nothing") break;
        std::vector<std::string> rest(toks.begin() + 6, toks.end());
        for (auto& item : split_items(rest, name_set)) {
          auto it = index.find(item[0]);
          if (it == index.end()) throw FormatError("cgdl: unknown neighbor '" + item[0] + "'");
          int w = it->second;
          auto key = std::minmax(i, w);
          edges.emplace_back(key.first, key.second);
          if (item.size() > 2 && item[1] == "with") {
            std::vector<std::string> feat(item.begin() + 2, item.end());
            edge_feats[{key.first, key.second}] = join(feat, " ");
          }
        }
        break;
      }
      case Dialect::AdjList: {
        for (const auto& tok : toks)
          if (name_set.count(tok) && tok != s.node_names[i]) {
            auto key = std::minmax(i, index[tok]);
            edges.emplace_back(key.first, key.second);
          }
        // self-neighbors cannot occur; a node listing itself would be a self-loop
        for (size_t k = 3; k < toks.size(); ++k)
          if (toks[k] == s.node_names[i]) {
            auto key = std::minmax(i, index[toks[k]]);
            (void)key;
            throw FormatError("adjlist: self-loop listed for node " + s.node_names[i]);
          }
        break;
      }
      case Dialect::Edges: {
        // Edges of node <i> : ( a , b ) ( c , d ) . | none .
        for (size_t k = 0; k + 4 < toks.size(); ++k) {
          if (toks[k] == "(" && toks[k + 2] == "," && toks[k + 4] == ")") {
            auto a = index.find(toks[k + 1]);
            auto b = index.find(toks[k + 3]);
            if (a == index.end() || b == index.end())
              throw FormatError("edges: unknown endpoint in pair");
            auto key = std::minmax(a->second, b->second);
            edges.emplace_back(key.first, key.second);
          }
        }
        break;
      }
    }
  }
  Graph g = Graph::from_edges(n, std::move(edges));
  g.edge_features = std::move(edge_feats);

  if (!s.feature_text.empty()) {
    g.node_features.resize(n);
    for (int i = 0; i < n; ++i) {
      auto toks = split_tokens(s.feature_text[i]);
      // Node <i> features : <k>: <v> ; ... .
      if (toks.size() < 5) throw FormatError("feature span too short");
      if (toks.back() == ".") toks.pop_back();
      std::vector<std::string> rest(toks.begin() + 4, toks.end());
      if (rest.size() == 1 && rest[0] == "none") continue;
      std::vector<std::vector<std::string>> items;
      std::vector<std::string> cur;
      for (const auto& tok : rest) {
        if (tok == ";") {
          items.push_back(std::move(cur));
          cur = {};
        } else {
          cur.push_back(tok);
        }
      }
      if (!cur.empty()) items.push_back(std::move(cur));
      for (auto& item : items) {
        auto colon = std::find(item.begin(), item.end(), ":");
        if (colon == item.end()) throw FormatError("feature item missing ':'");
        std::vector<std::string> key(item.begin(), colon), val(colon + 1, item.end());
        g.node_features[i].emplace_back(join(key, " "), join(val, " "));
      }
    }
  }
  return g;
}

TaskQuery parse_query(const SerializedSample& s, Task task) {
  TaskQuery q;
  q.task = task;
  std::unordered_map<std::string, int> index;
  for (size_t i = 0; i < s.node_names.size(); ++i) index[s.node_names[i]] = static_cast<int>(i);
  std::vector<int> found;
  for (const auto& tok : split_tokens(s.query_text)) {
    auto it = index.find(tok);
    if (it != index.end()) found.push_back(it->second);
  }
  switch (task) {
    case Task::NodeDegree:
      if (found.size() != 1) throw FormatError("degree query: expected one node name");
      q.u = found[0];
      break;
    case Task::EdgeExistence:
    case Task::ShortestDistance:
    case Task::Reachable:
      if (found.size() != 2) throw FormatError("pair query: expected two node names");
      q.u = found[0];
      q.v = found[1];
      break;
    default:
      break;
  }
  return q;
}

TokenizedSample reorder_segments(const TokenizedSample& t, const std::vector<int>& order) {
  if (static_cast<int>(order.size()) != t.num_nodes)
    throw Error("reorder_segments: order size mismatch");
  std::vector<std::vector<Span>> by_node(t.num_nodes);
  Span query;
  bool have_query = false;
  for (const auto& sp : t.spans) {
    if (sp.node == kQuerySegment) {
      query = sp;
      have_query = true;
    } else {
      by_node[sp.node].push_back(sp);
    }
  }
  if (!have_query) throw Error("reorder_segments: missing query span");
  TokenizedSample out;
  out.num_nodes = t.num_nodes;
  out.label = t.label;
  out.gt_nodes = t.gt_nodes;
  auto append = [&](const Span& sp) {
    Span ns = sp;
    ns.begin = out.length();
    for (int i = sp.begin; i < sp.end; ++i) out.token_ids.push_back(t.token_ids[i]);
    ns.end = out.length();
    out.spans.push_back(ns);
  };
  std::vector<char> seen(t.num_nodes, 0);
  for (int node : order) {
    if (node < 0 || node >= t.num_nodes || seen[node])
      throw Error("reorder_segments: order is not a permutation");
    seen[node] = 1;
    for (const auto& sp : by_node[node]) append(sp);
  }
  append(query);
  return out;
}

const char* to_string(Dialect d) {
  switch (d) {
    case Dialect::CGDL: return "cgdl";
    case Dialect::AdjList: return "adjlist";
    case Dialect::Edges: return "edges";
  }
  return "?";
}

const char* to_string(SpanKind k) {
  switch (k) {
    case SpanKind::Structure: return "structure";
    case SpanKind::Feature: return "feature";
    case SpanKind::Query: return "query";
  }
  return "?";
}

Dialect dialect_from_string(const std::string& s) {
  for (Dialect d : {Dialect::CGDL, Dialect::AdjList, Dialect::Edges})
    if (s == to_string(d)) return d;
  throw Error("unknown dialect: " + s);
}

SpanKind span_kind_from_string(const std::string& s) {
  for (SpanKind k : {SpanKind::Structure, SpanKind::Feature, SpanKind::Query})
    if (s == to_string(k)) return k;
  throw Error("unknown span kind: " + s);
}

}  // namespace hlmg
