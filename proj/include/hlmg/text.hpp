#pragma once

// Natural-language rendering of graphs and task queries (three prompt
// dialects), a word-level tokenizer/vocabulary, and the per-token segment
// bookkeeping consumed by the model's block mask and pooling layer.

#include <string>
#include <unordered_map>
#include <vector>

#include "hlmg/graph.hpp"

namespace hlmg {

enum class Dialect { CGDL, AdjList, Edges };
enum class NodeNamePolicy { Canonical, RandomString };
enum class SpanKind { Structure, Feature, Query };

inline constexpr int kQuerySegment = -1;

struct SerializedSample {
  std::vector<std::string> structure_text;  // one per node
  std::vector<std::string> feature_text;    // empty unless the graph has node features
  std::string query_text;
  Dialect dialect = Dialect::CGDL;
  std::vector<std::string> node_names;  // node index -> display token

  // span order: per node [structure, feature?], then the query
  std::string full_text() const;
};

// Renders the graph and query. For RandomString the display names are unique
// alphanumeric strings of length <= 4 containing at least one digit (keeps
// them distinct from template words), drawn from `seed`.
SerializedSample serialize(const Graph& g, const TaskQuery& q, Dialect dialect,
                           NodeNamePolicy policy, uint64_t seed);

// Same, with caller-chosen display names (used for OOD renames and induced
// subgraphs that must keep their original names).
SerializedSample serialize_with_names(const Graph& g, const TaskQuery& q, Dialect dialect,
                                      std::vector<std::string> names);

// Word-level split: alphanumeric runs are single tokens, every punctuation
// character is its own token, whitespace separates.
std::vector<std::string> split_tokens(const std::string& text);

class Vocabulary {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kUnkId = 1;
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kUnkToken = "<unk>";

  Vocabulary() = default;

  // Reserved ids: PAD, UNK, then the numeric node-name tokens "0".."N-1";
  // remaining corpus tokens follow in lexicographic order (canonical, so the
  // result is independent of corpus ordering).
  static Vocabulary build(const std::vector<SerializedSample>& corpus, int reserved_numerals);

  // Appends unseen tokens (lexicographic) without disturbing existing ids.
  Vocabulary extended(const std::vector<SerializedSample>& corpus) const;

  int id(const std::string& token) const;  // kUnkId when absent
  bool contains(const std::string& token) const;
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  void save(const std::string& path) const;  // JSON array of tokens
  static Vocabulary load(const std::string& path);
  static Vocabulary from_tokens(std::vector<std::string> tokens);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  void reindex();
};

struct Span {
  int node = kQuerySegment;  // node index, or kQuerySegment for the query span
  SpanKind kind = SpanKind::Query;
  int begin = 0, end = 0;  // token range [begin, end)
};

struct TokenizedSample {
  std::vector<int> token_ids;
  std::vector<Span> spans;  // contiguous, disjoint, covering; query last
  int num_nodes = 0;
  int label = -1;
  std::vector<int> gt_nodes;

  int length() const { return static_cast<int>(token_ids.size()); }
  // per-token segment id (node index or kQuerySegment)
  std::vector<int> segment_ids() const;
  std::vector<int> segment_lengths() const;  // per node-segment, query last
  const Span& query_span() const;
};

// Token ids + segment map. Throws when the sequence exceeds max_positions
// (message carries the required length). Unknown tokens map to UNK.
TokenizedSample tokenize(const SerializedSample& s, const Vocabulary& v, int max_positions);

std::string detokenize(const std::vector<int>& ids, const Vocabulary& v);

// Rebuilds the per-span strings/names of a stored sample from its full text
// and token-range segments (the JSONL on-disk form).
SerializedSample reassemble_sample(const std::string& text,
                                   const std::vector<Span>& spans, Dialect dialect, Task task);

// Inverse of serialize: recovers the graph (edges + features) from the
// rendered text. Round-trips exactly for serializer output.
Graph parse_graph(const SerializedSample& s);
TaskQuery parse_query(const SerializedSample& s, Task task);

// Reorders node segments (token spans move as units, names unchanged);
// order[k] = node whose segment is emitted k-th. The query span stays last.
TokenizedSample reorder_segments(const TokenizedSample& t, const std::vector<int>& order);

const char* to_string(Dialect d);
const char* to_string(SpanKind k);
Dialect dialect_from_string(const std::string& s);
SpanKind span_kind_from_string(const std::string& s);

}  // namespace hlmg
