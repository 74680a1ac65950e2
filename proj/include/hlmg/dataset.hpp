#pragma once

// Balanced benchmark construction for the seven graph-reasoning tasks:
// labeling via the oracle, class maps, 80/10/10 splits, OOD variants, and
// JSONL persistence.

#include <optional>
#include <string>
#include <vector>

#include "hlmg/graph.hpp"
#include "hlmg/text.hpp"

namespace hlmg {

struct TaskSpec {
  Task task = Task::Cycle;
  int num_classes = 2;
  int size = 2000;      // total samples across splits
  int max_nodes = 12;

  // paper-scale class counts / sizes from the task table
  static TaskSpec paper(Task task);
  // desk-scale: max_nodes 12, sizes shrunk, class counts derived from max_nodes
  static TaskSpec desk(Task task);

  // Maps an oracle answer to a class index; returns nullopt when the answer
  // falls outside the representable classes (sample is rejected).
  std::optional<int> class_of(const OracleAnswer& ans) const;
  std::string class_map_description() const;
};

struct GenConfig {
  int min_nodes = 6;
  int max_nodes = 12;
  std::vector<GraphFamily> families{GraphFamily::Cycle,    GraphFamily::Star,
                                    GraphFamily::Complete, GraphFamily::Path,
                                    GraphFamily::Tree,     GraphFamily::Wheel,
                                    GraphFamily::Barbell,  GraphFamily::Graphon};
  std::vector<GraphonKind> graphon_kinds{
      GraphonKind::Constant, GraphonKind::Sparse,   GraphonKind::Dense,  GraphonKind::Linear,
      GraphonKind::Quadratic, GraphonKind::Sigmoidal, GraphonKind::Step, GraphonKind::Sin,
      GraphonKind::Avg,      GraphonKind::ExpDecay, GraphonKind::Softmax};
  long long max_attempts = 10'000'000;  // rejection-sampling budget
  Dialect dialect = Dialect::CGDL;
  NodeNamePolicy policy = NodeNamePolicy::Canonical;

  static GenConfig desk();
  static GenConfig paper();
};

enum class Split { Train, Val, Test };

struct DatasetSample {
  int id = 0;
  Split split = Split::Train;
  Graph graph;
  TaskQuery query;
  SerializedSample text;
  TokenizedSample tokens;
  int label = 0;
  std::vector<int> gt_nodes;
};

struct Dataset {
  TaskSpec spec;
  Dialect dialect = Dialect::CGDL;
  NodeNamePolicy policy = NodeNamePolicy::Canonical;
  uint64_t seed = 0;
  Vocabulary vocab;
  std::vector<DatasetSample> samples;
  std::vector<int> train_ids, val_ids, test_ids;

  const std::vector<int>& split_ids(Split s) const;
  // retokenizes every sample against `vocab` (after vocabulary changes)
  void retokenize(int max_positions = 1 << 20);
};

// Rejection-samples graphs until every class holds size/num_classes samples,
// split 80/10/10 per class. Test-split graphs have exactly max_nodes nodes.
// Throws naming the starving class when the attempt budget runs out.
Dataset build_dataset(const TaskSpec& spec, const GenConfig& gen, uint64_t seed);

enum class OodKind { RenamedNodes, DialectShift };

// Re-serializes the test split with random short node names or an alternate
// dialect; labels and ground-truth sets are untouched, the vocabulary is
// extended as needed.
Dataset make_ood_variant(const Dataset& d, OodKind kind, uint64_t seed,
                         Dialect target_dialect = Dialect::Edges);

void save_dataset(const Dataset& d, const std::string& jsonl_path, const std::string& vocab_path);
Dataset load_dataset(const std::string& jsonl_path, const std::string& vocab_path);

const char* to_string(Split s);
Split split_from_string(const std::string& s);

}  // namespace hlmg
