#include "hlmg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace hlmg {

using ordered_json = nlohmann::ordered_json;

TaskSpec TaskSpec::paper(Task task) {
  TaskSpec s;
  s.task = task;
  s.max_nodes = 40;
  switch (task) {
    case Task::ShortestDistance: s.num_classes = 6; s.size = 20000; break;
    case Task::Cycle: s.num_classes = 2; s.size = 4000; break;
    case Task::EdgeCount: s.num_classes = 70; s.size = 14000; break;
    case Task::Reachable: s.num_classes = 2; s.size = 4000; break;
    case Task::EdgeExistence: s.num_classes = 2; s.size = 4000; break;
    case Task::Components: s.num_classes = 38; s.size = 19000; break;
    case Task::NodeDegree: s.num_classes = 39; s.size = 8000; break;
  }
  return s;
}

TaskSpec TaskSpec::desk(Task task) {
  TaskSpec s;
  s.task = task;
  s.max_nodes = 12;
  const int pairs = s.max_nodes * (s.max_nodes - 1) / 2;
  switch (task) {
    case Task::ShortestDistance: s.num_classes = 6; s.size = 4000; break;
    case Task::Cycle: s.num_classes = 2; s.size = 2000; break;
    case Task::EdgeCount:
      s.num_classes = (pairs - 1) / 10 + 1;  // 7 at 12 nodes
      s.size = 2100;
      break;
    case Task::Reachable: s.num_classes = 2; s.size = 2000; break;
    case Task::EdgeExistence: s.num_classes = 2; s.size = 2000; break;
    case Task::Components:
      s.num_classes = s.max_nodes - 2;  // counts 1..n-2, mirroring the paper's 40 -> 38
      s.size = 3000;
      break;
    case Task::NodeDegree:
      s.num_classes = s.max_nodes - 1;  // degrees 0..n-2; degree n-1 excluded as at paper scale
      s.size = 2200;
      break;
  }
  return s;
}

std::optional<int> TaskSpec::class_of(const OracleAnswer& ans) const {
  switch (task) {
    case Task::ShortestDistance:
      if (ans.value == -1) return 0;  // class 0: no path exists
      if (ans.value >= 1 && ans.value <= num_classes - 1) return static_cast<int>(ans.value);
      return std::nullopt;
    case Task::Cycle:
    case Task::Reachable:
    case Task::EdgeExistence:
      return static_cast<int>(ans.value);
    case Task::EdgeCount: {
      if (ans.value < 1) return std::nullopt;
      const int c = static_cast<int>((ans.value - 1) / 10);  // 1..10 -> 0, 11..20 -> 1, ...
      if (c >= num_classes) return std::nullopt;
      return c;
    }
    case Task::Components: {
      const int c = static_cast<int>(ans.value) - 1;
      if (c < 0 || c >= num_classes) return std::nullopt;
      return c;
    }
    case Task::NodeDegree:
      if (ans.value >= num_classes) return std::nullopt;
      return static_cast<int>(ans.value);
  }
  return std::nullopt;
}

std::string TaskSpec::class_map_description() const {
  switch (task) {
    case Task::ShortestDistance: return "0=no path, 1..5=distance";
    case Task::Cycle: return "0=acyclic, 1=cyclic";
    case Task::EdgeCount: return "class c covers 10c+1..10c+10 edges";
    case Task::Reachable: return "0=unreachable, 1=reachable";
    case Task::EdgeExistence: return "0=absent, 1=present";
    case Task::Components: return "class c covers c+1 components";
    case Task::NodeDegree: return "class c = degree c";
  }
  return "?";
}

GenConfig GenConfig::desk() { return GenConfig{}; }

GenConfig GenConfig::paper() {
  GenConfig g;
  g.min_nodes = 10;
  g.max_nodes = 40;
  return g;
}

const std::vector<int>& Dataset::split_ids(Split s) const {
  switch (s) {
    case Split::Train: return train_ids;
    case Split::Val: return val_ids;
    case Split::Test: return test_ids;
  }
  throw Error("bad split");
}

void Dataset::retokenize(int max_positions) {
  for (auto& s : samples) {
    s.tokens = tokenize(s.text, vocab, max_positions);
    s.tokens.label = s.label;
    s.tokens.gt_nodes = s.gt_nodes;
  }
}

namespace {

int family_min_nodes(GraphFamily f) {
  switch (f) {
    case GraphFamily::Cycle: return 3;
    case GraphFamily::Wheel: return 4;
    case GraphFamily::Barbell: return 6;
    default: return 2;
  }
}

TaskQuery base_query(Task task) {
  TaskQuery q;
  q.task = task;
  switch (task) {
    case Task::NodeDegree: q.u = 0; break;
    case Task::EdgeExistence:
    case Task::ShortestDistance:
    case Task::Reachable: q.u = 0; q.v = 1; break;
    default: break;
  }
  return q;
}

}  // namespace

Dataset build_dataset(const TaskSpec& spec, const GenConfig& gen, uint64_t seed) {
  if (spec.num_classes < 2) throw Error("build_dataset: need at least 2 classes");
  if (gen.max_nodes < 2 || gen.min_nodes < 2 || gen.min_nodes > gen.max_nodes)
    throw Error("build_dataset: invalid node range");
  if (gen.families.empty()) throw Error("build_dataset: no graph families configured");

  const int per_class = spec.size / spec.num_classes;
  if (per_class < 10) throw Error("build_dataset: size too small for class count");
  const int test_c = static_cast<int>(std::llround(per_class * 0.1));
  const int val_c = static_cast<int>(std::llround(per_class * 0.1));
  const int train_c = per_class - test_c - val_c;

  // quota[phase][class]; phase 0 fills train+val at mixed sizes, phase 1 fills
  // the test split at exactly max_nodes
  std::vector<std::vector<int>> quota(3, std::vector<int>(spec.num_classes));
  for (int c = 0; c < spec.num_classes; ++c) {
    quota[0][c] = train_c;
    quota[1][c] = val_c;
    quota[2][c] = test_c;
  }

  Dataset d;
  d.spec = spec;
  d.dialect = gen.dialect;
  d.policy = gen.policy;
  d.seed = seed;

  struct Pending {
    Split split;
    Graph graph;
    TaskQuery query;
    int label;
    std::vector<int> gt;
  };
  std::vector<Pending> accepted;

  for (int phase = 0; phase < 2; ++phase) {
    auto open = [&]() {
      if (phase == 1)
        return std::any_of(quota[2].begin(), quota[2].end(), [](int q) { return q > 0; });
      for (int s = 0; s < 2; ++s)
        for (int c = 0; c < spec.num_classes; ++c)
          if (quota[s][c] > 0) return true;
      return false;
    };
    long long attempt = 0;
    while (open()) {
      if (attempt++ >= gen.max_attempts) {
        for (int s = 0; s < 3; ++s)
          for (int c = 0; c < spec.num_classes; ++c)
            if (quota[s][c] > 0)
              throw Error("build_dataset: class " + std::to_string(c) + " (split " +
                          to_string(static_cast<Split>(s)) + ") starving after " +
                          std::to_string(gen.max_attempts) + " attempts; " +
                          spec.class_map_description());
      }
      Rng rng(mix_seed(seed, static_cast<uint64_t>(phase) + 1, attempt));
      const int n = phase == 1
                        ? gen.max_nodes
                        : std::uniform_int_distribution<int>(gen.min_nodes, gen.max_nodes)(rng);
      std::vector<GraphFamily> avail;
      for (GraphFamily f : gen.families)
        if (n >= family_min_nodes(f)) avail.push_back(f);
      if (avail.empty()) continue;
      const GraphFamily fam = avail[std::uniform_int_distribution<size_t>(0, avail.size() - 1)(rng)];
      std::optional<GraphonSpec> gspec;
      if (fam == GraphFamily::Graphon) {
        const auto& kinds = gen.graphon_kinds;
        gspec = GraphonSpec::make(kinds[std::uniform_int_distribution<size_t>(0, kinds.size() - 1)(rng)]);
      }
      Graph g = generate_graph(fam, n, gspec, rng());

      // queried nodes are fixed first, then the whole graph is relabeled so the
      // query pair lands at a random position
      TaskQuery q = base_query(spec.task);
      Permutation p = Permutation::random(n, rng);
      g = permute(g, p);
      q = q.permuted(p);

      OracleAnswer ans = oracle(g, q);
      auto cls = spec.class_of(ans);
      if (!cls) continue;

      Split target;
      if (phase == 1) {
        if (quota[2][*cls] <= 0) continue;
        --quota[2][*cls];
        target = Split::Test;
      } else if (quota[0][*cls] > 0) {
        --quota[0][*cls];
        target = Split::Train;
      } else if (quota[1][*cls] > 0) {
        --quota[1][*cls];
        target = Split::Val;
      } else {
        continue;
      }
      accepted.push_back({target, std::move(g), q, *cls, std::move(ans.gt_nodes)});
    }
  }

  // serialize everything, then freeze the vocabulary and tokenize
  std::vector<SerializedSample> texts;
  texts.reserve(accepted.size());
  for (size_t i = 0; i < accepted.size(); ++i)
    texts.push_back(serialize(accepted[i].graph, accepted[i].query, gen.dialect, gen.policy,
                              mix_seed(seed, 0x7e, i)));
  d.vocab = Vocabulary::build(texts, gen.max_nodes);

  d.samples.reserve(accepted.size());
  for (size_t i = 0; i < accepted.size(); ++i) {
    DatasetSample s;
    s.id = static_cast<int>(i);
    s.split = accepted[i].split;
    s.graph = std::move(accepted[i].graph);
    s.query = accepted[i].query;
    s.text = std::move(texts[i]);
    s.label = accepted[i].label;
    s.gt_nodes = std::move(accepted[i].gt);
    s.tokens = tokenize(s.text, d.vocab, 1 << 20);
    s.tokens.label = s.label;
    s.tokens.gt_nodes = s.gt_nodes;
    switch (s.split) {
      case Split::Train: d.train_ids.push_back(s.id); break;
      case Split::Val: d.val_ids.push_back(s.id); break;
      case Split::Test: d.test_ids.push_back(s.id); break;
    }
    d.samples.push_back(std::move(s));
  }
  return d;
}

Dataset make_ood_variant(const Dataset& d, OodKind kind, uint64_t seed, Dialect target_dialect) {
  if (d.test_ids.empty()) throw Error("make_ood_variant: source dataset has no test split");
  Dataset out = d;
  std::vector<SerializedSample> fresh;
  for (int id : out.test_ids) {
    DatasetSample& s = out.samples[id];
    if (kind == OodKind::RenamedNodes) {
      s.text = serialize(s.graph, s.query, s.text.dialect, NodeNamePolicy::RandomString,
                         mix_seed(seed, 0xad, id));
    } else {
      s.text = serialize_with_names(s.graph, s.query, target_dialect, s.text.node_names);
    }
    fresh.push_back(s.text);
  }
  out.vocab = out.vocab.extended(fresh);
  out.retokenize();
  return out;
}

// --- persistence --------------------------------------------------------------

const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  for (Split sp : {Split::Train, Split::Val, Split::Test})
    if (s == to_string(sp)) return sp;
  throw Error("unknown split: " + s);
}

void save_dataset(const Dataset& d, const std::string& jsonl_path, const std::string& vocab_path) {
  d.vocab.save(vocab_path);
  std::ofstream out(jsonl_path);
  if (!out) throw FileError("cannot write dataset file: " + jsonl_path);
  ordered_json header;
  header["version"] = 1;
  header["task"] = to_string(d.spec.task);
  header["num_classes"] = d.spec.num_classes;
  header["dialect"] = to_string(d.dialect);
  header["seed"] = d.seed;
  out << header.dump() << "\n";
  for (const auto& s : d.samples) {
    ordered_json line;
    line["id"] = s.id;
    line["split"] = to_string(s.split);
    line["text"] = s.text.full_text();
    ordered_json segs = ordered_json::array();
    for (const auto& sp : s.tokens.spans)
      segs.push_back({sp.begin, sp.end, sp.node, to_string(sp.kind)});
    line["segments"] = segs;
    line["label"] = s.label;
    line["gt_nodes"] = s.gt_nodes;
    out << line.dump() << "\n";
  }
}

namespace {

Dialect detect_dialect(const std::string& structure_text) {
  auto toks = split_tokens(structure_text);
  if (!toks.empty() && toks[0] == "Node") return Dialect::CGDL;
  if (!toks.empty() && toks[0] == "Edges") return Dialect::Edges;
  return Dialect::AdjList;
}

}  // namespace

Dataset load_dataset(const std::string& jsonl_path, const std::string& vocab_path) {
  std::ifstream in(jsonl_path);
  if (!in) throw FileError("cannot read dataset file: " + jsonl_path);

  Dataset d;
  d.vocab = Vocabulary::load(vocab_path);

  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) -> FormatError {
    return FormatError(jsonl_path + " line " + std::to_string(line_no) + ": " + what);
  };

  if (!std::getline(in, line)) throw FormatError(jsonl_path + ": empty file");
  line_no = 1;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw fail(e.what());
  }
  if (!header.contains("version")) throw fail("missing field 'version'");
  if (header["version"].get<int>() != 1)
    throw fail("unsupported version: expected 1, found " + header["version"].dump());
  for (const char* field : {"task", "num_classes", "dialect", "seed"})
    if (!header.contains(field)) throw fail(std::string("missing field '") + field + "'");
  d.spec.task = task_from_string(header["task"].get<std::string>());
  d.spec.num_classes = header["num_classes"].get<int>();
  d.dialect = dialect_from_string(header["dialect"].get<std::string>());
  d.seed = header["seed"].get<uint64_t>();

  int max_nodes = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw fail(e.what());
    }
    for (const char* field : {"id", "split", "text", "segments", "label", "gt_nodes"})
      if (!j.contains(field)) throw fail(std::string("missing field '") + field + "'");

    DatasetSample s;
    try {
      s.id = j["id"].get<int>();
      s.split = split_from_string(j["split"].get<std::string>());
      s.label = j["label"].get<int>();
      s.gt_nodes = j["gt_nodes"].get<std::vector<int>>();
      const std::string text = j["text"].get<std::string>();
      std::vector<Span> spans;
      for (const auto& seg : j["segments"]) {
        if (!seg.is_array() || seg.size() != 4) throw fail("segment entry must be [start,end,node,kind]");
        Span sp;
        sp.begin = seg[0].get<int>();
        sp.end = seg[1].get<int>();
        sp.node = seg[2].get<int>();
        sp.kind = span_kind_from_string(seg[3].get<std::string>());
        spans.push_back(sp);
      }
      const Dialect dialect = detect_dialect(text);
      s.text = reassemble_sample(text, spans, dialect, d.spec.task);
      s.graph = parse_graph(s.text);
      s.query = parse_query(s.text, d.spec.task);
      s.tokens = tokenize(s.text, d.vocab, 1 << 20);
      s.tokens.label = s.label;
      s.tokens.gt_nodes = s.gt_nodes;
      // the stored segment map is the contract; make sure retokenization agrees
      if (s.tokens.spans.size() != spans.size()) throw fail("segment count mismatch after retokenization");
      for (size_t k = 0; k < spans.size(); ++k) {
        const Span &a = spans[k], &b = s.tokens.spans[k];
        if (a.begin != b.begin || a.end != b.end || a.node != b.node || a.kind != b.kind)
          throw fail("segment " + std::to_string(k) + " mismatch after retokenization");
      }
    } catch (const FormatError&) {
      throw;
    } catch (const std::exception& e) {
      throw fail(e.what());
    }
    if (s.split == Split::Test) max_nodes = std::max(max_nodes, s.graph.num_nodes);
    switch (s.split) {
      case Split::Train: d.train_ids.push_back(s.id); break;
      case Split::Val: d.val_ids.push_back(s.id); break;
      case Split::Test: d.test_ids.push_back(s.id); break;
    }
    if (s.id != static_cast<int>(d.samples.size())) throw fail("non-sequential sample id");
    d.samples.push_back(std::move(s));
  }
  d.spec.size = static_cast<int>(d.samples.size());
  d.spec.max_nodes = max_nodes;
  return d;
}

}  // namespace hlmg
