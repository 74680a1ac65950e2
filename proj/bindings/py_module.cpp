// Python bindings over the core operations: graph generation and oracles,
// dataset construction and persistence, training/evaluation, robustness,
// and the interpretability metrics.

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hlmg/dataset.hpp"
#include "hlmg/interpret.hpp"
#include "hlmg/train.hpp"
#include "hlmg/version.hpp"

namespace py = pybind11;
using namespace hlmg;

namespace {

struct PyModel {
  ModelParams<float> params;
};

TaskSpec make_spec(const std::string& task, const std::string& preset, int size, int max_nodes) {
  Task t = task_from_string(task);
  TaskSpec spec = preset == "paper" ? TaskSpec::paper(t) : TaskSpec::desk(t);
  if (size > 0) spec.size = size;
  if (max_nodes > 0) spec.max_nodes = max_nodes;
  return spec;
}

py::dict report_to_dict(const MetricsReport& r) {
  py::dict d;
  d["test_accuracy"] = r.test_accuracy;
  d["best_epoch"] = r.best_epoch;
  d["wall_time_s"] = r.wall_time_s;
  py::list epochs;
  for (const auto& e : r.epochs) {
    py::dict ed;
    ed["epoch"] = e.epoch;
    ed["train_loss"] = e.train_loss;
    ed["val_accuracy"] = e.val_accuracy;
    ed["alpha"] = e.alpha;
    epochs.append(ed);
  }
  d["epochs"] = epochs;
  return d;
}

}  // namespace

PYBIND11_MODULE(_hlmg, m) {
  m.doc() = "hierarchical graph language model: graphs, datasets, training, interpretation";
  m.attr("__version__") = kVersion;

  py::register_exception<Error>(m, "HlmgError");

  py::class_<Graph>(m, "Graph")
      .def(py::init([](int n, const std::vector<std::pair<int, int>>& edges) {
             return Graph::from_edges(n, edges);
           }),
           py::arg("num_nodes"), py::arg("edges"))
      .def_readonly("num_nodes", &Graph::num_nodes)
      .def_readonly("edges", &Graph::edges)
      .def("degree", &Graph::degree)
      .def("neighbors", &Graph::neighbors)
      .def("has_edge", &Graph::has_edge)
      .def("__repr__", [](const Graph& g) {
        return "Graph(n=" + std::to_string(g.num_nodes) + ", m=" + std::to_string(g.num_edges()) +
               ")";
      });

  m.def(
      "generate_graph",
      [](const std::string& family, int n, py::object graphon_kind, uint64_t seed) {
        GraphFamily f = family_from_string(family);
        std::optional<GraphonSpec> spec;
        if (!graphon_kind.is_none()) {
          const auto kind = graphon_kind.cast<std::string>();
          for (int k = 0; k <= static_cast<int>(GraphonKind::Softmax); ++k)
            if (kind == to_string(static_cast<GraphonKind>(k)))
              spec = GraphonSpec::make(static_cast<GraphonKind>(k));
          if (!spec) throw Error("unknown graphon kind: " + kind);
        }
        return generate_graph(f, n, spec, seed);
      },
      py::arg("family"), py::arg("n"), py::arg("graphon") = py::none(), py::arg("seed") = 0);

  m.def(
      "evaluate_graphon",
      [](const std::string& kind, double v1, double v2, double p, double threshold) {
        for (int k = 0; k <= static_cast<int>(GraphonKind::Softmax); ++k)
          if (kind == to_string(static_cast<GraphonKind>(k))) {
            GraphonSpec spec = GraphonSpec::make(static_cast<GraphonKind>(k));
            if (p >= 0) spec.p = p;
            if (threshold >= 0) spec.threshold = threshold;
            return evaluate_graphon(spec, v1, v2);
          }
        throw Error("unknown graphon kind: " + kind);
      },
      py::arg("kind"), py::arg("v1"), py::arg("v2"), py::arg("p") = -1.0,
      py::arg("threshold") = -1.0);

  m.def(
      "permute_graph",
      [](const Graph& g, const std::vector<int>& mapping) {
        Permutation p;
        p.map = mapping;
        return permute(g, p);
      },
      py::arg("graph"), py::arg("mapping"));

  m.def(
      "oracle",
      [](const Graph& g, const std::string& task, int u, int v) {
        TaskQuery q{task_from_string(task), u, v};
        auto ans = oracle(g, q);
        py::dict d;
        d["value"] = ans.value;
        d["gt_nodes"] = ans.gt_nodes;
        return d;
      },
      py::arg("graph"), py::arg("task"), py::arg("u") = -1, py::arg("v") = -1);

  m.def(
      "serialize_graph",
      [](const Graph& g, const std::string& task, int u, int v, const std::string& dialect,
         const std::string& policy, uint64_t seed) {
        TaskQuery q{task_from_string(task), u, v};
        auto s = serialize(g, q, dialect_from_string(dialect),
                           policy == "random_string" ? NodeNamePolicy::RandomString
                                                     : NodeNamePolicy::Canonical,
                           seed);
        py::dict d;
        d["text"] = s.full_text();
        d["node_names"] = s.node_names;
        d["query"] = s.query_text;
        return d;
      },
      py::arg("graph"), py::arg("task"), py::arg("u") = -1, py::arg("v") = -1,
      py::arg("dialect") = "cgdl", py::arg("policy") = "canonical", py::arg("seed") = 0);

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("size", [](const Dataset& d) { return d.samples.size(); })
      .def_property_readonly("num_classes", [](const Dataset& d) { return d.spec.num_classes; })
      .def_property_readonly("task", [](const Dataset& d) { return to_string(d.spec.task); })
      .def_property_readonly("vocab_size", [](const Dataset& d) { return d.vocab.size(); })
      .def_property_readonly("train_ids", [](const Dataset& d) { return d.train_ids; })
      .def_property_readonly("val_ids", [](const Dataset& d) { return d.val_ids; })
      .def_property_readonly("test_ids", [](const Dataset& d) { return d.test_ids; })
      .def("label", [](const Dataset& d, int id) { return d.samples.at(id).label; })
      .def("text", [](const Dataset& d, int id) { return d.samples.at(id).text.full_text(); })
      .def("gt_nodes", [](const Dataset& d, int id) { return d.samples.at(id).gt_nodes; })
      .def("graph", [](const Dataset& d, int id) { return d.samples.at(id).graph; })
      .def("save",
           [](const Dataset& d, const std::string& jsonl, const std::string& vocab) {
             save_dataset(d, jsonl, vocab);
           })
      .def("__len__", [](const Dataset& d) { return d.samples.size(); });

  m.def(
      "build_dataset",
      [](const std::string& task, const std::string& preset, int size, int max_nodes,
         int min_nodes, const std::string& dialect, uint64_t seed) {
        TaskSpec spec = make_spec(task, preset, size, max_nodes);
        GenConfig gen = preset == "paper" ? GenConfig::paper() : GenConfig::desk();
        if (max_nodes > 0) gen.max_nodes = max_nodes;
        if (min_nodes > 0) gen.min_nodes = min_nodes;
        gen.dialect = dialect_from_string(dialect);
        return build_dataset(spec, gen, seed);
      },
      py::arg("task"), py::arg("preset") = "desk", py::arg("size") = 0, py::arg("max_nodes") = 0,
      py::arg("min_nodes") = 0, py::arg("dialect") = "cgdl", py::arg("seed") = 0);

  m.def("load_dataset", &load_dataset, py::arg("jsonl_path"), py::arg("vocab_path"));

  m.def(
      "make_ood_variant",
      [](const Dataset& d, const std::string& kind, uint64_t seed, const std::string& dialect) {
        OodKind k = kind == "renamed_nodes" ? OodKind::RenamedNodes : OodKind::DialectShift;
        return make_ood_variant(d, k, seed, dialect_from_string(dialect));
      },
      py::arg("dataset"), py::arg("kind"), py::arg("seed") = 0, py::arg("dialect") = "edges");

  py::class_<PyModel>(m, "Model")
      .def_property_readonly("alpha", [](const PyModel& mdl) { return mdl.params.alpha(); })
      .def_property_readonly("num_classes",
                             [](const PyModel& mdl) { return mdl.params.config.num_classes; })
      .def("save",
           [](const PyModel& mdl, const std::string& path) { save_checkpoint(mdl.params, path); })
      .def("predict",
           [](const PyModel& mdl, const Dataset& d, int id) {
             return predict(d.samples.at(id).tokens, mdl.params);
           })
      .def("evaluate", [](const PyModel& mdl, const Dataset& d, const std::string& split) {
        return evaluate_split(d, split_from_string(split), mdl.params);
      });

  m.def("load_model",
        [](const std::string& path) { return PyModel{load_checkpoint(path)}; });

  m.def(
      "train",
      [](const Dataset& d, const std::string& preset, uint64_t seed, int epochs, double lr,
         int batch_size, const std::string& pooling, double alpha_init, int threads,
         double early_stop_val_acc, int global_layers) {
        ModelConfig mc = preset == "paper" ? ModelConfig::paper() : ModelConfig::desk();
        mc.pooling = pooling_from_string(pooling);
        mc.alpha_init = alpha_init;
        if (global_layers > 0) mc.global_layers = global_layers;
        TrainConfig tc = preset == "paper" ? TrainConfig::paper() : TrainConfig::desk();
        tc.seed = seed;
        if (epochs > 0) tc.epochs = epochs;
        if (lr > 0) tc.lr = lr;
        if (batch_size > 0) tc.batch_size = batch_size;
        tc.threads = threads;
        tc.early_stop_val_acc = early_stop_val_acc;
        auto result = train(d, mc, tc);
        return py::make_tuple(PyModel{std::move(result.params)}, report_to_dict(result.report));
      },
      py::arg("dataset"), py::arg("preset") = "desk", py::arg("seed") = 0, py::arg("epochs") = 0,
      py::arg("lr") = 0.0, py::arg("batch_size") = 0, py::arg("pooling") = "mean",
      py::arg("alpha_init") = 0.5, py::arg("threads") = 0, py::arg("early_stop_val_acc") = 0.0,
      py::arg("global_layers") = 0);

  m.def(
      "robustness_eval",
      [](const Dataset& d, const PyModel& mdl, int permutations, uint64_t seed) {
        auto r = robustness_eval(d, mdl.params, permutations, seed);
        py::dict out;
        out["baseline_accuracy"] = r.baseline_accuracy;
        out["permuted_accuracies"] = r.permuted_accuracies;
        out["mean_drop"] = r.mean_drop;
        out["max_drop"] = r.max_drop;
        return out;
      },
      py::arg("dataset"), py::arg("model"), py::arg("permutations") = 10, py::arg("seed") = 0);

  m.def(
      "node_importance",
      [](const Dataset& d, const PyModel& mdl, int id, const std::string& method,
         const std::string& layer_policy) {
        const auto& s = d.samples.at(id);
        InterpretationResult r;
        if (method == "attention")
          r = query_attention_importance(
              s.tokens, mdl.params,
              layer_policy == "mean" ? LayerPolicy::MeanLayers : LayerPolicy::Last);
        else
          r = gradient_importance(s.tokens, mdl.params, attribution_from_string(method));
        py::dict out;
        out["scores"] = r.node_scores;
        out["ranking"] = r.ranking;
        return out;
      },
      py::arg("dataset"), py::arg("model"), py::arg("sample_id"), py::arg("method") = "attention",
      py::arg("layer_policy") = "last");

  m.def(
      "recall_at_k",
      [](const std::vector<int>& ranking, const std::vector<int>& gt) {
        InterpretationResult r;
        r.ranking = ranking;
        r.node_scores.assign(ranking.size(), 0.0);
        return recall_at_k(r, gt);
      },
      py::arg("ranking"), py::arg("gt_nodes"));

  m.def(
      "fidelity",
      [](const Dataset& d, const PyModel& mdl, const std::string& method,
         const std::vector<double>& sparsity_grid) {
        RankingProvider provider = [&](const DatasetSample& s) {
          return method == "attention"
                     ? query_attention_importance(s.tokens, mdl.params, LayerPolicy::Last)
                     : gradient_importance(s.tokens, mdl.params, attribution_from_string(method));
        };
        auto r = fidelity(d, Split::Test, mdl.params, provider, sparsity_grid);
        py::dict out;
        out["sparsity"] = r.sparsity;
        out["fidelity"] = r.fidelity;
        out["evaluated"] = r.evaluated;
        out["notes"] = r.notes;
        return out;
      },
      py::arg("dataset"), py::arg("model"), py::arg("method") = "attention",
      py::arg("sparsity_grid") = std::vector<double>{0.0, 0.25, 0.5, 0.75});

  m.def(
      "layerwise_attention_curve",
      [](const Dataset& d, const PyModel& mdl) {
        auto c = layerwise_attention_curve(d, Split::Test, mdl.params);
        py::dict out;
        out["gt_mean"] = c.gt_mean;
        out["non_gt_mean"] = c.non_gt_mean;
        out["query_self_mean"] = c.self_mean;
        out["samples"] = c.samples;
        return out;
      },
      py::arg("dataset"), py::arg("model"));

  m.def(
      "attention_flops",
      [](const std::vector<int>& segment_lengths, int dim, int local_layers) {
        ModelConfig c;
        c.dim = dim;
        c.local_layers = local_layers;
        auto f = attention_flops(c, segment_lengths);
        return py::make_tuple(f.local, f.full);
      },
      py::arg("segment_lengths"), py::arg("dim") = 64, py::arg("local_layers") = 2);

  m.def(
      "complexity_benchmark",
      [](const std::vector<int>& node_counts, int tokens_per_node, double min_ms) {
        auto rows = complexity_benchmark(ModelConfig::desk(), node_counts, tokens_per_node, min_ms);
        py::list out;
        for (const auto& r : rows) {
          py::dict d;
          d["nodes"] = r.nodes;
          d["tokens_per_node"] = r.tokens_per_node;
          d["local_ms"] = r.local_ms;
          d["full_ms"] = r.full_ms;
          d["local_flops"] = r.local_flops;
          d["full_flops"] = r.full_flops;
          out.append(d);
        }
        return out;
      },
      py::arg("node_counts"), py::arg("tokens_per_node") = 16, py::arg("min_ms") = 50.0);
}
