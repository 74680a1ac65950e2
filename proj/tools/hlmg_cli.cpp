// hlmg: dataset generation, training, evaluation, robustness, interpretability,
// complexity benchmarking, and gradient checking for the hierarchical graph
// language model. Subcommands read a flat key=value config file via --config;
// command-line flags win over config values.

#include <CLI11.hpp>

#include <algorithm>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "hlmg/dataset.hpp"
#include "hlmg/interpret.hpp"
#include "hlmg/train.hpp"
#include "hlmg/version.hpp"

namespace fs = std::filesystem;
using namespace hlmg;

namespace {

// distinct exit codes so callers can tell failure classes apart
constexpr int kExitUsage = 2;       // unknown flag / bad arguments
constexpr int kExitMissing = 3;     // referenced file does not exist
constexpr int kExitMismatch = 4;    // malformed file or config/checkpoint mismatch
constexpr int kExitFailure = 5;     // anything else

void write_run_config(const fs::path& out_dir,
                      const std::vector<std::pair<std::string, std::string>>& kv) {
  fs::create_directories(out_dir);
  std::ofstream out(out_dir / "run_config.txt");
  if (!out) throw FileError("cannot write run config under " + out_dir.string());
  out << "version=" << kVersion << "\n";
  for (const auto& [k, v] : kv) out << k << "=" << v << "\n";
}

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw FileError("missing file: " + path);
}

struct DataArgs {
  std::string dir;
  std::string jsonl() const { return (fs::path(dir) / "dataset.jsonl").string(); }
  std::string vocab() const { return (fs::path(dir) / "vocab.json").string(); }
  Dataset load() const {
    require_file(jsonl());
    require_file(vocab());
    return load_dataset(jsonl(), vocab());
  }
};

ModelConfig model_config_from(const std::string& preset, const std::string& pooling,
                              double alpha_init, int global_layers) {
  ModelConfig mc = preset == "paper" ? ModelConfig::paper() : ModelConfig::desk();
  mc.pooling = pooling_from_string(pooling);
  mc.alpha_init = alpha_init;
  if (global_layers > 0) mc.global_layers = global_layers;
  return mc;
}

std::vector<double> parse_grid(const std::string& csv) {
  std::vector<double> grid;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) grid.push_back(std::stod(item));
  return grid;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Expands --config FILE (flat key=value lines) into trailing --key value args.
// Keys already given on the command line are skipped, so explicit flags win.
std::vector<std::string> expand_config_args(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  std::string config_path;
  for (size_t i = 1; i + 1 < args.size(); ++i)
    if (args[i] == "--config") config_path = args[i + 1];
  if (config_path.empty()) return args;
  require_file(config_path);
  std::ifstream in(config_path);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("config file " + config_path + ": expected key=value, got '" + line + "'");
    const std::string key = "--" + trim(line.substr(0, eq));
    if (std::find(args.begin(), args.end(), key) != args.end()) continue;
    args.push_back(key);
    args.push_back(trim(line.substr(eq + 1)));
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical graph language model toolkit"};
  app.require_subcommand(1);

  // shared option storage
  std::string task = "cycle", preset = "desk", dialect = "cgdl", policy = "canonical";
  std::string pooling = "mean", out_dir = "out", data_dir, checkpoint, split = "test";
  std::string method = "attention", layer_policy = "last", sparsities = "0,0.25,0.5,0.75";
  std::string nodes_csv = "4,8,16,32";
  uint64_t seed = 0;
  int size = 0, max_nodes = 0, min_nodes = 0, permutations = 10, tokens_per_node = 16;
  int epochs = 0, batch_size = 0, threads = 0, samples = 20, global_layers = 0, local_layers = 0;
  double lr = 0, weight_decay = -1, alpha_init = 0.5, grad_clip = 1.0, early_stop = 0;
  double dropout = -1, init_std = 0;

  auto* gen = app.add_subcommand("gen", "generate a balanced benchmark dataset");
  gen->add_option("--task", task, "task name")->check(CLI::IsMember(
      {"node_degree", "edge_existence", "shortest_distance", "reachable", "cycle", "edge_count",
       "components"}));
  gen->add_option("--preset", preset)->check(CLI::IsMember({"desk", "paper"}));
  gen->add_option("--seed", seed);
  gen->add_option("--dialect", dialect)->check(CLI::IsMember({"cgdl", "adjlist", "edges"}));
  gen->add_option("--policy", policy)->check(CLI::IsMember({"canonical", "random_string"}));
  gen->add_option("--size", size, "total samples (0 = preset default)");
  gen->add_option("--max-nodes", max_nodes, "largest graph (0 = preset default)");
  gen->add_option("--min-nodes", min_nodes, "smallest graph (0 = preset default)");
  gen->add_option("--out", out_dir);

  auto* train_cmd = app.add_subcommand("train", "train a model on a generated dataset");
  train_cmd->add_option("--data", data_dir)->required();
  train_cmd->add_option("--out", out_dir);
  train_cmd->add_option("--preset", preset)->check(CLI::IsMember({"desk", "paper"}));
  train_cmd->add_option("--seed", seed);
  train_cmd->add_option("--pooling", pooling)->check(CLI::IsMember({"mean", "concat"}));
  train_cmd->add_option("--alpha-init", alpha_init);
  train_cmd->add_option("--epochs", epochs, "override preset epochs");
  train_cmd->add_option("--batch-size", batch_size);
  train_cmd->add_option("--lr", lr, "override preset learning rate");
  train_cmd->add_option("--weight-decay", weight_decay);
  train_cmd->add_option("--grad-clip", grad_clip, "global norm clip; 0 disables");
  train_cmd->add_option("--threads", threads);
  train_cmd->add_option("--early-stop-val-acc", early_stop);
  train_cmd->add_option("--global-layers", global_layers, "override preset global layers");
  train_cmd->add_option("--local-layers", local_layers, "override preset local layers");
  train_cmd->add_option("--dropout", dropout, "override preset dropout rate");
  train_cmd->add_option("--init-std", init_std, "override parameter init scale");

  auto* eval_cmd = app.add_subcommand("eval", "accuracy of a checkpoint on a split");
  eval_cmd->add_option("--data", data_dir)->required();
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("--out", out_dir);

  auto* rob = app.add_subcommand("robustness", "accuracy drop under node relabelings");
  rob->add_option("--data", data_dir)->required();
  rob->add_option("--checkpoint", checkpoint)->required();
  rob->add_option("--permutations", permutations);
  rob->add_option("--seed", seed);
  rob->add_option("--out", out_dir);

  auto* interp = app.add_subcommand("interpret", "node attributions, recall, fidelity, layer curves");
  interp->add_option("--data", data_dir)->required();
  interp->add_option("--checkpoint", checkpoint)->required();
  interp->add_option("--method", method)
      ->check(CLI::IsMember({"attention", "saliency", "input_x_gradient"}));
  interp->add_option("--layer-policy", layer_policy)->check(CLI::IsMember({"last", "mean"}));
  interp->add_option("--sparsities", sparsities, "comma-separated sparsity grid");
  interp->add_option("--out", out_dir);

  auto* bench = app.add_subcommand("bench", "local vs full attention timing and flops");
  bench->add_option("--nodes", nodes_csv, "comma-separated node counts");
  bench->add_option("--tokens-per-node", tokens_per_node);
  bench->add_option("--out", out_dir);

  auto* gc = app.add_subcommand("grad-check", "finite-difference check of the full model");
  gc->add_option("--samples", samples);
  gc->add_option("--seed", seed);
  gc->add_option("--out", out_dir);

  // flat key=value config file per subcommand; explicit flags take precedence
  std::string config_file;
  for (auto* sub : {gen, train_cmd, eval_cmd, rob, interp, bench, gc})
    sub->add_option("--config", config_file, "flat key=value config file");

  std::vector<std::string> args;
  try {
    args = expand_config_args(argc, argv);
  } catch (const FileError& e) {
    std::cerr << "error: missing-file: " << e.what() << "\n";
    return kExitMissing;
  } catch (const FormatError& e) {
    std::cerr << "error: malformed-input: " << e.what() << "\n";
    return kExitMismatch;
  }
  std::vector<const char*> cargs;
  cargs.reserve(args.size());
  for (const auto& a : args) cargs.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) {
      TaskSpec spec = preset == "paper" ? TaskSpec::paper(task_from_string(task))
                                        : TaskSpec::desk(task_from_string(task));
      GenConfig gcfg = preset == "paper" ? GenConfig::paper() : GenConfig::desk();
      if (size > 0) spec.size = size;
      if (max_nodes > 0) {
        spec = preset == "paper" ? spec : TaskSpec::desk(task_from_string(task));
        spec.max_nodes = max_nodes;
        gcfg.max_nodes = max_nodes;
        if (size > 0) spec.size = size;
      }
      if (min_nodes > 0) gcfg.min_nodes = min_nodes;
      gcfg.dialect = dialect_from_string(dialect);
      gcfg.policy = policy == "canonical" ? NodeNamePolicy::Canonical : NodeNamePolicy::RandomString;

      auto dataset = build_dataset(spec, gcfg, seed);
      fs::create_directories(out_dir);
      DataArgs da{out_dir};
      save_dataset(dataset, da.jsonl(), da.vocab());
      write_run_config(out_dir, {{"subcommand", "gen"},
                                 {"task", task},
                                 {"preset", preset},
                                 {"seed", std::to_string(seed)},
                                 {"dialect", dialect},
                                 {"policy", policy},
                                 {"size", std::to_string(spec.size)},
                                 {"num_classes", std::to_string(spec.num_classes)},
                                 {"max_nodes", std::to_string(spec.max_nodes)},
                                 {"min_nodes", std::to_string(gcfg.min_nodes)},
                                 {"class_map", spec.class_map_description()}});
      std::cout << "wrote " << dataset.samples.size() << " samples to " << da.jsonl() << "\n";
    }

    if (*train_cmd) {
      auto dataset = DataArgs{data_dir}.load();
      ModelConfig mc = model_config_from(preset, pooling, alpha_init, global_layers);
      if (local_layers > 0) mc.local_layers = local_layers;
      if (dropout >= 0) {
        mc.dropout = dropout;
        mc.attn_dropout = dropout;
      }
      if (init_std > 0) mc.init_std = init_std;
      TrainConfig tc = preset == "paper" ? TrainConfig::paper() : TrainConfig::desk();
      tc.seed = seed;
      if (epochs > 0) tc.epochs = epochs;
      if (batch_size > 0) tc.batch_size = batch_size;
      if (lr > 0) tc.lr = lr;
      if (weight_decay >= 0) tc.weight_decay = weight_decay;
      tc.grad_clip = grad_clip;
      tc.threads = threads;
      tc.early_stop_val_acc = early_stop;

      auto result = train(dataset, mc, tc);
      fs::create_directories(out_dir);
      save_checkpoint(result.params, (fs::path(out_dir) / "checkpoint.bin").string());
      write_metrics_csv(result.report, (fs::path(out_dir) / "metrics.csv").string());
      write_metrics_json(result.report, (fs::path(out_dir) / "metrics.json").string());
      write_run_config(out_dir, {{"subcommand", "train"},
                                 {"data", data_dir},
                                 {"preset", preset},
                                 {"seed", std::to_string(seed)},
                                 {"pooling", pooling},
                                 {"alpha_init", std::to_string(alpha_init)},
                                 {"epochs", std::to_string(tc.epochs)},
                                 {"batch_size", std::to_string(tc.batch_size)},
                                 {"lr", std::to_string(tc.lr)},
                                 {"weight_decay", std::to_string(tc.weight_decay)},
                                 {"grad_clip", std::to_string(tc.grad_clip)},
                                 {"global_layers", std::to_string(mc.global_layers)}});
      std::cout << "best epoch " << result.report.best_epoch << ", test accuracy "
                << result.report.test_accuracy << "\n";
    }

    if (*eval_cmd) {
      auto dataset = DataArgs{data_dir}.load();
      require_file(checkpoint);
      auto params = load_checkpoint(checkpoint);
      if (params.config.num_classes != dataset.spec.num_classes)
        throw CheckpointError("checkpoint expects " + std::to_string(params.config.num_classes) +
                              " classes, dataset has " + std::to_string(dataset.spec.num_classes));
      const double acc = evaluate_split(dataset, split_from_string(split), params);
      fs::create_directories(out_dir);
      std::ofstream out(fs::path(out_dir) / "eval.json");
      out << "{\"split\": \"" << split << "\", \"accuracy\": " << acc << "}\n";
      write_run_config(out_dir, {{"subcommand", "eval"},
                                 {"data", data_dir},
                                 {"checkpoint", checkpoint},
                                 {"split", split}});
      std::cout << split << " accuracy " << acc << "\n";
    }

    if (*rob) {
      auto dataset = DataArgs{data_dir}.load();
      require_file(checkpoint);
      auto params = load_checkpoint(checkpoint);
      auto report = robustness_eval(dataset, params, permutations, seed);
      fs::create_directories(out_dir);
      std::ofstream out(fs::path(out_dir) / "robustness.json");
      out << "{\"baseline_accuracy\": " << report.baseline_accuracy << ",\n \"permuted\": [";
      for (size_t i = 0; i < report.permuted_accuracies.size(); ++i)
        out << (i ? ", " : "") << report.permuted_accuracies[i];
      out << "],\n \"mean_drop\": " << report.mean_drop << ",\n \"max_drop\": " << report.max_drop
          << "}\n";
      write_run_config(out_dir, {{"subcommand", "robustness"},
                                 {"data", data_dir},
                                 {"checkpoint", checkpoint},
                                 {"permutations", std::to_string(permutations)},
                                 {"seed", std::to_string(seed)}});
      std::cout << "baseline " << report.baseline_accuracy << ", mean drop " << report.mean_drop
                << ", max drop " << report.max_drop << "\n";
    }

    if (*interp) {
      auto dataset = DataArgs{data_dir}.load();
      require_file(checkpoint);
      auto params = load_checkpoint(checkpoint);
      const auto m = attribution_from_string(method);
      const auto lp = layer_policy == "last" ? LayerPolicy::Last : LayerPolicy::MeanLayers;
      RankingProvider provider = [&](const DatasetSample& s) {
        return m == AttributionMethod::QueryAttention
                   ? query_attention_importance(s.tokens, params, lp)
                   : gradient_importance(s.tokens, params, m);
      };

      std::vector<std::pair<int, std::vector<double>>> curves;
      for (int id : dataset.test_ids) {
        const auto& s = dataset.samples[id];
        if (s.gt_nodes.empty()) continue;
        curves.emplace_back(id, recall_at_k(provider(s), s.gt_nodes));
      }
      auto fid = fidelity(dataset, Split::Test, params, provider, parse_grid(sparsities));
      auto layer = layerwise_attention_curve(dataset, Split::Test, params);

      fs::create_directories(out_dir);
      write_recall_csv(curves, (fs::path(out_dir) / "recall.csv").string());
      write_fidelity_csv(fid, (fs::path(out_dir) / "fidelity.csv").string());
      write_layer_curve_csv(layer, (fs::path(out_dir) / "layer_curve.csv").string());
      write_run_config(out_dir, {{"subcommand", "interpret"},
                                 {"data", data_dir},
                                 {"checkpoint", checkpoint},
                                 {"method", method},
                                 {"layer_policy", layer_policy},
                                 {"sparsities", sparsities}});
      std::cout << "wrote recall/fidelity/layer curves for " << curves.size() << " samples\n";
    }

    if (*bench) {
      std::vector<int> counts;
      for (double v : parse_grid(nodes_csv)) counts.push_back(static_cast<int>(v));
      auto rows = complexity_benchmark(ModelConfig::desk(), counts, tokens_per_node);
      fs::create_directories(out_dir);
      write_bench_csv(rows, (fs::path(out_dir) / "bench.csv").string());
      write_run_config(out_dir, {{"subcommand", "bench"},
                                 {"nodes", nodes_csv},
                                 {"tokens_per_node", std::to_string(tokens_per_node)}});
      for (const auto& r : rows)
        std::cout << r.nodes << " nodes: local " << r.local_ms << " ms, full " << r.full_ms
                  << " ms\n";
    }

    if (*gc) {
      // tiny f64 model over random graphs; the acceptance gate uses the same check
      double worst = 0;
      std::string worst_param;
      for (int i = 0; i < samples; ++i) {
        auto g = generate_graph(GraphFamily::Graphon, 4 + i % 3,
                                GraphonSpec::make(static_cast<GraphonKind>(i % 11)),
                                mix_seed(seed, i));
        TaskQuery q{Task::EdgeExistence, 0, 1};
        auto text = serialize(g, q, Dialect::CGDL, NodeNamePolicy::Canonical, 0);
        auto vocab = Vocabulary::build({text}, g.num_nodes);
        auto tokens = tokenize(text, vocab, 256);
        ModelConfig mc;
        mc.dim = 16;
        mc.heads = 2;
        mc.local_layers = 1;
        mc.global_layers = 1;
        mc.hidden_dim = 32;
        mc.dropout = 0;
        mc.attn_dropout = 0;
        mc.max_positions = 256;
        mc.vocab_size = vocab.size();
        mc.num_classes = 2;
        auto params = ModelParams<double>::init(mc, mix_seed(seed, i, 2));
        auto named = params.named();
        auto report = ad::grad_check<double>(
            [&]() {
              auto out = model_forward(tokens, params, ForwardOptions{});
              return ad::cross_entropy_logits(out.global.logits, i % 2);
            },
            named, 1e-4, 6, mix_seed(seed, i, 3));
        if (report.max_rel_err > worst) {
          worst = report.max_rel_err;
          worst_param = report.worst_param;
        }
      }
      const bool pass = worst < 1e-4;
      fs::create_directories(out_dir);
      std::ofstream out(fs::path(out_dir) / "grad_check.json");
      out << "{\"samples\": " << samples << ", \"max_rel_err\": " << worst << ", \"worst_param\": \""
          << worst_param << "\", \"pass\": " << (pass ? "true" : "false") << "}\n";
      write_run_config(out_dir, {{"subcommand", "grad-check"},
                                 {"samples", std::to_string(samples)},
                                 {"seed", std::to_string(seed)}});
      std::cout << (pass ? "PASS" : "FAIL") << ": max relative error " << worst << " ("
                << worst_param << ")\n";
      if (!pass) return kExitFailure;
    }
  } catch (const FileError& e) {
    std::cerr << "error: missing-file: " << e.what() << "\n";
    return kExitMissing;
  } catch (const FormatError& e) {
    std::cerr << "error: malformed-input: " << e.what() << "\n";
    return kExitMismatch;
  } catch (const CheckpointError& e) {
    std::cerr << "error: checkpoint-mismatch: " << e.what() << "\n";
    return kExitMismatch;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return 0;
}
