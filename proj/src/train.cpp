#include "hlmg/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

namespace hlmg {

namespace {

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return std::max(1, std::min(4, static_cast<int>(hw)));
}

}  // namespace

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
  TrainConfig tc;
  tc.lr = 5e-6;
  tc.weight_decay = 0.1;
  tc.beta1 = 0.9;
  tc.beta2 = 0.95;
  tc.epochs = 5;
  tc.batch_size = 16;
  return tc;
}

void TrainConfig::validate() const {
  if (lr < 0) throw Error("train config: lr must be >= 0");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw Error("train config: betas must lie in [0,1)");
  if (epochs < 1 || batch_size < 1) throw Error("train config: epochs and batch_size must be >= 1");
}

AdamW::AdamW(double lr, double weight_decay, double beta1, double beta2, double eps)
    : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamW::step(std::vector<std::pair<std::string, ad::Tensor<float>>>& params,
                 const std::vector<std::vector<float>>& grads) {
  if (grads.size() != params.size()) throw Error("adam: gradient list size mismatch");
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].second.value().size(), 0.f);
      v_[i].assign(params[i].second.value().size(), 0.f);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].second.value_mut();
    const bool decay = params[i].second.rows() > 1;
    const auto& g = grads[i];
    if (g.size() != w.size()) throw Error("adam: gradient shape mismatch for " + params[i].first);
    for (size_t j = 0; j < w.size(); ++j) {
      m_[i][j] = static_cast<float>(beta1_ * m_[i][j] + (1.0 - beta1_) * g[j]);
      v_[i][j] = static_cast<float>(beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j]);
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      double update = mhat / (std::sqrt(vhat) + eps_);
      if (decay) update += wd_ * w[j];
      w[j] -= static_cast<float>(lr_ * update);
    }
  }
}

namespace {

// forward + backward over a chunk of samples on a private clone, accumulating
// gradients into the clone's tensors
double chunk_backward(const Dataset& d, const std::vector<int>& ids, size_t begin, size_t end,
                      const ModelParams<float>& clone, const TrainConfig& tc, int epoch) {
  double loss_sum = 0.0;
  for (size_t k = begin; k < end; ++k) {
    const DatasetSample& s = d.samples[ids[k]];
    ForwardOptions opts;
    opts.train = true;
    opts.dropout_seed = mix_seed(tc.seed, static_cast<uint64_t>(epoch) + 1, s.id);
    auto out = model_forward(s.tokens, clone, opts);
    auto loss = ad::cross_entropy_logits(out.global.logits, s.label);
    loss_sum += loss.item();
    loss.backward();
  }
  return loss_sum;
}

}  // namespace

TrainResult train(const Dataset& dataset, ModelConfig mc, const TrainConfig& tc) {
  tc.validate();
  if (dataset.train_ids.empty() || dataset.val_ids.empty())
    throw Error("train: dataset is missing train/val splits");
  mc.vocab_size = dataset.vocab.size();
  mc.num_classes = dataset.spec.num_classes;
  mc.validate();
  for (const auto& s : dataset.samples)
    if (s.label < 0 || s.label >= mc.num_classes)
      throw Error("train: sample label " + std::to_string(s.label) + " outside class bound");

  const int threads = resolve_threads(tc.threads);
  const double t_start = now_s();

  auto params = ModelParams<float>::init(mc, tc.seed);
  auto named = params.named();
  AdamW opt(tc);

  ModelParams<float> best;
  double best_val = -1.0;
  int best_epoch = -1;

  Rng shuffle_rng(mix_seed(tc.seed, 0x5f));
  std::vector<int> order = dataset.train_ids;
  MetricsReport report;
  long long step_index = 0;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const double e_start = now_s();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    long long seen = 0;

    for (size_t b0 = 0; b0 < order.size(); b0 += tc.batch_size) {
      const size_t b1 = std::min(order.size(), b0 + tc.batch_size);
      const std::vector<int> batch(order.begin() + b0, order.begin() + b1);
      const int nb = static_cast<int>(batch.size());

      std::vector<std::vector<float>> grads(named.size());
      double batch_loss = 0.0;

      if (threads == 1 || nb == 1) {
        for (auto& [name, t] : named) t.zero_grad();
        batch_loss = chunk_backward(dataset, batch, 0, batch.size(), params, tc, epoch);
        for (size_t i = 0; i < named.size(); ++i)
          grads[i] = named[i].second.n->grad.empty()
                         ? std::vector<float>(named[i].second.value().size(), 0.f)
                         : named[i].second.n->grad;
      } else {
        const int nt = std::min(threads, nb);
        std::vector<ModelParams<float>> clones;
        clones.reserve(nt);
        for (int t = 0; t < nt; ++t) clones.push_back(params.clone());
        std::vector<double> losses(nt, 0.0);
        std::vector<std::thread> pool;
        for (int t = 0; t < nt; ++t) {
          const size_t begin = static_cast<size_t>(t) * nb / nt;
          const size_t end = static_cast<size_t>(t + 1) * nb / nt;
          pool.emplace_back([&, t, begin, end]() {
            losses[t] = chunk_backward(dataset, batch, begin, end, clones[t], tc, epoch);
          });
        }
        for (auto& th : pool) th.join();
        for (int t = 0; t < nt; ++t) batch_loss += losses[t];
        for (size_t i = 0; i < named.size(); ++i)
          grads[i].assign(named[i].second.value().size(), 0.f);
        for (int t = 0; t < nt; ++t) {
          auto cn = clones[t].named();
          for (size_t i = 0; i < named.size(); ++i) {
            const auto& g = cn[i].second.n->grad;
            if (g.empty()) continue;
            for (size_t j = 0; j < g.size(); ++j) grads[i][j] += g[j];
          }
        }
      }

      if (!std::isfinite(batch_loss))
        throw DivergenceError("train: non-finite loss at step " + std::to_string(step_index),
                              step_index > 0 ? step_index - 1 : 0);
      epoch_loss += batch_loss;
      seen += nb;

      // mean batch cross-entropy
      for (auto& g : grads)
        for (auto& x : g) x /= static_cast<float>(nb);
      if (tc.grad_clip > 0) {
        double sq = 0.0;
        for (const auto& g : grads)
          for (float x : g) sq += static_cast<double>(x) * x;
        const double norm = std::sqrt(sq);
        if (norm > tc.grad_clip) {
          const float s = static_cast<float>(tc.grad_clip / norm);
          for (auto& g : grads)
            for (auto& x : g) x *= s;
        }
      }
      opt.step(named, grads);
      ++step_index;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = epoch_loss / std::max<long long>(1, seen);
    em.val_accuracy = evaluate(dataset, dataset.val_ids, params, threads);
    em.alpha = params.alpha();
    em.wall_s = now_s() - e_start;
    report.epochs.push_back(em);

    if (em.val_accuracy > best_val) {
      best_val = em.val_accuracy;
      best_epoch = epoch;
      best = params.clone();
    }
    if (tc.early_stop_val_acc > 0 && em.val_accuracy >= tc.early_stop_val_acc) break;
  }

  TrainResult result;
  result.params = best_epoch >= 0 ? std::move(best) : params.clone();
  result.report = std::move(report);
  result.report.best_epoch = best_epoch;
  result.report.test_accuracy =
      dataset.test_ids.empty() ? 0.0 : evaluate(dataset, dataset.test_ids, result.params, threads);
  result.report.wall_time_s = now_s() - t_start;
  return result;
}

double evaluate(const Dataset& dataset, const std::vector<int>& ids,
                const ModelParams<float>& params, int threads) {
  if (ids.empty()) throw Error("evaluate: empty split");
  const int nt = std::min(resolve_threads(threads), static_cast<int>(ids.size()));
  std::vector<long long> correct(nt, 0);
  std::vector<std::thread> pool;
  for (int t = 0; t < nt; ++t) {
    const size_t begin = static_cast<size_t>(t) * ids.size() / nt;
    const size_t end = static_cast<size_t>(t + 1) * ids.size() / nt;
    pool.emplace_back([&, t, begin, end]() {
      ad::NoGradGuard ng;
      for (size_t k = begin; k < end; ++k) {
        const auto& s = dataset.samples[ids[k]];
        if (predict(s.tokens, params) == s.label) ++correct[t];
      }
    });
  }
  for (auto& th : pool) th.join();
  long long total = 0;
  for (long long c : correct) total += c;
  return static_cast<double>(total) / static_cast<double>(ids.size());
}

double evaluate_split(const Dataset& dataset, Split split, const ModelParams<float>& params,
                      int threads) {
  return evaluate(dataset, dataset.split_ids(split), params, threads);
}

RobustnessReport robustness_eval(const Dataset& dataset, const ModelParams<float>& params,
                                 int num_permutations, uint64_t seed) {
  if (dataset.test_ids.empty()) throw Error("robustness_eval: no test split");
  RobustnessReport report;
  report.baseline_accuracy = evaluate(dataset, dataset.test_ids, params, 0);

  struct State {
    Graph graph;
    TaskQuery query;
    int label;
  };
  std::vector<State> state;
  state.reserve(dataset.test_ids.size());
  for (int id : dataset.test_ids) {
    const auto& s = dataset.samples[id];
    state.push_back({s.graph, s.query, s.label});
  }

  const int nt = resolve_threads(0);
  for (int t = 1; t <= num_permutations; ++t) {
    // A^t = P A^{t-1} P^T with a fresh P per graph; queries map through P
    for (size_t i = 0; i < state.size(); ++i) {
      Rng rng(mix_seed(seed, t, i));
      Permutation p = Permutation::random(state[i].graph.num_nodes, rng);
      state[i].graph = permute(state[i].graph, p);
      state[i].query = state[i].query.permuted(p);
    }
    std::vector<long long> correct(nt, 0);
    std::vector<std::thread> pool;
    for (int w = 0; w < nt; ++w) {
      const size_t begin = static_cast<size_t>(w) * state.size() / nt;
      const size_t end = static_cast<size_t>(w + 1) * state.size() / nt;
      pool.emplace_back([&, w, begin, end]() {
        ad::NoGradGuard ng;
        for (size_t i = begin; i < end; ++i) {
          auto text = serialize(state[i].graph, state[i].query, dataset.dialect,
                                NodeNamePolicy::Canonical, 0);
          auto tokens = tokenize(text, dataset.vocab, params.config.max_positions);
          if (predict(tokens, params) == state[i].label) ++correct[w];
        }
      });
    }
    for (auto& th : pool) th.join();
    long long total = 0;
    for (long long c : correct) total += c;
    report.permuted_accuracies.push_back(static_cast<double>(total) /
                                         static_cast<double>(state.size()));
  }

  double mean = 0.0, lo = 1.0;
  for (double a : report.permuted_accuracies) {
    mean += a;
    lo = std::min(lo, a);
  }
  mean /= std::max<size_t>(1, report.permuted_accuracies.size());
  report.mean_drop = report.baseline_accuracy - mean;
  report.max_drop = report.baseline_accuracy - lo;
  return report;
}

// --- embedding similarity ------------------------------------------------------

SimilarityTable embedding_similarity_analysis(const ModelParams<float>& params,
                                              const std::vector<Graph>& graphs,
                                              const Vocabulary& vocab, Dialect dialect,
                                              long long min_pairs_per_group) {
  struct Acc {
    double sum = 0.0;
    long long count = 0;
  };
  std::map<std::pair<std::string, int>, Acc> acc;

  ad::NoGradGuard ng;
  for (const auto& g : graphs) {
    if (g.num_nodes < 2) continue;
    TaskQuery q;
    q.task = Task::Cycle;  // query content does not reach the node embeddings
    auto text = serialize(g, q, dialect, NodeNamePolicy::Canonical, 0);
    auto tokens = tokenize(text, vocab, params.config.max_positions);
    auto local = local_forward(tokens, params, ForwardOptions{});
    auto pooled = pool(local.hidden, tokens.spans, params);

    std::vector<std::vector<float>> z;
    for (const auto& t : pooled.node_zae) z.push_back(t.value());
    auto adj = g.adjacency();
    std::vector<std::vector<int>> dist;
    for (int i = 0; i < g.num_nodes; ++i) dist.push_back(bfs_distances(g, i));

    for (int a = 0; a < g.num_nodes; ++a) {
      for (int b = a + 1; b < g.num_nodes; ++b) {
        double dot = 0, na = 0, nb = 0;
        for (size_t k = 0; k < z[a].size(); ++k) {
          dot += static_cast<double>(z[a][k]) * z[b][k];
          na += static_cast<double>(z[a][k]) * z[a][k];
          nb += static_cast<double>(z[b][k]) * z[b][k];
        }
        const double cos = dot / std::max(1e-12, std::sqrt(na) * std::sqrt(nb));
        std::vector<int> common;
        std::set_intersection(adj[a].begin(), adj[a].end(), adj[b].begin(), adj[b].end(),
                              std::back_inserter(common));
        const int cn = static_cast<int>(common.size());
        const int d = dist[a][b];
        if (d == 1) {
          acc[{"1hop", cn}].sum += cos;
          acc[{"1hop", cn}].count++;
        } else if (d == 2) {
          acc[{"2hop", cn}].sum += cos;
          acc[{"2hop", cn}].count++;
        } else if (cn == 0) {  // >= 3 hops apart (or disconnected)
          const int dd = std::min(6, std::abs(g.degree(a) - g.degree(b)));
          acc[{"3hop_degdiff", dd}].sum += cos;
          acc[{"3hop_degdiff", dd}].count++;
        }
      }
    }
  }

  SimilarityTable table;
  for (const auto& [key, a] : acc) {
    if (a.count < min_pairs_per_group) {
      table.omitted.push_back(key.first + "/" + std::to_string(key.second) + " (" +
                              std::to_string(a.count) + " pairs)");
      continue;
    }
    table.rows.push_back({key.first, key.second, a.sum / a.count, a.count});
  }
  return table;
}

// --- complexity benchmark -------------------------------------------------------

namespace {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// attention arithmetic only: scores, row softmax, weighted sum
void attention_kernel(const MatF& q, const MatF& k, const MatF& v, int heads, MatF& out) {
  const int n = static_cast<int>(q.rows());
  const int dh = static_cast<int>(q.cols()) / heads;
  const float inv = 1.0f / std::sqrt(static_cast<float>(dh));
  for (int h = 0; h < heads; ++h) {
    MatF scores = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * inv;
    for (int i = 0; i < n; ++i) {
      float mx = scores.row(i).maxCoeff();
      scores.row(i) = (scores.row(i).array() - mx).exp();
      scores.row(i) /= scores.row(i).sum();
    }
    out.middleCols(h * dh, dh).noalias() = scores * v.middleCols(h * dh, dh);
  }
}

}  // namespace

std::vector<BenchRow> complexity_benchmark(const ModelConfig& config,
                                           const std::vector<int>& node_counts,
                                           int tokens_per_node, double min_ms_per_point) {
  if (tokens_per_node <= 0) throw Error("complexity_benchmark: tokens_per_node must be positive");
  std::vector<BenchRow> rows;
  Rng rng(12345);
  std::normal_distribution<float> dist(0.f, 1.f);
  for (int nodes : node_counts) {
    if (nodes <= 0) throw Error("complexity_benchmark: node counts must be positive");
    const int total = nodes * tokens_per_node;
    MatF q(total, config.dim), k(total, config.dim), v(total, config.dim), out(total, config.dim);
    for (int i = 0; i < total; ++i)
      for (int j = 0; j < config.dim; ++j) {
        q(i, j) = dist(rng);
        k(i, j) = dist(rng);
        v(i, j) = dist(rng);
      }

    auto time_ms = [&](auto&& body) {
      // warm up once, then repeat until the budget is spent
      body();
      int iters = 0;
      const double start = now_s();
      do {
        body();
        ++iters;
      } while ((now_s() - start) * 1000.0 < min_ms_per_point);
      return (now_s() - start) * 1000.0 / iters;
    };

    BenchRow row;
    row.nodes = nodes;
    row.tokens_per_node = tokens_per_node;
    row.local_ms = time_ms([&]() {
      for (int s = 0; s < nodes; ++s) {
        MatF qs = q.middleRows(s * tokens_per_node, tokens_per_node);
        MatF ks = k.middleRows(s * tokens_per_node, tokens_per_node);
        MatF vs = v.middleRows(s * tokens_per_node, tokens_per_node);
        MatF os(tokens_per_node, config.dim);
        attention_kernel(qs, ks, vs, config.heads, os);
        out.middleRows(s * tokens_per_node, tokens_per_node) = os;
      }
    });
    row.full_ms = time_ms([&]() { attention_kernel(q, k, v, config.heads, out); });

    std::vector<int> lens(nodes, tokens_per_node);
    auto f = attention_flops(config, lens);
    row.local_flops = f.local;
    row.full_flops = f.full;
    rows.push_back(row);
  }
  return rows;
}

// --- reports ----------------------------------------------------------------------

void write_metrics_csv(const MetricsReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write metrics csv: " + path);
  out << "epoch,split,metric,value\n";
  for (const auto& e : report.epochs) {
    out << e.epoch << ",train,loss," << e.train_loss << "\n";
    out << e.epoch << ",val,accuracy," << e.val_accuracy << "\n";
    out << e.epoch << ",train,alpha," << e.alpha << "\n";
  }
  out << report.best_epoch << ",test,accuracy," << report.test_accuracy << "\n";
}

void write_metrics_json(const MetricsReport& report, const std::string& path) {
  nlohmann::ordered_json j;
  j["test_accuracy"] = report.test_accuracy;
  j["best_epoch"] = report.best_epoch;
  j["wall_time_s"] = report.wall_time_s;
  j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : report.epochs)
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"val_accuracy", e.val_accuracy},
                           {"alpha", e.alpha},
                           {"wall_s", e.wall_s}});
  std::ofstream out(path);
  if (!out) throw FileError("cannot write metrics json: " + path);
  out << j.dump(2) << "\n";
}

void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write benchmark csv: " + path);
  out << "nodes,tokens_per_node,local_ms,full_ms,local_flops,full_flops\n";
  for (const auto& r : rows)
    out << r.nodes << "," << r.tokens_per_node << "," << r.local_ms << "," << r.full_ms << ","
        << r.local_flops << "," << r.full_flops << "\n";
}

void write_similarity_csv(const SimilarityTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write similarity csv: " + path);
  out << "group,bucket,mean_cosine,count\n";
  for (const auto& r : table.rows)
    out << r.group << "," << r.bucket << "," << r.mean_cosine << "," << r.count << "\n";
}

}  // namespace hlmg
