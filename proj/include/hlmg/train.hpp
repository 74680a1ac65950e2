#pragma once

// Adam training loop with decoupled weight decay, accuracy evaluation, the
// node-relabeling robustness protocol, structure-embedding similarity
// analysis, and the local-vs-full attention complexity benchmark.

#include <string>
#include <vector>

#include "hlmg/dataset.hpp"
#include "hlmg/model.hpp"

namespace hlmg {

struct TrainConfig {
  double lr = 3e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  int epochs = 8;
  int batch_size = 16;
  uint64_t seed = 0;
  double grad_clip = 1.0;   // global-norm clip; <= 0 disables
  int threads = 0;          // 0 = hardware default (determinism holds per thread count)
  double early_stop_val_acc = 0.0;  // stop once val accuracy reaches this (> 0 enables)

  static TrainConfig desk();
  // paper-scale settings: lr 5e-6, weight decay 0.1, betas 0.9/0.95, 5 epochs, batch 16
  static TrainConfig paper();
  void validate() const;
};

// Decoupled weight decay (AdamW): w -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * w).
// Decay applies to matrices (rows > 1); biases, norms and alpha are exempt.
class AdamW {
 public:
  AdamW(double lr, double weight_decay, double beta1, double beta2, double eps);
  explicit AdamW(const TrainConfig& tc)
      : AdamW(tc.lr, tc.weight_decay, tc.beta1, tc.beta2, tc.eps) {}

  void step(std::vector<std::pair<std::string, ad::Tensor<float>>>& params,
            const std::vector<std::vector<float>>& grads);
  long long steps() const { return t_; }

 private:
  double lr_, wd_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double alpha = 0.0;
  double wall_s = 0.0;
};

struct MetricsReport {
  std::vector<EpochMetrics> epochs;
  double test_accuracy = 0.0;
  int best_epoch = -1;
  double wall_time_s = 0.0;
};

struct TrainResult {
  ModelParams<float> params;  // best-validation checkpoint
  MetricsReport report;
};

// Adam over mean batch cross-entropy; deterministic given the seed (fixed
// batch order, per-sample dropout streams). Aborts with DivergenceError on a
// non-finite loss.
TrainResult train(const Dataset& dataset, ModelConfig model_config, const TrainConfig& tc);

double evaluate(const Dataset& dataset, const std::vector<int>& ids,
                const ModelParams<float>& params, int threads = 0);
double evaluate_split(const Dataset& dataset, Split split, const ModelParams<float>& params,
                      int threads = 0);

struct RobustnessReport {
  double baseline_accuracy = 0.0;
  std::vector<double> permuted_accuracies;  // one per relabeling round
  double mean_drop = 0.0;                   // baseline - mean(permuted)
  double max_drop = 0.0;                    // baseline - min(permuted)
};

// Applies a fresh random relabeling P per round (A^t = P A^{t-1} P^T, queries
// mapped along), re-serializes and re-evaluates the test split.
RobustnessReport robustness_eval(const Dataset& dataset, const ModelParams<float>& params,
                                 int num_permutations = 10, uint64_t seed = 0);

struct SimilarityRow {
  std::string group;  // "1hop" | "2hop" | "3hop_degdiff"
  int bucket = 0;     // common-neighbor count, or degree difference for 3hop
  double mean_cosine = 0.0;
  long long count = 0;
};

struct SimilarityTable {
  std::vector<SimilarityRow> rows;
  std::vector<std::string> omitted;  // groups dropped for insufficient pairs
};

// Cosine similarity of structure embeddings z_ae over node pairs, grouped by
// hop distance and common-neighbor count, and by 1-hop degree difference for
// pairs >= 3 hops apart.
SimilarityTable embedding_similarity_analysis(const ModelParams<float>& params,
                                              const std::vector<Graph>& graphs,
                                              const Vocabulary& vocab, Dialect dialect,
                                              long long min_pairs_per_group = 30);

struct BenchRow {
  int nodes = 0;
  int tokens_per_node = 0;
  double local_ms = 0.0;
  double full_ms = 0.0;
  long long local_flops = 0;
  long long full_flops = 0;
};

// Times the attention arithmetic (scores, softmax, weighted sum) of the
// block-diagonal local path against a full-attention reference at matched
// shapes.
std::vector<BenchRow> complexity_benchmark(const ModelConfig& config,
                                           const std::vector<int>& node_counts,
                                           int tokens_per_node, double min_ms_per_point = 150.0);

void write_metrics_csv(const MetricsReport& report, const std::string& path);
void write_metrics_json(const MetricsReport& report, const std::string& path);
void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path);
void write_similarity_csv(const SimilarityTable& table, const std::string& path);

}  // namespace hlmg
