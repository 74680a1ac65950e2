#pragma once

// Node-importance attribution (intrinsic query attention, Saliency,
// Input x Gradient), Recall@k against interpretation ground truths, the
// sufficiency Fidelity metric, and layer-wise attention curves.

#include <functional>
#include <string>
#include <vector>

#include "hlmg/dataset.hpp"
#include "hlmg/model.hpp"

namespace hlmg {

enum class AttributionMethod { QueryAttention, Saliency, InputXGradient };
enum class LayerPolicy { Last, MeanLayers };

struct InterpretationResult {
  std::vector<double> node_scores;  // one per node
  std::vector<int> ranking;         // descending score; ties toward lower index
  AttributionMethod method = AttributionMethod::QueryAttention;
};

// Node score = head-averaged attention mass the query row assigns to that
// node's embedding in the global block (last layer, or the layer mean).
InterpretationResult query_attention_importance(const TokenizedSample& sample,
                                                const ModelParams<float>& params,
                                                LayerPolicy policy = LayerPolicy::Last);

// Gradient of the predicted-class logit w.r.t. the input token embeddings;
// token score = L2 norm (saliency) or grad . embedding (input x gradient),
// node score = mean over the node's token spans.
InterpretationResult gradient_importance(const TokenizedSample& sample,
                                         const ModelParams<float>& params,
                                         AttributionMethod method);

// Recall(k) = |top-k of ranking \cap gt| / |gt| for k = 1..n.
std::vector<double> recall_at_k(const InterpretationResult& result,
                                const std::vector<int>& gt_nodes);

struct FidelityReport {
  std::vector<double> sparsity;
  std::vector<double> fidelity;        // mean over evaluated samples
  std::vector<long long> evaluated;    // samples contributing per point
  std::vector<std::string> notes;      // skipped points (k = 0)
};

using RankingProvider = std::function<InterpretationResult(const DatasetSample&)>;

// For each sparsity s: keep the top-round((1-s)*n) ranked nodes (queried nodes
// always retained), re-serialize the induced subgraph with original names, and
// compare restricted predictions with full-input predictions.
FidelityReport fidelity(const Dataset& dataset, Split split, const ModelParams<float>& params,
                        const RankingProvider& provider, const std::vector<double>& sparsity_grid);

struct LayerAttentionCurve {
  std::vector<double> gt_mean;      // per global layer
  std::vector<double> non_gt_mean;  // per global layer
  std::vector<double> self_mean;    // query self-attention share
  long long samples = 0;
};

// Mean query attention on ground-truth vs other nodes, per global layer,
// over every split sample with a nonempty ground truth.
LayerAttentionCurve layerwise_attention_curve(const Dataset& dataset, Split split,
                                              const ModelParams<float>& params);

void write_recall_csv(const std::vector<std::pair<int, std::vector<double>>>& per_sample_curves,
                      const std::string& path);
void write_fidelity_csv(const FidelityReport& report, const std::string& path);
void write_layer_curve_csv(const LayerAttentionCurve& curve, const std::string& path);

const char* to_string(AttributionMethod m);
AttributionMethod attribution_from_string(const std::string& s);

}  // namespace hlmg
