#include "hlmg/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace hlmg {

namespace {

std::vector<int> rank_nodes(const std::vector<double>& scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

InterpretationResult query_attention_importance(const TokenizedSample& sample,
                                                const ModelParams<float>& params,
                                                LayerPolicy policy) {
  ad::NoGradGuard ng;
  auto out = model_forward(sample, params, ForwardOptions{});
  const auto& attn = out.global.query_attention;  // layer -> row over n+1
  const int n = sample.num_nodes;

  InterpretationResult res;
  res.method = AttributionMethod::QueryAttention;
  res.node_scores.assign(n, 0.0);
  if (policy == LayerPolicy::Last) {
    const auto& row = attn.back();
    for (int i = 0; i < n; ++i) res.node_scores[i] = row[i];
  } else {
    for (const auto& row : attn)
      for (int i = 0; i < n; ++i) res.node_scores[i] += row[i] / attn.size();
  }
  res.ranking = rank_nodes(res.node_scores);
  return res;
}

InterpretationResult gradient_importance(const TokenizedSample& sample,
                                         const ModelParams<float>& params,
                                         AttributionMethod method) {
  if (method == AttributionMethod::QueryAttention)
    throw Error("gradient_importance: use query_attention_importance for the intrinsic method");

  // gradient of the predicted-class logit w.r.t. the input embedding rows
  ad::GradModeGuard gg(true);
  auto out = model_forward(sample, params, ForwardOptions{});
  const int pred = ad::argmax_row(out.global.logits.value());
  auto target = ad::select(out.global.logits, 0, pred);
  target.backward();

  const auto& emb = out.local.input_embedding;
  const int dim = emb.cols();
  const auto& grad = emb.n->grad;
  std::vector<double> token_score(sample.length(), 0.0);
  if (!grad.empty()) {
    for (int i = 0; i < sample.length(); ++i) {
      double acc = 0.0;
      for (int j = 0; j < dim; ++j) {
        const double g = grad[static_cast<size_t>(i) * dim + j];
        if (method == AttributionMethod::Saliency)
          acc += g * g;
        else
          acc += g * emb.value()[static_cast<size_t>(i) * dim + j];
      }
      token_score[i] = method == AttributionMethod::Saliency ? std::sqrt(acc) : acc;
    }
  }

  InterpretationResult res;
  res.method = method;
  res.node_scores.assign(sample.num_nodes, 0.0);
  std::vector<int> token_count(sample.num_nodes, 0);
  for (const auto& sp : sample.spans) {
    if (sp.node == kQuerySegment) continue;
    for (int i = sp.begin; i < sp.end; ++i) {
      res.node_scores[sp.node] += token_score[i];
      ++token_count[sp.node];
    }
  }
  for (int i = 0; i < sample.num_nodes; ++i)
    if (token_count[i] > 0) res.node_scores[i] /= token_count[i];
  res.ranking = rank_nodes(res.node_scores);
  return res;
}

std::vector<double> recall_at_k(const InterpretationResult& result,
                                const std::vector<int>& gt_nodes) {
  if (gt_nodes.empty()) throw Error("recall_at_k: empty ground-truth set");
  std::set<int> gt(gt_nodes.begin(), gt_nodes.end());
  std::vector<double> curve;
  curve.reserve(result.ranking.size());
  int hits = 0;
  for (int node : result.ranking) {
    if (gt.count(node)) ++hits;
    curve.push_back(static_cast<double>(hits) / static_cast<double>(gt.size()));
  }
  return curve;
}

namespace {

// induced subgraph on `kept` (sorted); node k of the result is kept[k]
Graph induced_subgraph(const Graph& g, const std::vector<int>& kept) {
  std::vector<int> new_index(g.num_nodes, -1);
  for (size_t k = 0; k < kept.size(); ++k) new_index[kept[k]] = static_cast<int>(k);
  std::vector<std::pair<int, int>> edges;
  for (const auto& [a, b] : g.edges)
    if (new_index[a] >= 0 && new_index[b] >= 0) edges.emplace_back(new_index[a], new_index[b]);
  Graph sub = Graph::from_edges(static_cast<int>(kept.size()), std::move(edges));
  if (g.has_node_features()) {
    sub.node_features.resize(sub.num_nodes);
    for (size_t k = 0; k < kept.size(); ++k) sub.node_features[k] = g.node_features[kept[k]];
  }
  for (const auto& [e, txt] : g.edge_features) {
    const int a = new_index[e.first], b = new_index[e.second];
    if (a >= 0 && b >= 0) sub.edge_features[{std::min(a, b), std::max(a, b)}] = txt;
  }
  return sub;
}

}  // namespace

FidelityReport fidelity(const Dataset& dataset, Split split, const ModelParams<float>& params,
                        const RankingProvider& provider,
                        const std::vector<double>& sparsity_grid) {
  const auto& ids = dataset.split_ids(split);
  if (ids.empty()) throw Error("fidelity: empty split");

  FidelityReport report;
  report.sparsity = sparsity_grid;
  report.fidelity.assign(sparsity_grid.size(), 0.0);
  report.evaluated.assign(sparsity_grid.size(), 0);

  for (int id : ids) {
    const DatasetSample& s = dataset.samples[id];
    const int n = s.graph.num_nodes;
    const int base_correct = predict(s.tokens, params) == s.label ? 1 : 0;
    auto ranking = provider(s).ranking;

    for (size_t gi = 0; gi < sparsity_grid.size(); ++gi) {
      const int k = static_cast<int>(std::llround((1.0 - sparsity_grid[gi]) * n));
      if (k <= 0) continue;  // counted once below
      std::set<int> kept_set(ranking.begin(), ranking.begin() + std::min<size_t>(k, ranking.size()));
      // the queried nodes are always part of the restricted input
      if (s.query.u >= 0) kept_set.insert(s.query.u);
      if (s.query.v >= 0) kept_set.insert(s.query.v);
      std::vector<int> kept(kept_set.begin(), kept_set.end());

      Graph sub = induced_subgraph(s.graph, kept);
      TaskQuery q = s.query;
      std::vector<std::string> names;
      for (int orig : kept) {
        names.push_back(s.text.node_names[orig]);
        if (orig == s.query.u) q.u = static_cast<int>(names.size()) - 1;
        if (orig == s.query.v) q.v = static_cast<int>(names.size()) - 1;
      }
      auto text = serialize_with_names(sub, q, s.text.dialect, names);
      auto tokens = tokenize(text, dataset.vocab, params.config.max_positions);
      const int restricted_correct = predict(tokens, params) == s.label ? 1 : 0;
      report.fidelity[gi] += base_correct - restricted_correct;
      report.evaluated[gi] += 1;
    }
  }
  for (size_t gi = 0; gi < sparsity_grid.size(); ++gi) {
    if (report.evaluated[gi] == 0)
      report.notes.push_back("sparsity " + std::to_string(sparsity_grid[gi]) +
                             ": skipped (k = 0 for every sample)");
    else
      report.fidelity[gi] /= static_cast<double>(report.evaluated[gi]);
  }
  return report;
}

LayerAttentionCurve layerwise_attention_curve(const Dataset& dataset, Split split,
                                              const ModelParams<float>& params) {
  const auto& ids = dataset.split_ids(split);
  if (ids.empty()) throw Error("layerwise_attention_curve: empty split");

  LayerAttentionCurve curve;
  const int layers = params.config.global_layers;
  curve.gt_mean.assign(layers, 0.0);
  curve.non_gt_mean.assign(layers, 0.0);
  curve.self_mean.assign(layers, 0.0);

  ad::NoGradGuard ng;
  for (int id : ids) {
    const DatasetSample& s = dataset.samples[id];
    if (s.gt_nodes.empty()) continue;
    auto out = model_forward(s.tokens, params, ForwardOptions{});
    std::set<int> gt(s.gt_nodes.begin(), s.gt_nodes.end());
    const int n = s.tokens.num_nodes;
    for (int l = 0; l < layers; ++l) {
      const auto& row = out.global.query_attention[l];
      double gt_sum = 0, non_sum = 0;
      int non_count = 0;
      for (int i = 0; i < n; ++i) {
        if (gt.count(i)) gt_sum += row[i];
        else {
          non_sum += row[i];
          ++non_count;
        }
      }
      curve.gt_mean[l] += gt_sum / gt.size();
      if (non_count > 0) curve.non_gt_mean[l] += non_sum / non_count;
      curve.self_mean[l] += row[n];
    }
    ++curve.samples;
  }
  if (curve.samples == 0) throw Error("layerwise_attention_curve: no samples with ground truth");
  for (int l = 0; l < layers; ++l) {
    curve.gt_mean[l] /= curve.samples;
    curve.non_gt_mean[l] /= curve.samples;
    curve.self_mean[l] /= curve.samples;
  }
  return curve;
}

void write_recall_csv(const std::vector<std::pair<int, std::vector<double>>>& per_sample_curves,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write recall csv: " + path);
  out << "sample_id,k,recall\n";
  for (const auto& [id, curve] : per_sample_curves)
    for (size_t k = 0; k < curve.size(); ++k)
      out << id << "," << (k + 1) << "," << curve[k] << "\n";
}

void write_fidelity_csv(const FidelityReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write fidelity csv: " + path);
  out << "sparsity,fidelity\n";
  for (size_t i = 0; i < report.sparsity.size(); ++i)
    if (report.evaluated[i] > 0)
      out << report.sparsity[i] << "," << report.fidelity[i] << "\n";
}

void write_layer_curve_csv(const LayerAttentionCurve& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write layer curve csv: " + path);
  out << "layer,group,mean_score\n";
  for (size_t l = 0; l < curve.gt_mean.size(); ++l) {
    out << l << ",gt," << curve.gt_mean[l] << "\n";
    out << l << ",non_gt," << curve.non_gt_mean[l] << "\n";
    out << l << ",query_self," << curve.self_mean[l] << "\n";
  }
}

const char* to_string(AttributionMethod m) {
  switch (m) {
    case AttributionMethod::QueryAttention: return "attention";
    case AttributionMethod::Saliency: return "saliency";
    case AttributionMethod::InputXGradient: return "input_x_gradient";
  }
  return "?";
}

AttributionMethod attribution_from_string(const std::string& s) {
  for (AttributionMethod m : {AttributionMethod::QueryAttention, AttributionMethod::Saliency,
                              AttributionMethod::InputXGradient})
    if (s == to_string(m)) return m;
  throw Error("unknown attribution method: " + s);
}

}  // namespace hlmg
