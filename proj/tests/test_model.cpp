#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "hlmg/dataset.hpp"
#include "hlmg/model.hpp"

using namespace hlmg;

namespace {

ModelConfig tiny_config(int vocab, int classes = 2) {
  ModelConfig c;
  c.dim = 16;
  c.heads = 2;
  c.local_layers = 2;
  c.global_layers = 2;
  c.hidden_dim = 32;
  c.dropout = 0.0;
  c.attn_dropout = 0.0;
  c.max_positions = 256;
  c.vocab_size = vocab;
  c.num_classes = classes;
  return c;
}

struct MiniSample {
  Vocabulary vocab;
  TokenizedSample tokens;
  Graph graph;
  TaskQuery query;
};

MiniSample make_sample(uint64_t seed, int n = 5, Task task = Task::EdgeExistence) {
  MiniSample ms;
  ms.graph = generate_graph(GraphFamily::Graphon, n, GraphonSpec::make(GraphonKind::Constant), seed);
  ms.query = TaskQuery{task, 0, task == Task::NodeDegree ? -1 : 1};
  auto text = serialize(ms.graph, ms.query, Dialect::CGDL, NodeNamePolicy::Canonical, 0);
  ms.vocab = Vocabulary::build({text}, n);
  ms.tokens = tokenize(text, ms.vocab, 256);
  ms.tokens.label = 0;
  return ms;
}

}  // namespace

TEST_CASE("changing another node's text leaves a segment's hidden states bit-identical") {
  auto ms = make_sample(3, 6);
  auto cfg = tiny_config(ms.vocab.size() + 4);
  auto params = ModelParams<float>::init(cfg, 1);

  ad::NoGradGuard ng;
  auto base = local_forward(ms.tokens, params, ForwardOptions{});

  // perturb every token of node 3's segment
  TokenizedSample mutated = ms.tokens;
  for (const auto& sp : mutated.spans)
    if (sp.node == 3)
      for (int i = sp.begin; i < sp.end; ++i)
        mutated.token_ids[i] = (mutated.token_ids[i] + 1) % ms.vocab.size();
  auto changed = local_forward(mutated, params, ForwardOptions{});

  const int dim = cfg.dim;
  for (const auto& sp : ms.tokens.spans) {
    bool same_node_changed = sp.node == 3;
    for (int i = sp.begin; i < sp.end; ++i)
      for (int j = 0; j < dim; ++j) {
        const float a = base.hidden.value()[static_cast<size_t>(i) * dim + j];
        const float b = changed.hidden.value()[static_cast<size_t>(i) * dim + j];
        if (!same_node_changed) {
          CHECK(a == b);  // exact equality: mask isolation is structural
        }
      }
  }
}

TEST_CASE("single segment degenerates to ordinary full attention") {
  // one node + query; the node block spans its whole annotation
  auto ms = make_sample(5, 2);
  auto cfg = tiny_config(ms.vocab.size());
  auto params = ModelParams<float>::init(cfg, 2);
  ad::NoGradGuard ng;
  ForwardOptions opts;
  opts.capture_local_attn = true;
  auto res = local_forward(ms.tokens, params, opts);
  // every captured block is dense (no zero rows) and rows sum to 1
  for (const auto& cap : res.captures) {
    for (int i = 0; i < cap.rows; ++i) {
      float s = 0;
      for (int j = 0; j < cap.rows; ++j) s += cap.weights[static_cast<size_t>(i) * cap.rows + j];
      CHECK(s == doctest::Approx(1.f).epsilon(1e-5));
    }
  }
}

TEST_CASE("masked full-attention reference is exactly block diagonal") {
  auto ms = make_sample(7, 6);
  auto cfg = tiny_config(ms.vocab.size());
  auto params = ModelParams<float>::init(cfg, 3);
  ad::NoGradGuard ng;
  ForwardOptions opts;
  opts.capture_local_attn = true;
  opts.full_masked_attention = true;
  auto res = local_forward(ms.tokens, params, opts);

  auto seg = ms.tokens.segment_ids();
  const int n = ms.tokens.length();
  REQUIRE(!res.captures.empty());
  for (const auto& cap : res.captures) {
    REQUIRE(cap.rows == n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (seg[i] != seg[j])
          CHECK(cap.weights[static_cast<size_t>(i) * n + j] == 0.0f);  // exactly zero
  }
}

TEST_CASE("per-segment path and masked reference produce the same hidden states") {
  auto ms = make_sample(11, 5);
  auto cfg = tiny_config(ms.vocab.size());
  auto params = ModelParams<float>::init(cfg, 4);
  ad::NoGradGuard ng;
  auto a = local_forward(ms.tokens, params, ForwardOptions{});
  ForwardOptions masked;
  masked.full_masked_attention = true;
  auto b = local_forward(ms.tokens, params, masked);
  REQUIRE(a.hidden.size() == b.hidden.size());
  for (size_t i = 0; i < a.hidden.value().size(); ++i)
    CHECK(a.hidden.value()[i] == doctest::Approx(b.hidden.value()[i]).epsilon(2e-4));
}

TEST_CASE("pooling combines structure and feature embeddings through alpha") {
  Graph g = Graph::from_edges(2, {{0, 1}});
  g.node_features = {{{"color", "red"}}, {{"color", "blue"}}};
  auto text = serialize(g, TaskQuery{Task::Cycle}, Dialect::CGDL, NodeNamePolicy::Canonical, 0);
  auto vocab = Vocabulary::build({text}, 2);
  auto tokens = tokenize(text, vocab, 256);

  auto cfg = tiny_config(vocab.size());
  auto params = ModelParams<float>::init(cfg, 5);
  ad::NoGradGuard ng;
  auto local = local_forward(tokens, params, ForwardOptions{});
  auto pooled = pool(local.hidden, tokens.spans, params);

  REQUIRE(pooled.node_z.size() == 2);
  REQUIRE(pooled.node_zae.size() == 2);
  REQUIRE(pooled.node_zx.size() == 2);

  const float alpha = params.alpha();
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < cfg.dim; ++j) {
      const float expected =
          alpha * pooled.node_zae[i].value()[j] + (1 - alpha) * pooled.node_zx[i].value()[j];
      CHECK(pooled.node_z[i].value()[j] == doctest::Approx(expected).epsilon(1e-5));
    }

  // alpha at its limits recovers the pure embeddings
  for (double a0 : {1e-7, 1.0 - 1e-7}) {
    auto p2 = params.clone();
    const double raw = std::log(a0 / (1.0 - a0));
    p2.alpha_raw.value_mut()[0] = static_cast<float>(raw);
    auto pooled2 = pool(local_forward(tokens, p2, ForwardOptions{}).hidden, tokens.spans, p2);
    for (int j = 0; j < cfg.dim; ++j) {
      const float want =
          a0 > 0.5 ? pooled2.node_zae[0].value()[j] : pooled2.node_zx[0].value()[j];
      CHECK(pooled2.node_z[0].value()[j] == doctest::Approx(want).epsilon(1e-4));
    }
  }
}

TEST_CASE("feature-less nodes pool to the structure embedding regardless of alpha") {
  auto ms = make_sample(13, 4);
  auto cfg = tiny_config(ms.vocab.size());
  auto params = ModelParams<float>::init(cfg, 6);
  params.alpha_raw.value_mut()[0] = 2.3f;  // alpha far from 0.5
  ad::NoGradGuard ng;
  auto local = local_forward(ms.tokens, params, ForwardOptions{});
  auto pooled = pool(local.hidden, ms.tokens.spans, params);
  for (size_t i = 0; i < pooled.node_z.size(); ++i)
    CHECK(pooled.node_z[i].value() == pooled.node_zae[i].value());
  CHECK(pooled.node_zx.empty());
}

TEST_CASE("alpha stays strictly inside (0,1)") {
  // +-12 covers far more ground than clipped desk-scale training can reach;
  // beyond ~16 the sigmoid saturates in f32 arithmetic
  auto cfg = tiny_config(16);
  auto params = ModelParams<float>::init(cfg, 7);
  for (float raw : {-12.f, -3.f, 0.f, 3.f, 12.f}) {
    params.alpha_raw.value_mut()[0] = raw;
    CHECK(params.alpha() > 0.f);
    CHECK(params.alpha() < 1.f);
  }
}

TEST_CASE("concatenate pooling doubles the embedding width") {
  Graph g = Graph::from_edges(2, {{0, 1}});
  g.node_features = {{{"k", "v"}}, {{"k", "w"}}};
  auto text = serialize(g, TaskQuery{Task::Cycle}, Dialect::CGDL, NodeNamePolicy::Canonical, 0);
  auto vocab = Vocabulary::build({text}, 2);
  auto tokens = tokenize(text, vocab, 256);
  auto cfg = tiny_config(vocab.size());
  cfg.pooling = Pooling::Concatenate;
  auto params = ModelParams<float>::init(cfg, 8);
  ad::NoGradGuard ng;
  auto out = model_forward(tokens, params, ForwardOptions{});
  CHECK(out.pooled.node_z[0].cols() == 2 * cfg.dim);
  CHECK(out.global.logits.cols() == cfg.num_classes);
}

TEST_CASE("logits are invariant to node-segment reordering") {
  // pooling indexes embeddings by node id and segment positions restart at 0,
  // so rearranging the per-node text blocks yields a bit-identical global
  // input: the prediction cannot move at all
  for (uint64_t seed = 0; seed < 5; ++seed) {
    auto ms = make_sample(seed + 40, 6);
    auto cfg = tiny_config(ms.vocab.size());
    auto params = ModelParams<float>::init(cfg, seed);
    ad::NoGradGuard ng;

    auto base = model_forward(ms.tokens, params, ForwardOptions{});
    std::vector<int> order{3, 0, 5, 1, 4, 2};
    auto swapped = model_forward(reorder_segments(ms.tokens, order), params, ForwardOptions{});

    CHECK(base.global.logits.value() == swapped.global.logits.value());
    for (int l = 0; l < cfg.global_layers; ++l)
      CHECK(base.global.query_attention[l] == swapped.global.query_attention[l]);
    CHECK(predict(ms.tokens, params) == predict(reorder_segments(ms.tokens, order), params));
  }
}

TEST_CASE("segment-order invariance holds bit-exactly in f64 as well") {
  auto ms = make_sample(77, 6);
  auto cfg = tiny_config(ms.vocab.size());
  auto params = ModelParams<double>::init(cfg, 9);
  ad::NoGradGuard ng;
  auto base = model_forward(ms.tokens, params, ForwardOptions{});
  auto swapped = model_forward(reorder_segments(ms.tokens, {5, 4, 3, 2, 1, 0}), params,
                               ForwardOptions{});
  CHECK(base.global.logits.value() == swapped.global.logits.value());
}

TEST_CASE("global block is equivariant to permuting the pooled embeddings") {
  // no positional encoding: shuffling the node-embedding order permutes the
  // query-attention rows and leaves the logits unchanged up to f32 rounding
  auto ms = make_sample(41, 6);
  auto cfg = tiny_config(ms.vocab.size());
  auto params = ModelParams<float>::init(cfg, 3);
  ad::NoGradGuard ng;

  auto local = local_forward(ms.tokens, params, ForwardOptions{});
  auto pooled = pool(local.hidden, ms.tokens.spans, params);
  std::vector<int> order{3, 0, 5, 1, 4, 2};
  auto permuted = pooled;
  for (size_t k = 0; k < order.size(); ++k) {
    permuted.node_z[k] = pooled.node_z[order[k]];
    permuted.node_zae[k] = pooled.node_zae[order[k]];
  }
  auto a = global_forward(pooled, params, ForwardOptions{});
  auto b = global_forward(permuted, params, ForwardOptions{});

  double num = 0, den = 0;
  for (int j = 0; j < cfg.num_classes; ++j) {
    const double d = a.logits.value()[j] - b.logits.value()[j];
    num += d * d;
    den += static_cast<double>(a.logits.value()[j]) * a.logits.value()[j];
  }
  CHECK(std::sqrt(num) / std::max(1e-12, std::sqrt(den)) < 1e-5);
  for (int l = 0; l < cfg.global_layers; ++l) {
    for (size_t k = 0; k < order.size(); ++k)
      CHECK(b.query_attention[l][k] ==
            doctest::Approx(a.query_attention[l][order[k]]).epsilon(1e-4));
    CHECK(b.query_attention[l].back() ==
          doctest::Approx(a.query_attention[l].back()).epsilon(1e-4));
  }
}

TEST_CASE("query attention rows sum to one") {
  auto ms = make_sample(15, 5);
  auto cfg = tiny_config(ms.vocab.size());
  auto params = ModelParams<float>::init(cfg, 10);
  ad::NoGradGuard ng;
  auto out = model_forward(ms.tokens, params, ForwardOptions{});
  for (const auto& row : out.global.query_attention) {
    double s = 0;
    for (double v : row) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("single-node graph: query attends to the node and itself only") {
  Graph g = Graph::from_edges(1, {});
  auto text = serialize(g, TaskQuery{Task::NodeDegree, 0}, Dialect::CGDL,
                        NodeNamePolicy::Canonical, 0);
  auto vocab = Vocabulary::build({text}, 1);
  auto tokens = tokenize(text, vocab, 256);
  auto cfg = tiny_config(vocab.size());
  auto params = ModelParams<float>::init(cfg, 11);
  ad::NoGradGuard ng;
  auto out = model_forward(tokens, params, ForwardOptions{});
  for (const auto& row : out.global.query_attention) {
    REQUIRE(row.size() == 2);
    CHECK(row[0] + row[1] == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("prediction breaks ties toward the lowest class index") {
  auto ms = make_sample(17, 4);
  auto cfg = tiny_config(ms.vocab.size(), 3);
  auto params = ModelParams<float>::init(cfg, 12);
  // zeroed head makes every logit identical
  std::fill(params.head_w2.value_mut().begin(), params.head_w2.value_mut().end(), 0.f);
  std::fill(params.head_b2.value_mut().begin(), params.head_b2.value_mut().end(), 0.f);
  CHECK(predict(ms.tokens, params) == 0);

  params.head_b2.value_mut() = {0.1f, 2.0f, 0.3f};
  CHECK(predict(ms.tokens, params) == 1);
}

TEST_CASE("dropout seeds are reproducible and train mode perturbs the output") {
  auto ms = make_sample(19, 4);
  auto cfg = tiny_config(ms.vocab.size());
  cfg.dropout = 0.2;
  cfg.attn_dropout = 0.1;
  auto params = ModelParams<float>::init(cfg, 13);
  ad::NoGradGuard ng;
  ForwardOptions a;
  a.train = true;
  a.dropout_seed = 5;
  auto o1 = model_forward(ms.tokens, params, a);
  auto o2 = model_forward(ms.tokens, params, a);
  CHECK(o1.global.logits.value() == o2.global.logits.value());
  ForwardOptions b = a;
  b.dropout_seed = 6;
  auto o3 = model_forward(ms.tokens, params, b);
  CHECK(o1.global.logits.value() != o3.global.logits.value());
}

TEST_CASE("attention flop accounting") {
  ModelConfig cfg = tiny_config(16);
  cfg.local_layers = 1;
  cfg.dim = 8;

  auto f = attention_flops(cfg, {10, 10, 10, 10});
  CHECK(f.local == 4 * 100 * 8);
  CHECK(f.full == 1600 * 8);
  CHECK(f.full == 4 * f.local);

  auto one = attention_flops(cfg, {10});
  CHECK(one.local == one.full);

  auto base = attention_flops(cfg, std::vector<int>(4, 10));
  auto twice = attention_flops(cfg, std::vector<int>(8, 10));
  CHECK(twice.local == 2 * base.local);
  CHECK(twice.full == 4 * base.full);

  CHECK_THROWS_AS(attention_flops(cfg, {0}), Error);
}

TEST_CASE("overlength sequences are rejected") {
  auto ms = make_sample(21, 6);
  auto cfg = tiny_config(ms.vocab.size());
  cfg.max_positions = 8;
  auto params = ModelParams<float>::init(cfg, 14);
  CHECK_THROWS_WITH_AS(local_forward(ms.tokens, params, ForwardOptions{}),
                       doctest::Contains("max positions"), Error);
}

TEST_CASE("checkpoints round trip bit-exactly and reject mismatches") {
  namespace fs = std::filesystem;
  auto ms = make_sample(23, 5);
  auto cfg = tiny_config(ms.vocab.size(), 4);
  auto params = ModelParams<float>::init(cfg, 15);
  auto path = (fs::temp_directory_path() / "hlmg_ckpt_test.bin").string();
  save_checkpoint(params, path);
  auto loaded = load_checkpoint(path);

  auto a = params.named();
  auto b = loaded.named();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(a[i].second.value() == b[i].second.value());
  }
  CHECK(predict(ms.tokens, params) == predict(ms.tokens, loaded));

  // truncated blob
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), bytes.size() - 64);
  }
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), FileError);
  fs::remove(path);
}

TEST_CASE("single attention layer gradients match finite differences at eps 1e-5") {
  auto ms = make_sample(24, 4);
  auto cfg = tiny_config(ms.vocab.size());
  cfg.local_layers = 1;
  cfg.global_layers = 1;
  auto params = ModelParams<double>::init(cfg, 18);
  Rng rng(1);
  auto probe = ad::Tensor<double>::randn(ms.tokens.length(), cfg.dim, 1.0, rng);
  auto loss_fn = [&]() {
    auto res = local_forward(ms.tokens, params, ForwardOptions{});
    return ad::sum_all(ad::mul(res.hidden, probe));
  };
  std::vector<std::pair<std::string, ad::Tensor<double>>> layer0;
  for (auto& [name, t] : params.named())
    if (name.rfind("local.0.", 0) == 0) layer0.emplace_back(name, t);
  auto report = ad::grad_check<double>(loss_fn, layer0, 1e-5, 16, 99);
  CAPTURE(report.worst_param);
  CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("full-model gradients match finite differences in f64") {
  // deep score paths carry ~1e-7-scale gradients at init, so the step must be
  // large enough to keep the difference quotient above f64 roundoff
  auto ms = make_sample(25, 4);
  auto cfg = tiny_config(ms.vocab.size());
  cfg.local_layers = 1;
  cfg.global_layers = 1;
  auto params = ModelParams<double>::init(cfg, 16);
  auto named = params.named();
  auto loss_fn = [&]() {
    auto out = model_forward(ms.tokens, params, ForwardOptions{});
    return ad::cross_entropy_logits(out.global.logits, 1);
  };
  auto report = ad::grad_check<double>(loss_fn, named, 1e-4, 8, 99);
  CAPTURE(report.worst_param);
  CHECK(report.max_rel_err < 1e-4);
}
