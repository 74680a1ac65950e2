#include "hlmg/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

namespace hlmg {

using nlohmann::json;

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.dim = 768;
  c.heads = 12;
  c.local_layers = 6;
  c.global_layers = 2;
  c.hidden_dim = 3072;
  c.dropout = 0.1;
  c.attn_dropout = 0.1;
  c.max_positions = 4096;
  return c;
}

void ModelConfig::validate() const {
  if (dim <= 0 || heads <= 0 || dim % heads != 0)
    throw Error("model config: dim must be a positive multiple of heads");
  if (local_layers < 1 || global_layers < 1) throw Error("model config: layers must be >= 1");
  if (hidden_dim <= 0 || max_positions <= 0 || num_classes < 2 || vocab_size < 2)
    throw Error("model config: invalid dimensions");
  if (alpha_init <= 0.0 || alpha_init >= 1.0)
    throw Error("model config: alpha_init must lie strictly in (0,1)");
}

namespace {

template <typename T>
LayerParams<T> init_layer(const ModelConfig& c, Rng& rng) {
  const T sd = static_cast<T>(c.init_std);
  LayerParams<T> lp;
  lp.wq = ad::Tensor<T>::randn(c.dim, c.dim, sd, rng, true);
  lp.wk = ad::Tensor<T>::randn(c.dim, c.dim, sd, rng, true);
  lp.wv = ad::Tensor<T>::randn(c.dim, c.dim, sd, rng, true);
  lp.wo = ad::Tensor<T>::randn(c.dim, c.dim, sd, rng, true);
  lp.bo = ad::Tensor<T>::zeros(1, c.dim, true);
  lp.ln1_g = ad::Tensor<T>::filled(1, c.dim, T(1), true);
  lp.ln1_b = ad::Tensor<T>::zeros(1, c.dim, true);
  lp.ln2_g = ad::Tensor<T>::filled(1, c.dim, T(1), true);
  lp.ln2_b = ad::Tensor<T>::zeros(1, c.dim, true);
  lp.ffn_w1 = ad::Tensor<T>::randn(c.dim, c.hidden_dim, sd, rng, true);
  lp.ffn_b1 = ad::Tensor<T>::zeros(1, c.hidden_dim, true);
  lp.ffn_w2 = ad::Tensor<T>::randn(c.hidden_dim, c.dim, sd, rng, true);
  lp.ffn_b2 = ad::Tensor<T>::zeros(1, c.dim, true);
  return lp;
}

}  // namespace

template <typename T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(mix_seed(seed, 0x90de1));
  const T sd = static_cast<T>(config.init_std);
  ModelParams<T> p;
  p.config = config;
  p.token_emb = ad::Tensor<T>::randn(config.vocab_size, config.dim, sd, rng, true);
  p.pos_emb = ad::Tensor<T>::randn(config.max_positions, config.dim, sd, rng, true);
  for (int l = 0; l < config.local_layers; ++l) p.local.push_back(init_layer<T>(config, rng));
  const double a = config.alpha_init;
  p.alpha_raw = ad::Tensor<T>::scalar(static_cast<T>(std::log(a / (1.0 - a))), true);
  if (config.pooling == Pooling::Concatenate) {
    p.concat_proj_w = ad::Tensor<T>::randn(2 * config.dim, config.dim, sd, rng, true);
    p.concat_proj_b = ad::Tensor<T>::zeros(1, config.dim, true);
  }
  for (int l = 0; l < config.global_layers; ++l) p.global.push_back(init_layer<T>(config, rng));
  p.local_ln_g = ad::Tensor<T>::filled(1, config.dim, T(1), true);
  p.local_ln_b = ad::Tensor<T>::zeros(1, config.dim, true);
  p.global_ln_g = ad::Tensor<T>::filled(1, config.dim, T(1), true);
  p.global_ln_b = ad::Tensor<T>::zeros(1, config.dim, true);
  p.head_w1 = ad::Tensor<T>::randn(config.dim, config.hidden_dim, sd, rng, true);
  p.head_b1 = ad::Tensor<T>::zeros(1, config.hidden_dim, true);
  p.head_w2 = ad::Tensor<T>::randn(config.hidden_dim, config.num_classes, sd, rng, true);
  p.head_b2 = ad::Tensor<T>::zeros(1, config.num_classes, true);
  return p;
}

template <typename T>
std::vector<std::pair<std::string, ad::Tensor<T>>> ModelParams<T>::named() const {
  std::vector<std::pair<std::string, ad::Tensor<T>>> out;
  out.emplace_back("token_emb", token_emb);
  out.emplace_back("pos_emb", pos_emb);
  auto add_layer = [&out](const std::string& prefix, const LayerParams<T>& lp) {
    out.emplace_back(prefix + ".wq", lp.wq);
    out.emplace_back(prefix + ".wk", lp.wk);
    out.emplace_back(prefix + ".wv", lp.wv);
    out.emplace_back(prefix + ".wo", lp.wo);
    out.emplace_back(prefix + ".bo", lp.bo);
    out.emplace_back(prefix + ".ln1_g", lp.ln1_g);
    out.emplace_back(prefix + ".ln1_b", lp.ln1_b);
    out.emplace_back(prefix + ".ln2_g", lp.ln2_g);
    out.emplace_back(prefix + ".ln2_b", lp.ln2_b);
    out.emplace_back(prefix + ".ffn_w1", lp.ffn_w1);
    out.emplace_back(prefix + ".ffn_b1", lp.ffn_b1);
    out.emplace_back(prefix + ".ffn_w2", lp.ffn_w2);
    out.emplace_back(prefix + ".ffn_b2", lp.ffn_b2);
  };
  for (size_t l = 0; l < local.size(); ++l) add_layer("local." + std::to_string(l), local[l]);
  out.emplace_back("alpha_raw", alpha_raw);
  if (config.pooling == Pooling::Concatenate) {
    out.emplace_back("concat_proj_w", concat_proj_w);
    out.emplace_back("concat_proj_b", concat_proj_b);
  }
  for (size_t l = 0; l < global.size(); ++l) add_layer("global." + std::to_string(l), global[l]);
  out.emplace_back("local_ln_g", local_ln_g);
  out.emplace_back("local_ln_b", local_ln_b);
  out.emplace_back("global_ln_g", global_ln_g);
  out.emplace_back("global_ln_b", global_ln_b);
  out.emplace_back("head_w1", head_w1);
  out.emplace_back("head_b1", head_b1);
  out.emplace_back("head_w2", head_w2);
  out.emplace_back("head_b2", head_b2);
  return out;
}

namespace {

template <typename T>
ad::Tensor<T> copy_tensor(const ad::Tensor<T>& t) {
  auto out = ad::Tensor<T>::from_data(t.rows(), t.cols(), t.value());
  out.n->requires_grad = t.n->requires_grad;
  return out;
}

template <typename T, typename U>
ad::Tensor<U> cast_tensor(const ad::Tensor<T>& t) {
  std::vector<U> data(t.value().size());
  for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<U>(t.value()[i]);
  auto out = ad::Tensor<U>::from_data(t.rows(), t.cols(), std::move(data));
  out.n->requires_grad = t.n->requires_grad;
  return out;
}

// applies fn to every parameter tensor of a params struct, rebuilding it
template <typename T, typename F>
ModelParams<T> map_params(const ModelParams<T>& p, F&& fn) {
  ModelParams<T> out;
  out.config = p.config;
  out.token_emb = fn(p.token_emb);
  out.pos_emb = fn(p.pos_emb);
  auto map_layer = [&](const LayerParams<T>& lp) {
    LayerParams<T> o;
    o.wq = fn(lp.wq);
    o.wk = fn(lp.wk);
    o.wv = fn(lp.wv);
    o.wo = fn(lp.wo); o.bo = fn(lp.bo);
    o.ln1_g = fn(lp.ln1_g); o.ln1_b = fn(lp.ln1_b);
    o.ln2_g = fn(lp.ln2_g); o.ln2_b = fn(lp.ln2_b);
    o.ffn_w1 = fn(lp.ffn_w1); o.ffn_b1 = fn(lp.ffn_b1);
    o.ffn_w2 = fn(lp.ffn_w2); o.ffn_b2 = fn(lp.ffn_b2);
    return o;
  };
  for (const auto& lp : p.local) out.local.push_back(map_layer(lp));
  out.alpha_raw = fn(p.alpha_raw);
  if (p.config.pooling == Pooling::Concatenate) {
    out.concat_proj_w = fn(p.concat_proj_w);
    out.concat_proj_b = fn(p.concat_proj_b);
  }
  for (const auto& lp : p.global) out.global.push_back(map_layer(lp));
  out.local_ln_g = fn(p.local_ln_g);
  out.local_ln_b = fn(p.local_ln_b);
  out.global_ln_g = fn(p.global_ln_g);
  out.global_ln_b = fn(p.global_ln_b);
  out.head_w1 = fn(p.head_w1);
  out.head_b1 = fn(p.head_b1);
  out.head_w2 = fn(p.head_w2);
  out.head_b2 = fn(p.head_b2);
  return out;
}

}  // namespace

template <typename T>
ModelParams<T> ModelParams<T>::clone() const {
  return map_params(*this, [](const ad::Tensor<T>& t) { return copy_tensor(t); });
}

template <typename T>
void ModelParams<T>::set_requires_grad(bool on) {
  for (auto& [name, t] : named()) t.n->requires_grad = on;
}

template <typename T>
T ModelParams<T>::alpha() const {
  return static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(alpha_raw.value()[0]))));
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> mapped;
  mapped.config = config;
  mapped.token_emb = cast_tensor<T, U>(token_emb);
  mapped.pos_emb = cast_tensor<T, U>(pos_emb);
  auto cast_layer = [](const LayerParams<T>& lp) {
    LayerParams<U> o;
    o.wq = cast_tensor<T, U>(lp.wq);
    o.wk = cast_tensor<T, U>(lp.wk);
    o.wv = cast_tensor<T, U>(lp.wv);
    o.wo = cast_tensor<T, U>(lp.wo); o.bo = cast_tensor<T, U>(lp.bo);
    o.ln1_g = cast_tensor<T, U>(lp.ln1_g); o.ln1_b = cast_tensor<T, U>(lp.ln1_b);
    o.ln2_g = cast_tensor<T, U>(lp.ln2_g); o.ln2_b = cast_tensor<T, U>(lp.ln2_b);
    o.ffn_w1 = cast_tensor<T, U>(lp.ffn_w1); o.ffn_b1 = cast_tensor<T, U>(lp.ffn_b1);
    o.ffn_w2 = cast_tensor<T, U>(lp.ffn_w2); o.ffn_b2 = cast_tensor<T, U>(lp.ffn_b2);
    return o;
  };
  for (const auto& lp : local) mapped.local.push_back(cast_layer(lp));
  mapped.alpha_raw = cast_tensor<T, U>(alpha_raw);
  if (config.pooling == Pooling::Concatenate) {
    mapped.concat_proj_w = cast_tensor<T, U>(concat_proj_w);
    mapped.concat_proj_b = cast_tensor<T, U>(concat_proj_b);
  }
  for (const auto& lp : global) mapped.global.push_back(cast_layer(lp));
  mapped.local_ln_g = cast_tensor<T, U>(local_ln_g);
  mapped.local_ln_b = cast_tensor<T, U>(local_ln_b);
  mapped.global_ln_g = cast_tensor<T, U>(global_ln_g);
  mapped.global_ln_b = cast_tensor<T, U>(global_ln_b);
  mapped.head_w1 = cast_tensor<T, U>(head_w1);
  mapped.head_b1 = cast_tensor<T, U>(head_b1);
  mapped.head_w2 = cast_tensor<T, U>(head_w2);
  mapped.head_b2 = cast_tensor<T, U>(head_b2);
  return mapped;
}

// --- forward ------------------------------------------------------------------

namespace {

struct BlockRange {
  int begin = 0, end = 0;
};

// contiguous row range per segment (a node's spans are adjacent; query last)
std::vector<BlockRange> segment_blocks(const TokenizedSample& sample) {
  std::vector<BlockRange> blocks;
  int cur_node = -2;
  for (const auto& sp : sample.spans) {
    if (sp.node == cur_node && !blocks.empty() && blocks.back().end == sp.begin) {
      blocks.back().end = sp.end;
    } else {
      blocks.push_back({sp.begin, sp.end});
      cur_node = sp.node;
    }
  }
  return blocks;
}

template <typename T>
struct CaptureSink {
  std::vector<LocalAttnCapture<T>>* local = nullptr;
  std::vector<T>* query_row = nullptr;  // head-averaged; filled when query_index >= 0
  int query_index = -1;
  int layer = 0;
};

template <typename T>
ad::Tensor<T> multi_head_attention(const ad::Tensor<T>& xn, const LayerParams<T>& lp,
                                   const ModelConfig& cfg, const ForwardOptions& opts, Rng& rng,
                                   const std::vector<BlockRange>& blocks,
                                   const std::vector<uint8_t>* mask, CaptureSink<T> sink) {
  const int n = xn.rows();
  const int heads = cfg.heads, dh = cfg.head_dim();
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  auto q_all = ad::matmul(xn, lp.wq);
  auto k_all = ad::matmul(xn, lp.wk);
  auto v_all = ad::matmul(xn, lp.wv);

  if (sink.query_row) sink.query_row->assign(n, T(0));

  auto run_block = [&](const BlockRange& b, int segment, const ad::Tensor<T>& q,
                       const ad::Tensor<T>& k, const ad::Tensor<T>& v) {
    const int len = b.end - b.begin;
    std::vector<ad::Tensor<T>> head_ctx;
    head_ctx.reserve(heads);
    for (int h = 0; h < heads; ++h) {
      auto qh = ad::slice_cols(q, h * dh, (h + 1) * dh);
      auto kh = ad::slice_cols(k, h * dh, (h + 1) * dh);
      auto vh = ad::slice_cols(v, h * dh, (h + 1) * dh);
      auto scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
      if (mask) scores = ad::masked_fill(scores, *mask, static_cast<T>(-1e9));
      auto probs = ad::softmax_rows(scores);
      if (sink.local)
        sink.local->push_back({sink.layer, h, segment, len, probs.value()});
      if (sink.query_row && sink.query_index >= b.begin && sink.query_index < b.end) {
        const int r = sink.query_index - b.begin;
        for (int j = 0; j < len; ++j)
          (*sink.query_row)[b.begin + j] += probs.value()[static_cast<size_t>(r) * len + j] / heads;
      }
      auto probs_d = ad::dropout(probs, cfg.attn_dropout, opts.train, rng);
      head_ctx.push_back(ad::matmul(probs_d, vh));
    }
    ad::Tensor<T> ctx = head_ctx[0];
    for (size_t h = 1; h < head_ctx.size(); ++h) ctx = ad::concat_cols(ctx, head_ctx[h]);
    return ctx;
  };

  ad::Tensor<T> ctx;
  if (mask) {
    ctx = run_block({0, n}, -1, q_all, k_all, v_all);
  } else if (blocks.size() == 1 && blocks[0].begin == 0 && blocks[0].end == n) {
    ctx = run_block(blocks[0], 0, q_all, k_all, v_all);
  } else {
    std::vector<ad::Tensor<T>> parts;
    parts.reserve(blocks.size());
    for (size_t s = 0; s < blocks.size(); ++s) {
      const auto& b = blocks[s];
      auto qb = ad::slice_rows(q_all, b.begin, b.end);
      auto kb = ad::slice_rows(k_all, b.begin, b.end);
      auto vb = ad::slice_rows(v_all, b.begin, b.end);
      parts.push_back(run_block(b, static_cast<int>(s), qb, kb, vb));
    }
    ctx = ad::concat_rows(parts);
  }
  auto out = ad::add_rowwise(ad::matmul(ctx, lp.wo), lp.bo);
  return ad::dropout(out, cfg.dropout, opts.train, rng);
}

template <typename T>
ad::Tensor<T> ffn_sublayer(const ad::Tensor<T>& xn, const LayerParams<T>& lp,
                           const ModelConfig& cfg, const ForwardOptions& opts, Rng& rng) {
  auto h = ad::gelu(ad::add_rowwise(ad::matmul(xn, lp.ffn_w1), lp.ffn_b1));
  auto out = ad::add_rowwise(ad::matmul(h, lp.ffn_w2), lp.ffn_b2);
  return ad::dropout(out, cfg.dropout, opts.train, rng);
}

template <typename T>
ad::Tensor<T> transformer_layer(ad::Tensor<T> x, const LayerParams<T>& lp, const ModelConfig& cfg,
                                const ForwardOptions& opts, Rng& rng,
                                const std::vector<BlockRange>& blocks,
                                const std::vector<uint8_t>* mask, CaptureSink<T> sink) {
  if (cfg.pre_norm) {
    auto a = multi_head_attention(ad::layer_norm_rows(x, lp.ln1_g, lp.ln1_b), lp, cfg, opts, rng,
                                  blocks, mask, sink);
    x = ad::add(x, a);
    auto f = ffn_sublayer(ad::layer_norm_rows(x, lp.ln2_g, lp.ln2_b), lp, cfg, opts, rng);
    return ad::add(x, f);
  }
  auto a = multi_head_attention(x, lp, cfg, opts, rng, blocks, mask, sink);
  x = ad::layer_norm_rows(ad::add(x, a), lp.ln1_g, lp.ln1_b);
  auto f = ffn_sublayer(x, lp, cfg, opts, rng);
  return ad::layer_norm_rows(ad::add(x, f), lp.ln2_g, lp.ln2_b);
}

}  // namespace

template <typename T>
LocalResult<T> local_forward(const TokenizedSample& sample, const ModelParams<T>& params,
                             const ForwardOptions& opts) {
  const ModelConfig& cfg = params.config;
  const int n = sample.length();
  if (n > cfg.max_positions)
    throw Error("local_forward: sequence length " + std::to_string(n) + " exceeds max positions " +
                std::to_string(cfg.max_positions));
  if (sample.spans.empty()) throw Error("local_forward: sample has no segments");

  // positions restart at 0 inside every segment
  std::vector<int> pos_ids(n, 0);
  {
    std::vector<int> seg_offset(sample.num_nodes + 1, 0);
    for (const auto& sp : sample.spans) {
      const int idx = sp.node == kQuerySegment ? sample.num_nodes : sp.node;
      for (int i = sp.begin; i < sp.end; ++i) pos_ids[i] = seg_offset[idx]++;
    }
    for (int p : pos_ids)
      if (p >= cfg.max_positions)
        throw Error("local_forward: segment longer than max positions");
  }

  // ids beyond the trained vocabulary (OOD extensions) fall back to UNK
  std::vector<int> ids = sample.token_ids;
  for (auto& id : ids)
    if (id >= cfg.vocab_size) id = Vocabulary::kUnkId;

  Rng rng(mix_seed(opts.dropout_seed, 0x10ca1));
  LocalResult<T> res;
  auto x = ad::add(ad::embedding_rows(params.token_emb, ids),
                   ad::embedding_rows(params.pos_emb, pos_ids));
  res.input_embedding = x;
  x = ad::dropout(x, cfg.dropout, opts.train, rng);

  auto blocks = segment_blocks(sample);
  std::vector<uint8_t> mask;
  if (opts.full_masked_attention) {
    auto seg = sample.segment_ids();
    mask.resize(static_cast<size_t>(n) * n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        mask[static_cast<size_t>(i) * n + j] = seg[i] != seg[j];
  }

  for (int l = 0; l < cfg.local_layers; ++l) {
    CaptureSink<T> sink;
    sink.layer = l;
    if (opts.capture_local_attn) sink.local = &res.captures;
    x = transformer_layer(x, params.local[l], cfg, opts, rng, blocks,
                          opts.full_masked_attention ? &mask : nullptr, sink);
  }
  if (cfg.pre_norm) x = ad::layer_norm_rows(x, params.local_ln_g, params.local_ln_b);
  res.hidden = x;
  return res;
}

template <typename T>
PooledEmbeddings<T> pool(const ad::Tensor<T>& hidden, const std::vector<Span>& spans,
                         const ModelParams<T>& params) {
  const ModelConfig& cfg = params.config;
  int num_nodes = 0;
  for (const auto& sp : spans) num_nodes = std::max(num_nodes, sp.node + 1);

  std::vector<const Span*> structure(num_nodes, nullptr), feature(num_nodes, nullptr);
  const Span* query = nullptr;
  for (const auto& sp : spans) {
    if (sp.kind == SpanKind::Query) query = &sp;
    else if (sp.kind == SpanKind::Structure) structure[sp.node] = &sp;
    else feature[sp.node] = &sp;
  }
  if (!query) throw Error("pool: missing query span");

  PooledEmbeddings<T> out;
  auto alpha = ad::sigmoid(params.alpha_raw);
  auto one_minus_alpha = ad::add(ad::Tensor<T>::scalar(T(1)), ad::scale(alpha, T(-1)));
  for (int i = 0; i < num_nodes; ++i) {
    if (!structure[i]) throw Error("pool: node " + std::to_string(i) + " has no structure span");
    auto zae = ad::mean_rows(hidden, structure[i]->begin, structure[i]->end);
    out.node_zae.push_back(zae);
    if (feature[i]) {
      auto zx = ad::mean_rows(hidden, feature[i]->begin, feature[i]->end);
      out.node_zx.push_back(zx);
      if (cfg.pooling == Pooling::MeanAlpha)
        out.node_z.push_back(ad::add(ad::mul_scalar(zae, alpha), ad::mul_scalar(zx, one_minus_alpha)));
      else
        out.node_z.push_back(ad::concat_cols(zae, zx));
    } else {
      // structure-only node: z_i = z_ae (duplicated for the concatenate layout)
      out.node_z.push_back(cfg.pooling == Pooling::MeanAlpha ? zae : ad::concat_cols(zae, zae));
    }
  }
  auto zq = ad::mean_rows(hidden, query->begin, query->end);
  out.query_z = cfg.pooling == Pooling::MeanAlpha ? zq : ad::concat_cols(zq, zq);
  return out;
}

template <typename T>
GlobalResult<T> global_forward(const PooledEmbeddings<T>& pooled, const ModelParams<T>& params,
                               const ForwardOptions& opts) {
  const ModelConfig& cfg = params.config;
  const int n = static_cast<int>(pooled.node_z.size());
  std::vector<ad::Tensor<T>> rows = pooled.node_z;
  rows.push_back(pooled.query_z);
  auto z = ad::concat_rows(rows);
  if (cfg.pooling == Pooling::Concatenate)
    z = ad::add_rowwise(ad::matmul(z, params.concat_proj_w), params.concat_proj_b);
  Rng rng(mix_seed(opts.dropout_seed, 0x910ba1));
  if (cfg.use_global_positional) {
    std::vector<int> ids(n + 1);
    std::iota(ids.begin(), ids.end(), 0);
    z = ad::add(z, ad::embedding_rows(params.pos_emb, ids));
  }

  GlobalResult<T> res;
  std::vector<BlockRange> all{{0, n + 1}};
  for (int l = 0; l < cfg.global_layers; ++l) {
    res.query_attention.emplace_back();
    CaptureSink<T> sink;
    sink.layer = l;
    sink.query_row = &res.query_attention.back();
    sink.query_index = n;
    z = transformer_layer(z, params.global[l], cfg, opts, rng, all, nullptr, sink);
  }
  if (cfg.pre_norm) z = ad::layer_norm_rows(z, params.global_ln_g, params.global_ln_b);
  res.query_embedding = ad::slice_rows(z, n, n + 1);
  auto h = ad::gelu(ad::add_rowwise(ad::matmul(res.query_embedding, params.head_w1), params.head_b1));
  res.logits = ad::add_rowwise(ad::matmul(h, params.head_w2), params.head_b2);
  return res;
}

template <typename T>
ModelOutput<T> model_forward(const TokenizedSample& sample, const ModelParams<T>& params,
                             const ForwardOptions& opts) {
  ModelOutput<T> out;
  out.local = local_forward(sample, params, opts);
  out.pooled = pool(out.local.hidden, sample.spans, params);
  out.global = global_forward(out.pooled, params, opts);
  return out;
}

int predict(const TokenizedSample& sample, const ModelParams<float>& params) {
  ad::NoGradGuard ng;
  auto out = model_forward(sample, params, ForwardOptions{});
  return ad::argmax_row(out.global.logits.value());
}

FlopCount attention_flops(const ModelConfig& config, const std::vector<int>& segment_lengths) {
  FlopCount f;
  long long total = 0;
  for (int len : segment_lengths) {
    if (len <= 0) throw Error("attention_flops: segment lengths must be positive");
    f.local += static_cast<long long>(len) * len * config.dim;
    total += len;
  }
  f.full = total * total * static_cast<long long>(config.dim);
  f.local *= config.local_layers;
  f.full *= config.local_layers;
  return f;
}

// --- checkpoints ----------------------------------------------------------------

namespace {

json config_to_json(const ModelConfig& c) {
  return json{{"dim", c.dim},
              {"heads", c.heads},
              {"local_layers", c.local_layers},
              {"global_layers", c.global_layers},
              {"hidden_dim", c.hidden_dim},
              {"dropout", c.dropout},
              {"attn_dropout", c.attn_dropout},
              {"max_positions", c.max_positions},
              {"num_classes", c.num_classes},
              {"vocab_size", c.vocab_size},
              {"pooling", to_string(c.pooling)},
              {"use_global_positional", c.use_global_positional},
              {"pre_norm", c.pre_norm},
              {"alpha_init", c.alpha_init},
              {"init_std", c.init_std}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  try {
    c.dim = j.at("dim").get<int>();
    c.heads = j.at("heads").get<int>();
    c.local_layers = j.at("local_layers").get<int>();
    c.global_layers = j.at("global_layers").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.attn_dropout = j.at("attn_dropout").get<double>();
    c.max_positions = j.at("max_positions").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.pooling = pooling_from_string(j.at("pooling").get<std::string>());
    c.use_global_positional = j.at("use_global_positional").get<bool>();
    c.pre_norm = j.at("pre_norm").get<bool>();
    c.alpha_init = j.at("alpha_init").get<double>();
    c.init_std = j.value("init_std", 0.02);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }
  return c;
}

}  // namespace

void save_checkpoint(const ModelParams<float>& params, const std::string& path) {
  auto named = params.named();
  json manifest = json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : named) {
    manifest.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}, {"offset", offset}});
    offset += t.value().size() * sizeof(float);
  }
  json header{{"version", 1}, {"config", config_to_json(params.config)}, {"manifest", manifest}};
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write checkpoint: " + path);
  const uint32_t hlen = static_cast<uint32_t>(hs.size());
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), hs.size());
  for (const auto& [name, t] : named)
    out.write(reinterpret_cast<const char*>(t.value().data()), t.value().size() * sizeof(float));
  if (!out) throw FileError("short write to checkpoint: " + path);
}

ModelParams<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot read checkpoint: " + path);
  uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in || hlen == 0 || hlen > (1u << 24)) throw CheckpointError("checkpoint header corrupt: " + path);
  std::string hs(hlen, '\0');
  in.read(hs.data(), hlen);
  if (!in) throw CheckpointError("checkpoint header truncated: " + path);
  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint header: ") + e.what());
  }
  if (header.at("version").get<int>() != 1)
    throw CheckpointError("checkpoint version mismatch: expected 1, found " +
                          header.at("version").dump());
  ModelConfig cfg = config_from_json(header.at("config"));
  auto params = ModelParams<float>::init(cfg, 0);
  auto named = params.named();
  const auto& manifest = header.at("manifest");
  if (manifest.size() != named.size())
    throw CheckpointError("checkpoint manifest has " + std::to_string(manifest.size()) +
                          " tensors, config implies " + std::to_string(named.size()));
  for (size_t i = 0; i < named.size(); ++i) {
    const auto& m = manifest[i];
    auto& [name, t] = named[i];
    if (m.at("name").get<std::string>() != name)
      throw CheckpointError("checkpoint manifest mismatch at index " + std::to_string(i) +
                            ": expected '" + name + "', found '" +
                            m.at("name").get<std::string>() + "'");
    if (m.at("rows").get<int>() != t.rows() || m.at("cols").get<int>() != t.cols())
      throw CheckpointError("checkpoint tensor '" + name + "' shape mismatch");
    in.read(reinterpret_cast<char*>(t.value_mut().data()), t.value().size() * sizeof(float));
    if (!in) throw CheckpointError("checkpoint blob truncated at tensor '" + name + "'");
  }
  return params;
}

const char* to_string(Pooling p) {
  switch (p) {
    case Pooling::MeanAlpha: return "mean";
    case Pooling::Concatenate: return "concat";
  }
  return "?";
}

Pooling pooling_from_string(const std::string& s) {
  if (s == "mean") return Pooling::MeanAlpha;
  if (s == "concat") return Pooling::Concatenate;
  throw Error("unknown pooling: " + s);
}

// --- explicit instantiations -----------------------------------------------------

template struct LayerParams<float>;
template struct LayerParams<double>;
template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template LocalResult<float> local_forward(const TokenizedSample&, const ModelParams<float>&,
                                          const ForwardOptions&);
template LocalResult<double> local_forward(const TokenizedSample&, const ModelParams<double>&,
                                           const ForwardOptions&);
template PooledEmbeddings<float> pool(const ad::Tensor<float>&, const std::vector<Span>&,
                                      const ModelParams<float>&);
template PooledEmbeddings<double> pool(const ad::Tensor<double>&, const std::vector<Span>&,
                                       const ModelParams<double>&);
template GlobalResult<float> global_forward(const PooledEmbeddings<float>&,
                                            const ModelParams<float>&, const ForwardOptions&);
template GlobalResult<double> global_forward(const PooledEmbeddings<double>&,
                                             const ModelParams<double>&, const ForwardOptions&);
template ModelOutput<float> model_forward(const TokenizedSample&, const ModelParams<float>&,
                                          const ForwardOptions&);
template ModelOutput<double> model_forward(const TokenizedSample&, const ModelParams<double>&,
                                           const ForwardOptions&);

}  // namespace hlmg
