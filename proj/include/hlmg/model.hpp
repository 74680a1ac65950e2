#pragma once

// The two-block hierarchical model: a local transformer stack whose attention
// is block-diagonal over node segments, a parameterized pooling layer that
// merges per-node structure/feature embeddings, a global transformer stack
// over one embedding per node plus the query, and an MLP classifier.

#include <string>
#include <utility>
#include <vector>

#include "hlmg/tensor.hpp"
#include "hlmg/text.hpp"

namespace hlmg {

enum class Pooling { MeanAlpha, Concatenate };

struct ModelConfig {
  int dim = 64;
  int heads = 4;
  int local_layers = 2;
  int global_layers = 2;
  int hidden_dim = 256;
  double dropout = 0.1;
  double attn_dropout = 0.1;
  int max_positions = 512;
  int num_classes = 2;
  int vocab_size = 0;
  Pooling pooling = Pooling::MeanAlpha;
  bool use_global_positional = false;  // global block has no positions by default
  bool pre_norm = true;
  double alpha_init = 0.5;
  double init_std = 0.02;

  static ModelConfig desk();
  // reference configuration from the paper-scale setup (dim 768, hidden 3072,
  // heads 12, 6 local layers, max positions 4096)
  static ModelConfig paper();
  void validate() const;
  int head_dim() const { return dim / heads; }
};

// Q/K/V projections are bias-free: a K bias shifts every score in a row
// uniformly (softmax-invariant) and a V bias is absorbed by the output bias,
// so those parameters could never train. The output projection keeps its bias.
template <typename T>
struct LayerParams {
  ad::Tensor<T> wq, wk, wv, wo, bo;
  ad::Tensor<T> ln1_g, ln1_b, ln2_g, ln2_b;
  ad::Tensor<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  ad::Tensor<T> token_emb;  // [vocab, dim]
  ad::Tensor<T> pos_emb;    // [max_positions, dim]
  std::vector<LayerParams<T>> local;
  ad::Tensor<T> alpha_raw;  // [1,1]; alpha = sigmoid(alpha_raw) stays in (0,1)
  ad::Tensor<T> concat_proj_w, concat_proj_b;  // 2*dim -> dim (concatenate pooling)
  std::vector<LayerParams<T>> global;
  ad::Tensor<T> local_ln_g, local_ln_b;    // final norms of the pre-norm stacks
  ad::Tensor<T> global_ln_g, global_ln_b;
  ad::Tensor<T> head_w1, head_b1, head_w2, head_b2;

  static ModelParams init(const ModelConfig& config, uint64_t seed);
  std::vector<std::pair<std::string, ad::Tensor<T>>> named() const;
  ModelParams clone() const;
  void set_requires_grad(bool on);
  T alpha() const;

  template <typename U>
  ModelParams<U> cast() const;
};

struct ForwardOptions {
  bool train = false;
  uint64_t dropout_seed = 0;
  bool capture_local_attn = false;
  // reference path: full [n,n] attention with an additive block mask instead
  // of per-segment computation (used by equivalence tests and the benchmark)
  bool full_masked_attention = false;
};

template <typename T>
struct LocalAttnCapture {
  int layer = 0, head = 0, segment = 0;
  int rows = 0;                 // segment length (or full length on the masked path)
  std::vector<T> weights;      // row-major [rows, rows] post-softmax
};

template <typename T>
struct LocalResult {
  ad::Tensor<T> input_embedding;  // token + position rows entering layer 0
  ad::Tensor<T> hidden;           // [tokens, dim]
  std::vector<LocalAttnCapture<T>> captures;
};

template <typename T>
struct PooledEmbeddings {
  std::vector<ad::Tensor<T>> node_z;    // one per node
  std::vector<ad::Tensor<T>> node_zae;  // structure embeddings (analysis)
  std::vector<ad::Tensor<T>> node_zx;   // feature embeddings when present
  ad::Tensor<T> query_z;
};

template <typename T>
struct GlobalResult {
  ad::Tensor<T> logits;  // [1, num_classes]
  // per layer, the query row of the head-averaged attention over n+1 positions
  std::vector<std::vector<T>> query_attention;
  ad::Tensor<T> query_embedding;
};

template <typename T>
struct ModelOutput {
  LocalResult<T> local;
  PooledEmbeddings<T> pooled;
  GlobalResult<T> global;
};

// Transformer layers where tokens attend only within their own node segment;
// positions restart at 0 inside every segment.
template <typename T>
LocalResult<T> local_forward(const TokenizedSample& sample, const ModelParams<T>& params,
                             const ForwardOptions& opts = {});

// z_x / z_ae are span means of the local hidden states; mean_alpha combines
// them as alpha*z_ae + (1-alpha)*z_x, concatenate stacks them. A node without
// a feature span contributes z_ae alone.
template <typename T>
PooledEmbeddings<T> pool(const ad::Tensor<T>& hidden, const std::vector<Span>& spans,
                         const ModelParams<T>& params);

// Full attention over [z_1..z_n, z_q] (no positional encoding unless enabled),
// then the query embedding through the MLP head.
template <typename T>
GlobalResult<T> global_forward(const PooledEmbeddings<T>& pooled, const ModelParams<T>& params,
                               const ForwardOptions& opts = {});

template <typename T>
ModelOutput<T> model_forward(const TokenizedSample& sample, const ModelParams<T>& params,
                             const ForwardOptions& opts = {});

// argmax of the logits; ties break toward the lowest class index
int predict(const TokenizedSample& sample, const ModelParams<float>& params);

struct FlopCount {
  long long local = 0;  // sum_i n_i^2 * dim per layer
  long long full = 0;   // (sum_i n_i)^2 * dim per layer
};

// Score-matrix multiply-accumulates of the local block vs a hypothetical
// full-attention stack over the same tokens.
FlopCount attention_flops(const ModelConfig& config, const std::vector<int>& segment_lengths);

// checkpoint: JSON header (version, config, tensor manifest) + little-endian f32 blobs
void save_checkpoint(const ModelParams<float>& params, const std::string& path);
ModelParams<float> load_checkpoint(const std::string& path);

const char* to_string(Pooling p);
Pooling pooling_from_string(const std::string& s);

}  // namespace hlmg
