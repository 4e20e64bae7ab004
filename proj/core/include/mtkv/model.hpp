#pragma once

#include <cstdint>
#include <vector>

#include "mtkv/core.hpp"

namespace mtkv {

/// Dimensions and seed of the reference transformer. Kept separate from
/// KVConfig so the cache core never depends on the model.
struct ModelConfig {
  std::uint32_t num_layers = 2;
  std::uint32_t num_heads = 2;
  std::uint32_t head_dim = 8;
  std::uint32_t vocab = 64;
  std::uint64_t seed = 1;

  std::uint32_t hidden() const { return num_heads * head_dim; }
};

/// Per-layer K/V state, flattened row-major [len x (H*D)].
struct LayerKV {
  std::vector<double> keys;
  std::vector<double> values;
  std::size_t len = 0;

  void append(const LayerKV& other);
  LayerKV prefix(std::size_t n) const;
};

struct LayerParams {
  std::vector<double> w_in;     // [d x 4d], produces concat(u,q,k,v)
  std::vector<double> ln_scale; // [d]
  std::vector<double> w_mlp1;   // [d x d]
  std::vector<double> w_mlp2;   // [d x d]
};

struct ModelParams {
  ModelConfig cfg;
  std::vector<double> embed;  // [vocab x d]
  std::vector<LayerParams> layers;
  std::vector<double> w_out;  // [d x vocab]

  static ModelParams random(const ModelConfig& cfg);
  static ModelParams zeros(const ModelConfig& cfg);
};

struct ForwardOutput {
  std::vector<double> logits;       // [vocab], terminal position
  std::vector<LayerKV> new_kv;      // per layer, freshly processed positions
  std::vector<double> hidden;       // e_T at the top layer, [d]
};

// Full causal forward over history ++ candidates. KV for all T positions is
// returned per layer.
ForwardOutput forward_full(const std::vector<TokenId>& history,
                           const std::vector<TokenId>& candidates,
                           const ModelParams& params);

// Incremental forward: projections only for delta ++ candidates, attention
// over [cached; fresh]. cached_kv lengths must agree across layers.
ForwardOutput forward_incremental(const std::vector<LayerKV>& cached_kv,
                                  const std::vector<TokenId>& delta,
                                  const std::vector<TokenId>& candidates,
                                  const ModelParams& params);

// Stable descending sort of candidates by logit; ties keep input order.
std::vector<TokenId> rank_candidates(const std::vector<double>& logits,
                                     const std::vector<TokenId>& candidates);

inline std::uint64_t attention_cost(std::uint64_t total, std::uint64_t cached) {
  MTKV_CHECK(cached <= total, "attention_cost: cached prefix exceeds total");
  return (total - cached) * total;
}

}  // namespace mtkv
