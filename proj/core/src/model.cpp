#include "mtkv/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace mtkv {

void LayerKV::append(const LayerKV& other) {
  keys.insert(keys.end(), other.keys.begin(), other.keys.end());
  values.insert(values.end(), other.values.begin(), other.values.end());
  len += other.len;
}

LayerKV LayerKV::prefix(std::size_t n) const {
  MTKV_CHECK(n <= len, "LayerKV::prefix: out of range");
  std::size_t width = len == 0 ? 0 : keys.size() / len;
  LayerKV out;
  out.len = n;
  out.keys.assign(keys.begin(), keys.begin() + n * width);
  out.values.assign(values.begin(), values.begin() + n * width);
  return out;
}

static std::vector<double> random_matrix(std::mt19937_64& rng, std::size_t n,
                                         double scale) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> m(n);
  for (auto& v : m) v = dist(rng);
  return m;
}

ModelParams ModelParams::random(const ModelConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  const std::size_t d = cfg.hidden();
  const double s = 0.3 / std::sqrt(double(d));
  ModelParams p;
  p.cfg = cfg;
  p.embed = random_matrix(rng, std::size_t(cfg.vocab) * d, s);
  p.layers.resize(cfg.num_layers);
  for (auto& l : p.layers) {
    l.w_in = random_matrix(rng, d * 4 * d, s);
    l.ln_scale = random_matrix(rng, d, 1.0);
    l.w_mlp1 = random_matrix(rng, d * d, s);
    l.w_mlp2 = random_matrix(rng, d * d, s);
  }
  p.w_out = random_matrix(rng, d * cfg.vocab, s);
  return p;
}

ModelParams ModelParams::zeros(const ModelConfig& cfg) {
  const std::size_t d = cfg.hidden();
  ModelParams p;
  p.cfg = cfg;
  p.embed.assign(std::size_t(cfg.vocab) * d, 0.0);
  p.layers.resize(cfg.num_layers);
  for (auto& l : p.layers) {
    l.w_in.assign(d * 4 * d, 0.0);
    l.ln_scale.assign(d, 0.0);
    l.w_mlp1.assign(d * d, 0.0);
    l.w_mlp2.assign(d * d, 0.0);
  }
  p.w_out.assign(d * cfg.vocab, 0.0);
  return p;
}

static inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

// y[M x n] = x[M x m] @ w[m x n]
static void matmul(const double* x, const double* w, double* y, std::size_t rows,
                   std::size_t m, std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* yr = y + r * n;
    std::fill(yr, yr + n, 0.0);
    const double* xr = x + r * m;
    for (std::size_t k = 0; k < m; ++k) {
      const double xv = xr[k];
      if (xv == 0.0) continue;
      const double* wk = w + k * n;
      for (std::size_t j = 0; j < n; ++j) yr[j] += xv * wk[j];
    }
  }
}

static void layer_norm(double* x, const double* scale, std::size_t rows,
                       std::size_t d) {
  constexpr double eps = 1e-6;
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = x + r * d;
    double mean = std::accumulate(row, row + d, 0.0) / double(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double c = row[j] - mean;
      var += c * c;
    }
    var /= double(d);
    double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) row[j] = (row[j] - mean) * inv * scale[j];
  }
}

// Causal softmax attention of `fresh` rows against [cached; fresh] keys.
// Row i (global position cached_len + i) attends to global 0..cached_len+i.
static void attention(const LayerKV& cached, const double* q, const double* k,
                      const double* v, double* out, std::size_t fresh,
                      std::uint32_t heads, std::uint32_t dim) {
  const std::size_t d = std::size_t(heads) * dim;
  const double scale = 1.0 / std::sqrt(double(dim));
  std::vector<double> scores;
  for (std::size_t i = 0; i < fresh; ++i) {
    const std::size_t span = cached.len + i + 1;  // positions attended
    for (std::uint32_t h = 0; h < heads; ++h) {
      const double* qi = q + i * d + h * dim;
      scores.assign(span, 0.0);
      for (std::size_t j = 0; j < span; ++j) {
        const double* kj = j < cached.len ? cached.keys.data() + j * d + h * dim
                                          : k + (j - cached.len) * d + h * dim;
        double dot = 0.0;
        for (std::uint32_t t = 0; t < dim; ++t) dot += qi[t] * kj[t];
        scores[j] = dot * scale;
      }
      double mx = *std::max_element(scores.begin(), scores.end());
      double sum = 0.0;
      for (auto& s : scores) {
        s = std::exp(s - mx);
        sum += s;
      }
      double* oi = out + i * d + h * dim;
      std::fill(oi, oi + dim, 0.0);
      for (std::size_t j = 0; j < span; ++j) {
        const double p = scores[j] / sum;
        const double* vj = j < cached.len ? cached.values.data() + j * d + h * dim
                                          : v + (j - cached.len) * d + h * dim;
        for (std::uint32_t t = 0; t < dim; ++t) oi[t] += p * vj[t];
      }
    }
  }
}

ForwardOutput forward_incremental(const std::vector<LayerKV>& cached_kv,
                                  const std::vector<TokenId>& delta,
                                  const std::vector<TokenId>& candidates,
                                  const ModelParams& params) {
  const ModelConfig& cfg = params.cfg;
  const std::size_t d = cfg.hidden();
  MTKV_CHECK(cached_kv.size() == cfg.num_layers,
             "forward_incremental: layer count mismatch");
  const std::size_t cached_len = cached_kv.empty() ? 0 : cached_kv[0].len;
  for (const auto& kv : cached_kv)
    MTKV_CHECK(kv.len == cached_len,
               "forward_incremental: inconsistent cached lengths across layers");
  MTKV_CHECK(!candidates.empty(), "forward: need at least one candidate");

  std::vector<TokenId> fresh(delta);
  fresh.insert(fresh.end(), candidates.begin(), candidates.end());
  const std::size_t M = fresh.size();

  std::vector<double> e(M * d);
  for (std::size_t i = 0; i < M; ++i) {
    MTKV_CHECK(fresh[i] < cfg.vocab, "forward: token id out of vocabulary");
    std::copy_n(params.embed.data() + std::size_t(fresh[i]) * d, d, e.data() + i * d);
  }

  ForwardOutput out;
  out.new_kv.resize(cfg.num_layers);

  std::vector<double> proj(M * 4 * d), attn(M * d), fused(M * d), mh(M * d);
  for (std::uint32_t l = 0; l < cfg.num_layers; ++l) {
    const LayerParams& lp = params.layers[l];
    matmul(e.data(), lp.w_in.data(), proj.data(), M, d, 4 * d);
    for (auto& x : proj) x = silu(x);

    LayerKV& kv = out.new_kv[l];
    kv.len = M;
    kv.keys.resize(M * d);
    kv.values.resize(M * d);
    std::vector<double> u(M * d), q(M * d);
    for (std::size_t i = 0; i < M; ++i) {
      const double* row = proj.data() + i * 4 * d;
      std::copy_n(row, d, u.data() + i * d);
      std::copy_n(row + d, d, q.data() + i * d);
      std::copy_n(row + 2 * d, d, kv.keys.data() + i * d);
      std::copy_n(row + 3 * d, d, kv.values.data() + i * d);
    }

    attention(cached_kv[l], q.data(), kv.keys.data(), kv.values.data(),
              attn.data(), M, cfg.num_heads, cfg.head_dim);
    for (std::size_t i = 0; i < M * d; ++i) fused[i] = silu(attn[i]) * u[i];
    layer_norm(fused.data(), lp.ln_scale.data(), M, d);
    matmul(fused.data(), lp.w_mlp1.data(), mh.data(), M, d, d);
    for (auto& x : mh) x = silu(x);
    matmul(mh.data(), lp.w_mlp2.data(), e.data(), M, d, d);
  }

  out.hidden.assign(e.end() - d, e.end());
  out.logits.assign(cfg.vocab, 0.0);
  matmul(out.hidden.data(), params.w_out.data(), out.logits.data(), 1, d, cfg.vocab);
  return out;
}

ForwardOutput forward_full(const std::vector<TokenId>& history,
                           const std::vector<TokenId>& candidates,
                           const ModelParams& params) {
  std::vector<LayerKV> empty(params.cfg.num_layers);
  return forward_incremental(empty, history, candidates, params);
}

std::vector<TokenId> rank_candidates(const std::vector<double>& logits,
                                     const std::vector<TokenId>& candidates) {
  for (TokenId c : candidates)
    MTKV_CHECK(c < logits.size(), "rank_candidates: candidate id out of range");
  std::vector<TokenId> order(candidates);
  std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
    return logits[a] > logits[b];
  });
  return order;
}

}  // namespace mtkv
