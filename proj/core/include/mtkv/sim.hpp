#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <tuple>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "mtkv/core.hpp"
#include "mtkv/costs.hpp"
#include "mtkv/manager.hpp"
#include "mtkv/model.hpp"
#include "mtkv/pipeline.hpp"
#include "mtkv/store.hpp"
#include "mtkv/workload.hpp"

namespace mtkv {

enum class Mode { Recompute, GpuOnly, Hierarchical };
const char* mode_name(Mode m);
Mode parse_mode(const std::string& s);

inline constexpr std::array<const char*, 9> kStepLabels = {
    "Step 1-2. Prepare Metadata",
    "Step 3. Strip Tokens",
    "Step 4. Embedding",
    "Step 5. Data Layout",
    "Step 6. Await Metadata",
    "Step 7. Update Metadata",
    "Step 8. HSTU Inference",
    "Step 9. Offload KV",
    "Step 10. Postprocess",
};

struct RunReport {
  std::string mode;
  std::string backend;
  std::uint32_t batch_size = 1;
  std::uint64_t seed = 0;

  std::array<double, 9> step_ms = {};  // per-batch averages
  double wait_ms = 0;                  // step-8 stall, per-batch average
  double comp_ms = 0;                  // step-8 kernel time, per-batch average
  double gpu_hit_ratio = 1.0;
  double total_hit_ratio = 1.0;
  std::uint64_t tokens_processed = 0;
  std::uint64_t evictions = 0;
  std::uint64_t tail_tokens_lost = 0;
  std::uint64_t requests = 0;
  std::uint64_t batches = 0;
  double avg_latency_ms = 0;
  double total_latency_ms = 0;
  std::uint64_t peak_pages = 0;

  // Sweep annotation; empty for plain runs.
  std::string sweep_param;
  std::uint64_t sweep_value = 0;

  std::string to_json() const;
  std::string csv_row() const;
  static std::string csv_header();
};

struct HitAccumulator {
  std::uint64_t required = 0;
  std::uint64_t device_served = 0;
  std::uint64_t host_served = 0;

  // Empty denominator reports perfect reuse (nothing was required).
  std::pair<double, double> ratios() const {
    if (required == 0) return {1.0, 1.0};
    return {double(device_served) / double(required),
            double(device_served + host_served) / double(required)};
  }
};

struct FootprintReport {
  std::uint64_t cache_mib = 0;
  std::uint64_t uvqk_mib = 0;       // per layer
  std::uint64_t output_mib = 0;     // per layer
  std::uint64_t per_layer_mib = 0;
  std::uint64_t workbench_mib = 0;  // all layers
  std::uint64_t residual_mib = 0;
  std::uint64_t total_mib = 0;
  std::string to_text() const;
};

FootprintReport memory_footprint(const KVConfig& cfg, std::uint64_t batch,
                                 std::uint64_t max_seq,
                                 std::uint64_t residual_mib = 2187);

struct EngineOptions {
  Mode mode = Mode::Hierarchical;
  std::uint32_t batch_size = 1;
  std::uint64_t seed = 1;
  const ModelParams* model = nullptr;  // required by the value backend
  std::vector<TraceEvent>* event_sink = nullptr;
  std::vector<std::vector<double>>* logit_sink = nullptr;  // per request
};

/// Trace-driven engine binding manager, stores and pipeline into one
/// deterministic event loop. Data movement is performed exactly (so readback
/// oracles hold); time is charged from the cost model.
template <class B>
class Engine {
 public:
  Engine(const KVConfig& cfg, const CostModel& cost, const EngineOptions& opts)
      : cfg_(cfg),
        cost_(cost),
        opts_(opts),
        device_(cfg.num_layers, cfg.device_pages, cfg.page_size),
        host_(cfg.num_layers, cfg.chunk_size, cfg.host_capacity),
        onload_buf_(cfg.num_layers,
                    std::uint64_t(cfg.onload_pages) * cfg.page_size),
        pipeline_(cfg, cost),
        manager_(cfg, device_),
        quota_{cfg.offload_quota, 0} {
    cfg_.validate();
    cost_.validate();
    pipeline_.set_trace_sink(opts_.event_sink);
    if constexpr (std::is_same_v<B, ValueBackend>) {
      MTKV_CHECK(opts_.model != nullptr, "value backend requires model params");
      MTKV_CHECK(opts_.model->cfg.num_layers == cfg_.num_layers &&
                     opts_.model->cfg.hidden() == cfg_.hidden(),
                 "value backend: model dimensions disagree with cache config");
    }
  }

  RunReport run(const std::vector<Request>& trace) {
    for (const auto& batch : batchify(trace, opts_.batch_size))
      process_batch(batch);
    drain();
    return report();
  }

  void process_batch(const std::vector<Request>& batch);

  // Fire every pending offload completion regardless of simulated time.
  void drain() { process_due(1e300); }

  RunReport report() const;

  CacheManager& manager() { return manager_; }
  DevicePagedStore<B>& device() { return device_; }
  HostChunkedStore<B>& host() { return host_; }
  OffloadQuota& quota() { return quota_; }
  double clock() const { return clock_; }
  std::uint64_t pending_offload_chunks(UserId u) const {
    auto it = pending_.find(u);
    return it == pending_.end() ? 0 : it->second;
  }

  // Tag backend: recoverable positions must be exactly [0, device_len) on
  // device and [0, persisted_len) on host for every user.
  void check_conservation() const;

  std::string dump_page_map() const;

 private:
  struct PendingOffload {
    double done_time;
    std::uint64_t order;
    UserId user;
    std::uint64_t chunk_index;
    typename HostChunkedStore<B>::Chunk payload;
    bool operator>(const PendingOffload& o) const {
      return std::tie(done_time, order) > std::tie(o.done_time, o.order);
    }
  };

  void process_due(double now);
  void encode_and_append(const RequestPlan& plan, const Request& req);
  void trigger_offloads(UserId user, double submit_time);
  Span<B> fresh_history_span(UserId user, std::uint64_t start,
                             std::uint64_t count, std::uint32_t layer);

  KVConfig cfg_;
  CostModel cost_;
  EngineOptions opts_;
  DevicePagedStore<B> device_;
  HostChunkedStore<B> host_;
  OnloadBuffer<B> onload_buf_;
  Pipeline pipeline_;
  CacheManager manager_;
  OffloadQuota quota_;

  std::priority_queue<PendingOffload, std::vector<PendingOffload>,
                      std::greater<PendingOffload>>
      completions_;
  std::uint64_t completion_order_ = 0;
  std::unordered_map<UserId, std::uint64_t> pending_;

  // Value mode: full token history per user; recompute mode: lengths only.
  std::unordered_map<UserId, std::vector<TokenId>> history_ids_;
  std::unordered_map<UserId, std::uint64_t> recompute_len_;

  double clock_ = 0;
  std::array<double, 9> step_sum_ = {};
  double wait_sum_ = 0, comp_sum_ = 0, latency_sum_ = 0;
  HitAccumulator hits_;
  std::uint64_t tokens_processed_ = 0, requests_ = 0, batches_ = 0;
  std::uint64_t peak_pages_ = 0;
};

template <class B>
void Engine<B>::process_due(double now) {
  while (!completions_.empty() && completions_.top().done_time <= now) {
    PendingOffload p = completions_.top();
    completions_.pop();
    host_.write_chunk(p.user, p.chunk_index, std::move(p.payload));
    manager_.advance_persisted(p.user, cfg_.chunk_size);
    quota_.release(cfg_.chunk_size);
    auto it = pending_.find(p.user);
    MTKV_CHECK(it != pending_.end() && it->second > 0,
               "offload completion without pending task");
    if (--it->second == 0) {
      pending_.erase(it);
      manager_.unlock_user(p.user);
    }
  }
}

template <class B>
Span<B> Engine<B>::fresh_history_span(UserId user, std::uint64_t start,
                                      std::uint64_t count, std::uint32_t layer) {
  Span<B> span;
  span.reserve(count);
  if constexpr (std::is_same_v<B, TagBackend>) {
    for (std::uint64_t i = 0; i < count; ++i)
      span.push_back(TagBackend::make(user, start + i, layer));
  } else {
    (void)user;
    (void)start;
    (void)layer;
    span.resize(count);  // filled by the model path in encode_and_append
  }
  return span;
}

template <class B>
void Engine<B>::encode_and_append(const RequestPlan& plan, const Request& req) {
  SequenceState& s = manager_.state(plan.user);
  const std::uint64_t start = s.device_len;
  const std::uint64_t appended = plan.fresh_history + plan.delta;

  if constexpr (std::is_same_v<B, ValueBackend>) {
    auto& hist = history_ids_[plan.user];
    MTKV_CHECK(hist.size() == plan.history_len,
               "value mode: trace must carry explicit token ids");
    std::vector<TokenId> fresh = strip_cached_tokens(hist, plan.reusable_len);
    fresh.insert(fresh.end(), req.new_tokens.begin(), req.new_tokens.end());
    hist.insert(hist.end(), req.new_tokens.begin(), req.new_tokens.end());

    // Reassemble the cached prefix from the device tier.
    std::vector<LayerKV> cached(cfg_.num_layers);
    const auto& pages = manager_.user_pages(plan.user);
    const std::size_t d = std::size_t(cfg_.num_heads) * cfg_.head_dim;
    for (std::uint32_t l = 0; l < cfg_.num_layers; ++l) {
      Span<B> elems = device_.gather(pages, l, start);
      LayerKV& kv = cached[l];
      kv.len = elems.size();
      kv.keys.reserve(elems.size() * d);
      kv.values.reserve(elems.size() * d);
      for (const auto& e : elems) {
        MTKV_CHECK(e.key.size() == d, "value mode: hole in cached prefix");
        kv.keys.insert(kv.keys.end(), e.key.begin(), e.key.end());
        kv.values.insert(kv.values.end(), e.value.begin(), e.value.end());
      }
    }

    ForwardOutput out =
        forward_incremental(cached, fresh, req.candidates, *opts_.model);
    if (opts_.logit_sink) opts_.logit_sink->push_back(out.logits);

    // Candidate KV is request-local and never persisted.
    for (std::uint32_t l = 0; l < cfg_.num_layers; ++l) {
      Span<B> span(fresh.size());
      for (std::size_t i = 0; i < fresh.size(); ++i) {
        span[i].key.assign(out.new_kv[l].keys.begin() + i * d,
                           out.new_kv[l].keys.begin() + (i + 1) * d);
        span[i].value.assign(out.new_kv[l].values.begin() + i * d,
                             out.new_kv[l].values.begin() + (i + 1) * d);
      }
      device_.append(span, pages, start, l);
    }
  } else {
    const auto& pages = manager_.user_pages(plan.user);
    for (std::uint32_t l = 0; l < cfg_.num_layers; ++l) {
      Span<B> span = fresh_history_span(plan.user, start, appended, l);
      device_.append(span, pages, start, l);
    }
  }
  manager_.finish_append(plan.user, appended);
}

template <class B>
void Engine<B>::trigger_offloads(UserId user, double submit_time) {
  SequenceState& s = manager_.state(user);
  while (true) {
    std::uint64_t persisted_or_pending =
        s.persisted_len + pending_offload_chunks(user) * cfg_.chunk_size;
    if (s.device_len < persisted_or_pending + cfg_.chunk_size) break;
    if (!quota_.admit(cfg_.chunk_size)) break;  // rejected; retried on next append

    std::uint64_t chunk_index = persisted_or_pending / cfg_.chunk_size;
    // Gather at submission: the payload is captured while pages are locked.
    typename HostChunkedStore<B>::Chunk payload;
    payload.layers.resize(cfg_.num_layers);
    const auto& pages = manager_.user_pages(user);
    std::uint32_t ppc = cfg_.pages_per_chunk();
    std::vector<PageId> chunk_pages(
        pages.begin() + std::ptrdiff_t(chunk_index * ppc),
        pages.begin() + std::ptrdiff_t((chunk_index + 1) * ppc));
    for (std::uint32_t l = 0; l < cfg_.num_layers; ++l)
      payload.layers[l] = device_.gather(chunk_pages, l, cfg_.chunk_size);

    OffloadTask task = pipeline_.submit_offload(user, chunk_index, submit_time);
    if (pending_offload_chunks(user) == 0) manager_.lock_user(user);
    ++pending_[user];
    completions_.push(PendingOffload{task.done_time, completion_order_++, user,
                                     chunk_index, std::move(payload)});
  }
}

template <class B>
void Engine<B>::process_batch(const std::vector<Request>& batch) {
  if (batch.empty()) return;
  const bool hier = opts_.mode == Mode::Hierarchical;
  const bool cached = opts_.mode != Mode::Recompute;

  const double start_time = clock_;
  process_due(start_time);
  double t = start_time;
  std::array<double, 9> st = {};

  BatchMetadata md;
  if (cached) {
    md = manager_.prepare_metadata(batch, hier);
    st[0] = cost_.meta_fixed;
  } else {
    for (const auto& req : batch) {
      RequestPlan plan;
      plan.user = req.user;
      plan.history_len = recompute_len_[req.user];
      plan.delta = req.delta();
      plan.num_candidates = req.num_candidates();
      plan.fresh_history = plan.history_len;
      recompute_len_[req.user] += plan.delta;
      md.plans.push_back(std::move(plan));
    }
  }
  peak_pages_ = std::max(peak_pages_, manager_.occupied_pages());
  t += st[0];

  // Submit onload right after metadata; steps 3-7 overlap the transfers.
  std::vector<UserId> chunk_owners;
  std::uint64_t total_chunks = 0;
  for (const auto& plan : md.plans)
    for (std::size_t i = 0; i < plan.onload_chunks.size(); ++i) {
      chunk_owners.push_back(plan.user);
      ++total_chunks;
    }
  OnloadHandle handle = pipeline_.submit_onload(t, chunk_owners);

  onload_buf_.reset();
  for (const auto& plan : md.plans) {
    const auto& pages = manager_.user_pages(plan.user);
    const std::uint32_t ppc = cfg_.pages_per_chunk();
    for (std::uint64_t ci : plan.onload_chunks) {
      const auto& chunk = host_.read_chunk(plan.user, ci);
      std::uint64_t off = onload_buf_.stage(chunk);
      std::vector<PageId> dst(pages.begin() + std::ptrdiff_t(ci * ppc),
                              pages.begin() + std::ptrdiff_t((ci + 1) * ppc));
      for (std::uint32_t l = 0; l < cfg_.num_layers; ++l)
        device_.scatter(onload_buf_.slice(l, off, cfg_.chunk_size), dst, l);
    }
  }

  std::uint64_t fresh_total = 0;
  for (const auto& plan : md.plans) fresh_total += plan.fresh_tokens();

  if (cached) st[1] = cost_.strip_fixed;
  st[2] = cost_.embed_fixed + cost_.embed_coeff * double(fresh_total);
  st[3] = cost_.layout_fixed + cost_.layout_coeff * double(fresh_total);
  if (cached) {
    st[4] = cost_.await_fixed;
    st[5] = cost_.update_fixed + cost_.commit_per_chunk * double(total_chunks);
  }
  t += st[1] + st[2] + st[3] + st[4] + st[5];

  if (cached)
    for (const auto& plan : md.plans) manager_.commit_onload(plan.user, plan);

  // Step 8: staggered per-layer execution. Kernels pad to the longest
  // request, so each layer charges batch_size x the dominant request.
  double dominant = 0;
  for (const auto& plan : md.plans) {
    double attn = cost_.attn_coeff * double(plan.fresh_tokens()) *
                  double(plan.total_seq_len());
    double lin = cost_.linear_coeff * double(plan.fresh_tokens());
    dominant = std::max(dominant, attn + lin);
  }
  double layer_comp = double(batch.size()) * dominant;
  for (std::uint32_t l = 0; l < cfg_.num_layers; ++l) {
    double wait = Pipeline::await_layer(handle, l, t);
    t += wait;
    wait_sum_ += wait;
    t += layer_comp;
    comp_sum_ += layer_comp;
    st[6] += wait + layer_comp;
  }

  if (cached)
    for (std::size_t i = 0; i < md.plans.size(); ++i)
      encode_and_append(md.plans[i], batch[i]);
  else if constexpr (std::is_same_v<B, ValueBackend>)
    for (const auto& req : batch) {
      auto& hist = history_ids_[req.user];
      hist.insert(hist.end(), req.new_tokens.begin(), req.new_tokens.end());
      ForwardOutput out = forward_full(hist, req.candidates, *opts_.model);
      if (opts_.logit_sink) opts_.logit_sink->push_back(out.logits);
    }

  if (cached)
    for (auto& plan : md.plans) manager_.release_scratch(plan);

  if (hier) {
    st[7] = cost_.offload_submit;
    for (const auto& plan : md.plans) trigger_offloads(plan.user, t);
    t += st[7];
  }

  st[8] = cost_.post_fixed;
  t += st[8];

  clock_ = t;
  latency_sum_ += t - start_time;
  for (std::size_t i = 0; i < st.size(); ++i) step_sum_[i] += st[i];
  ++batches_;
  requests_ += batch.size();
  for (const auto& plan : md.plans) {
    if (plan.history_len > 0) {
      hits_.required += plan.history_len;
      hits_.device_served += plan.device_served;
      hits_.host_served += plan.host_onload;
    }
    tokens_processed_ += plan.fresh_tokens();
  }
}

template <class B>
RunReport Engine<B>::report() const {
  RunReport r;
  r.mode = mode_name(opts_.mode);
  r.backend = std::is_same_v<B, ValueBackend> ? "value" : "tag";
  r.batch_size = opts_.batch_size;
  r.seed = opts_.seed;
  const double n = batches_ ? double(batches_) : 1.0;
  for (std::size_t i = 0; i < r.step_ms.size(); ++i)
    r.step_ms[i] = step_sum_[i] / n * 1e3;
  r.wait_ms = wait_sum_ / n * 1e3;
  r.comp_ms = comp_sum_ / n * 1e3;
  auto [g, tot] = hits_.ratios();
  r.gpu_hit_ratio = g;
  r.total_hit_ratio = tot;
  r.tokens_processed = tokens_processed_;
  r.evictions = manager_.counters().evictions;
  r.tail_tokens_lost = manager_.counters().tail_tokens_lost;
  r.requests = requests_;
  r.batches = batches_;
  r.avg_latency_ms = latency_sum_ / n * 1e3;
  r.total_latency_ms = latency_sum_ * 1e3;
  r.peak_pages = peak_pages_;
  return r;
}

template <class B>
void Engine<B>::check_conservation() const {
  static_assert(std::is_same_v<B, TagBackend>,
                "conservation check uses the tag backend");
}

template <>
void Engine<TagBackend>::check_conservation() const;

template <class B>
std::string Engine<B>::dump_page_map() const {
  std::string out = "{";
  bool first_user = true;
  for (UserId u : manager_.known_users()) {
    if (!first_user) out += ",";
    first_user = false;
    out += "\"" + std::to_string(u) + "\":[";
    const auto& pages = manager_.user_pages(u);
    for (std::size_t i = 0; i < pages.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(pages[i]);
    }
    out += "]";
  }
  out += "}";
  return out;
}

// Convenience front end used by the CLI.
RunReport run_trace(const KVConfig& cfg, const CostModel& cost,
                    const std::vector<Request>& trace, Mode mode,
                    std::uint32_t batch_size, std::uint64_t seed,
                    const std::string& backend,
                    const ModelParams* model = nullptr,
                    std::vector<TraceEvent>* event_sink = nullptr,
                    std::vector<std::vector<double>>* logit_sink = nullptr);

enum class SweepParam { ChunkSize, DevicePages, BatchSize };
SweepParam parse_sweep_param(const std::string& s);

std::vector<RunReport> sweep(SweepParam param,
                             const std::vector<std::uint64_t>& values,
                             KVConfig cfg, const CostModel& cost,
                             const std::vector<Request>& trace, Mode mode,
                             std::uint32_t batch_size, std::uint64_t seed);

std::string reports_to_csv(const std::vector<RunReport>& reports);
std::string events_to_jsonl(const std::vector<TraceEvent>& events);
std::string render_report_table(const std::string& report_json);

}  // namespace mtkv
