#include "mtkv/pipeline.hpp"

#include <algorithm>

namespace mtkv {

const char* lane_name(LaneId id) {
  switch (id) {
    case LaneId::Compute: return "compute";
    case LaneId::Onload: return "onload";
    case LaneId::Scatter: return "scatter";
    case LaneId::Offload: return "offload";
  }
  return "?";
}

Pipeline::Pipeline(const KVConfig& cfg, const CostModel& cost)
    : cfg_(cfg), cost_(cost) {
  cfg_.validate();
  cost_.validate();
  chunk_bytes_ = double(cfg_.chunk_size) * double(cfg_.token_kv_bytes());
}

void Pipeline::log(double time, LaneId lane, std::string task, UserId user,
                   int layer) {
  if (trace_) trace_->push_back({time, lane, std::move(task), user, layer});
}

OnloadHandle Pipeline::submit_onload(double submit_time,
                                     const std::vector<UserId>& chunk_owners) {
  OnloadHandle handle;
  handle.layer_fire.assign(cfg_.num_layers, submit_time);
  if (chunk_owners.empty()) return handle;

  const double fill_dur = chunk_bytes_ / cost_.host_bandwidth;
  const double dma_dur = cost_.tx_setup + chunk_bytes_ / cost_.bus_bandwidth;
  const double scatter_dur = double(cfg_.pages_per_chunk()) * cost_.page_op;

  for (UserId owner : chunk_owners) {
    // Ping-pong: a buffer is reusable once its previous DMA drained it.
    std::uint64_t buf = pinned_next_++ % 2;
    double fill_start =
        std::max({host_cpu_avail_, pinned_free_[buf], submit_time});
    double fill_end = fill_start + fill_dur;
    host_cpu_avail_ = fill_end;
    log(fill_end, LaneId::Onload, "pinned_fill", owner, -1);

    double dma_start = std::max(onload_avail_, fill_end);
    double dma_end = dma_start + dma_dur;
    onload_avail_ = dma_end;
    pinned_free_[buf] = dma_end;
    log(dma_end, LaneId::Onload, "h2d_dma", owner, -1);

    for (std::uint32_t l = 0; l < cfg_.num_layers; ++l) {
      double s_start = std::max(scatter_avail_, dma_end);
      double s_end = s_start + scatter_dur;
      scatter_avail_ = s_end;
      handle.layer_fire[l] = std::max(handle.layer_fire[l], s_end);
      log(s_end, LaneId::Scatter, "scatter", owner, int(l));
    }
  }
  // Chunk-major enqueue keeps firing order nondecreasing in layer index.
  for (std::uint32_t l = 1; l < cfg_.num_layers; ++l)
    handle.layer_fire[l] = std::max(handle.layer_fire[l], handle.layer_fire[l - 1]);
  return handle;
}

double Pipeline::await_layer(const OnloadHandle& handle, std::uint32_t layer,
                             double now) {
  MTKV_CHECK(layer < handle.layer_fire.size(), "await_layer: bad layer");
  return std::max(0.0, handle.layer_fire[layer] - now);
}

OffloadTask Pipeline::submit_offload(UserId user, std::uint64_t chunk_index,
                                     double submit_time) {
  OffloadTask task;
  task.user = user;
  task.chunk_index = chunk_index;
  task.token_count = cfg_.chunk_size;
  task.submit_time = submit_time;

  const double gather_dur =
      double(cfg_.num_layers) * double(cfg_.pages_per_chunk()) * cost_.page_op;
  const double dma_dur = cost_.tx_setup + chunk_bytes_ / cost_.bus_bandwidth;
  const double copy_dur = chunk_bytes_ / cost_.host_bandwidth;

  double g_start = std::max(offload_avail_, submit_time);
  task.gather_end = g_start + gather_dur;
  task.dma_end = task.gather_end + dma_dur;
  offload_avail_ = task.dma_end;
  // Host-side copy runs on the worker pool, off the offload lane.
  task.done_time = task.dma_end + copy_dur;
  log(task.gather_end, LaneId::Offload, "gather", user, -1);
  log(task.dma_end, LaneId::Offload, "d2h_dma", user, -1);
  log(task.done_time, LaneId::Offload, "host_copy", user, -1);
  return task;
}

}  // namespace mtkv
