#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtkv/core.hpp"
#include "mtkv/costs.hpp"

namespace mtkv {

enum class LaneId { Compute, Onload, Scatter, Offload };
const char* lane_name(LaneId id);

/// One scheduled occurrence on a lane, for the JSONL event-trace dump and for
/// schedule-assertion tests.
struct TraceEvent {
  double time = 0;         // completion time, seconds
  LaneId lane = LaneId::Compute;
  std::string task;
  UserId user = 0;
  int layer = -1;
};

/// Per-layer completion times for one batch's scattered history. Events fire
/// in nondecreasing layer order.
struct OnloadHandle {
  std::vector<double> layer_fire;  // empty plan: all pre-fired at submit time

  bool fired(std::uint32_t layer, double now) const {
    return layer_fire[layer] <= now;
  }
};

/// Admission control for pending offload volume, in tokens.
struct OffloadQuota {
  std::uint64_t limit = 0;
  std::uint64_t in_flight = 0;

  bool admit(std::uint64_t tokens) {
    if (in_flight + tokens > limit) return false;
    in_flight += tokens;
    return true;
  }
  void release(std::uint64_t tokens) {
    MTKV_CHECK(tokens <= in_flight, "quota: releasing more than in flight");
    in_flight -= tokens;
  }
};

struct OffloadTask {
  enum class State { Pending, Gathering, Transferring, Persisting, Done };
  UserId user = 0;
  std::uint64_t chunk_index = 0;
  std::uint64_t token_count = 0;
  double submit_time = 0, gather_end = 0, dma_end = 0, done_time = 0;

  State state_at(double t) const {
    if (t < submit_time) return State::Pending;
    if (t < gather_end) return State::Gathering;
    if (t < dma_end) return State::Transferring;
    if (t < done_time) return State::Persisting;
    return State::Done;
  }
};

/// Deterministic discrete-event schedule over the four lanes plus the
/// host-side copy engine and the ping-pong pinned-buffer pair. All times are
/// simulated seconds; identical inputs yield an identical schedule.
class Pipeline {
 public:
  Pipeline(const KVConfig& cfg, const CostModel& cost);

  // Double-buffered onload of `chunk_owners.size()` chunks followed by
  // per-layer scatter; layer l's event fires once every chunk's layer-l
  // scatter has completed.
  OnloadHandle submit_onload(double submit_time,
                             const std::vector<UserId>& chunk_owners);

  // Wait the compute lane incurs before layer `layer` may run.
  static double await_layer(const OnloadHandle& handle, std::uint32_t layer,
                            double now);

  // Background persistence of one chunk: gather -> DMA -> host copy.
  OffloadTask submit_offload(UserId user, std::uint64_t chunk_index,
                             double submit_time);

  double onload_lane_avail() const { return onload_avail_; }
  double scatter_lane_avail() const { return scatter_avail_; }
  double offload_lane_avail() const { return offload_avail_; }

  void set_trace_sink(std::vector<TraceEvent>* sink) { trace_ = sink; }

  double chunk_bytes() const { return chunk_bytes_; }

 private:
  void log(double time, LaneId lane, std::string task, UserId user, int layer);

  KVConfig cfg_;
  CostModel cost_;
  double chunk_bytes_;

  double host_cpu_avail_ = 0;
  double onload_avail_ = 0;
  double scatter_avail_ = 0;
  double offload_avail_ = 0;
  double pinned_free_[2] = {0, 0};
  std::uint64_t pinned_next_ = 0;

  std::vector<TraceEvent>* trace_ = nullptr;
};

}  // namespace mtkv
