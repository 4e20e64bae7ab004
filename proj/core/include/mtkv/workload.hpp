#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtkv/core.hpp"

namespace mtkv {

enum class TailFamily { LogNormal, Pareto };

/// Synthetic workload shape: user count, request count, per-user final
/// history length target, heavy-tailed inter-arrival gaps.
struct GenConfig {
  std::uint32_t num_users = 100;
  std::uint64_t total_requests = 2000;

  TailFamily family = TailFamily::LogNormal;
  double gap_log_mu = 9.0;      // lognormal of gap in ms
  double gap_log_sigma = 1.5;
  double pareto_alpha = 1.3;
  double pareto_scale_ms = 1000.0;

  double mean_final_len = 6375.0;  // target mean lifetime history
  std::uint64_t min_len = 1;
  std::uint64_t max_len = 20000;   // hard cap

  std::uint32_t fixed_delta = 0;   // >0: every visit appends exactly this many

  std::uint32_t candidates = 5;
  std::uint32_t vocab = 0;         // >0: emit explicit token ids (value mode)
  std::uint64_t seed = 42;

  void validate() const;
};

// Presets parameterized from the two evaluation workload shapes, sized for
// desk-scale replay.
GenConfig preset_kuairand1k();
GenConfig preset_mt();
GenConfig resolve_preset(const std::string& name);

std::vector<Request> generate_trace(const GenConfig& cfg);

// JSONL, one record per line: ts, user, dn, nc, optional tokens/cands arrays.
std::vector<Request> load_trace(const std::string& path);
void save_trace(const std::vector<Request>& trace, const std::string& path);
std::string trace_to_jsonl(const std::vector<Request>& trace);
std::vector<Request> trace_from_jsonl(const std::string& text,
                                      const std::string& origin);

std::vector<std::vector<Request>> batchify(const std::vector<Request>& trace,
                                           std::uint32_t batch_size);

}  // namespace mtkv
