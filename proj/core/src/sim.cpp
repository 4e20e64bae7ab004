#include "mtkv/sim.hpp"

#include <cinttypes>
#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace mtkv {

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Recompute: return "recompute";
    case Mode::GpuOnly: return "gpu_only";
    case Mode::Hierarchical: return "hierarchical";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  if (s == "recompute") return Mode::Recompute;
  if (s == "gpu_only") return Mode::GpuOnly;
  if (s == "hierarchical") return Mode::Hierarchical;
  throw Error("unknown mode '" + s +
              "' (expected recompute, gpu_only or hierarchical)");
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string RunReport::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = mode;
  j["backend"] = backend;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  nlohmann::ordered_json steps;
  for (std::size_t i = 0; i < kStepLabels.size(); ++i)
    steps[kStepLabels[i]] = step_ms[i];
  j["steps_ms"] = std::move(steps);
  j["wait_ms"] = wait_ms;
  j["comp_ms"] = comp_ms;
  j["gpu_hit_ratio"] = gpu_hit_ratio;
  j["total_hit_ratio"] = total_hit_ratio;
  j["tokens_processed"] = tokens_processed;
  j["evictions"] = evictions;
  j["tail_tokens_lost"] = tail_tokens_lost;
  j["requests"] = requests;
  j["batches"] = batches;
  j["avg_latency_ms"] = avg_latency_ms;
  j["total_latency_ms"] = total_latency_ms;
  j["peak_pages"] = peak_pages;
  if (!sweep_param.empty()) {
    j["sweep_param"] = sweep_param;
    j["sweep_value"] = sweep_value;
  }
  return j.dump(2);
}

std::string RunReport::csv_header() {
  std::string h = "mode,backend,batch_size,seed,sweep_param,sweep_value";
  for (std::size_t i = 0; i < kStepLabels.size(); ++i)
    h += ",step" + std::to_string(i + 1) + "_ms";
  h += ",wait_ms,comp_ms,gpu_hit_ratio,total_hit_ratio,tokens_processed,"
       "evictions,tail_tokens_lost,requests,batches,avg_latency_ms,"
       "total_latency_ms,peak_pages";
  return h;
}

std::string RunReport::csv_row() const {
  std::ostringstream out;
  out << mode << ',' << backend << ',' << batch_size << ',' << seed << ','
      << sweep_param << ',' << sweep_value;
  for (double s : step_ms) out << ',' << fmt_double(s);
  out << ',' << fmt_double(wait_ms) << ',' << fmt_double(comp_ms) << ','
      << fmt_double(gpu_hit_ratio) << ',' << fmt_double(total_hit_ratio) << ','
      << tokens_processed << ',' << evictions << ',' << tail_tokens_lost << ','
      << requests << ',' << batches << ',' << fmt_double(avg_latency_ms) << ','
      << fmt_double(total_latency_ms) << ',' << peak_pages;
  return out.str();
}

std::string FootprintReport::to_text() const {
  std::ostringstream out;
  out << "kv cache (device + onload region): " << cache_mib << " MiB\n"
      << "uvqk buffer (per layer):           " << uvqk_mib << " MiB\n"
      << "attention output (per layer):      " << output_mib << " MiB\n"
      << "workbench per layer:               " << per_layer_mib << " MiB\n"
      << "workbench total:                   " << workbench_mib << " MiB\n"
      << "weights + runtime residual:        " << residual_mib << " MiB\n"
      << "total:                             " << total_mib << " MiB\n";
  return out.str();
}

FootprintReport memory_footprint(const KVConfig& cfg, std::uint64_t batch,
                                 std::uint64_t max_seq,
                                 std::uint64_t residual_mib) {
  constexpr std::uint64_t kMiB = 1024 * 1024;
  FootprintReport r;
  const std::uint64_t slot_tokens =
      (std::uint64_t(cfg.device_pages) + cfg.onload_pages) * cfg.page_size;
  // K and V planes for every layer.
  const std::uint64_t cache_bytes = std::uint64_t(cfg.num_layers) * 2 *
                                    slot_tokens * cfg.hidden() *
                                    cfg.bytes_per_element;
  const std::uint64_t t_max = batch * max_seq;
  // u, q, k, v projections: 4 x hidden per position.
  const std::uint64_t uvqk_bytes =
      t_max * 4ull * cfg.hidden() * cfg.bytes_per_element;
  // attention output and its gated copy: 2 x hidden per position.
  const std::uint64_t output_bytes =
      t_max * 2ull * cfg.hidden() * cfg.bytes_per_element;

  r.cache_mib = cache_bytes / kMiB;
  r.uvqk_mib = uvqk_bytes / kMiB;
  r.output_mib = output_bytes / kMiB;
  r.per_layer_mib = r.uvqk_mib + r.output_mib;
  r.workbench_mib = std::uint64_t(cfg.num_layers) * r.per_layer_mib;
  r.residual_mib = residual_mib;
  r.total_mib = r.cache_mib + r.workbench_mib + r.residual_mib;
  return r;
}

template <>
void Engine<TagBackend>::check_conservation() const {
  for (UserId u : manager_.known_users()) {
    const SequenceState* s = manager_.find(u);
    MTKV_CHECK(s != nullptr, "conservation: missing state");
    MTKV_CHECK(s->persisted_len % cfg_.chunk_size == 0,
               "conservation: persisted length not chunk-aligned");

    const auto& pages = manager_.user_pages(u);
    MTKV_CHECK(pages.size() * cfg_.page_size >= s->device_len,
               "conservation: device length exceeds page table");
    for (std::uint32_t l = 0; l < cfg_.num_layers; ++l) {
      for (std::size_t pos = 0; pos < pages.size() * cfg_.page_size; ++pos) {
        TagBackend::Elem e = device_.read(l, pages[pos / cfg_.page_size],
                                          std::uint32_t(pos % cfg_.page_size));
        if (pos < s->device_len) {
          MTKV_CHECK(!TagBackend::empty(e), "conservation: hole on device");
          TokenAddress a = TagBackend::decode(e);
          MTKV_CHECK(a.user == u && a.position == pos && a.layer == l,
                     "conservation: wrong identity on device");
        } else {
          MTKV_CHECK(TagBackend::empty(e),
                     "conservation: stale data beyond device length");
        }
      }
    }

    const std::uint64_t chunks = s->persisted_len / cfg_.chunk_size;
    MTKV_CHECK(host_.chunk_count(u) == chunks,
               "conservation: host chunk count disagrees with persisted length");
    for (std::uint64_t c = 0; c < chunks; ++c) {
      const auto& chunk = host_.read_chunk(u, c);
      for (std::uint32_t l = 0; l < cfg_.num_layers; ++l)
        for (std::uint64_t i = 0; i < cfg_.chunk_size; ++i) {
          TokenAddress a = TagBackend::decode(chunk.layers[l][i]);
          MTKV_CHECK(a.user == u && a.position == c * cfg_.chunk_size + i &&
                         a.layer == l,
                     "conservation: wrong identity on host");
        }
    }
  }
}

RunReport run_trace(const KVConfig& cfg, const CostModel& cost,
                    const std::vector<Request>& trace, Mode mode,
                    std::uint32_t batch_size, std::uint64_t seed,
                    const std::string& backend, const ModelParams* model,
                    std::vector<TraceEvent>* event_sink,
                    std::vector<std::vector<double>>* logit_sink) {
  EngineOptions opts;
  opts.mode = mode;
  opts.batch_size = batch_size;
  opts.seed = seed;
  opts.model = model;
  opts.event_sink = event_sink;
  opts.logit_sink = logit_sink;
  if (backend == "tag") {
    Engine<TagBackend> eng(cfg, cost, opts);
    return eng.run(trace);
  }
  if (backend == "value") {
    Engine<ValueBackend> eng(cfg, cost, opts);
    return eng.run(trace);
  }
  throw Error("unknown backend '" + backend + "' (expected tag or value)");
}

SweepParam parse_sweep_param(const std::string& s) {
  if (s == "chunk_size") return SweepParam::ChunkSize;
  if (s == "device_pages") return SweepParam::DevicePages;
  if (s == "batch_size") return SweepParam::BatchSize;
  throw Error("unknown sweep parameter '" + s +
              "' (expected chunk_size, device_pages or batch_size)");
}

std::vector<RunReport> sweep(SweepParam param,
                             const std::vector<std::uint64_t>& values,
                             KVConfig cfg, const CostModel& cost,
                             const std::vector<Request>& trace, Mode mode,
                             std::uint32_t batch_size, std::uint64_t seed) {
  std::vector<RunReport> out;
  out.reserve(values.size());
  for (std::uint64_t v : values) {
    KVConfig c = cfg;
    std::uint32_t bs = batch_size;
    const char* name = "";
    switch (param) {
      case SweepParam::ChunkSize:
        c.chunk_size = std::uint32_t(v);
        c.offload_quota = std::max<std::uint64_t>(c.offload_quota, v);
        name = "chunk_size";
        break;
      case SweepParam::DevicePages:
        c.device_pages = std::uint32_t(v);
        name = "device_pages";
        break;
      case SweepParam::BatchSize:
        bs = std::uint32_t(v);
        name = "batch_size";
        break;
    }
    RunReport r = run_trace(c, cost, trace, mode, bs, seed, "tag");
    r.sweep_param = name;
    r.sweep_value = v;
    out.push_back(std::move(r));
  }
  return out;
}

std::string reports_to_csv(const std::vector<RunReport>& reports) {
  std::string out = RunReport::csv_header() + "\n";
  for (const auto& r : reports) out += r.csv_row() + "\n";
  return out;
}

std::string events_to_jsonl(const std::vector<TraceEvent>& events) {
  std::ostringstream out;
  for (const auto& e : events) {
    nlohmann::ordered_json j;
    j["t"] = e.time;
    j["lane"] = lane_name(e.lane);
    j["task"] = e.task;
    j["user"] = e.user;
    if (e.layer >= 0) j["layer"] = e.layer;
    out << j.dump() << '\n';
  }
  return out.str();
}

std::string render_report_table(const std::string& report_json) {
  nlohmann::json j = nlohmann::json::parse(report_json);
  std::ostringstream out;
  char buf[128];
  out << "run: " << j.at("mode").get<std::string>() << " / "
      << j.at("backend").get<std::string>() << ", batch "
      << j.at("batch_size").get<std::uint32_t>() << "\n";
  out << std::string(52, '-') << "\n";
  const auto& steps = j.at("steps_ms");
  for (const char* label : kStepLabels) {
    double ms = steps.at(label).get<double>();
    if (ms == 0.0)
      std::snprintf(buf, sizeof buf, "%-32s %14s\n", label, "-");
    else
      std::snprintf(buf, sizeof buf, "%-32s %11.4f ms\n", label, ms);
    out << buf;
  }
  out << std::string(52, '-') << "\n";
  std::snprintf(buf, sizeof buf, "%-32s %11.4f ms\n", "  step 8 stall (Wait)",
                j.at("wait_ms").get<double>());
  out << buf;
  std::snprintf(buf, sizeof buf, "%-32s %11.4f ms\n", "  step 8 kernels (Comp)",
                j.at("comp_ms").get<double>());
  out << buf;
  std::snprintf(buf, sizeof buf, "%-32s %11.4f ms\n", "batch latency (avg)",
                j.at("avg_latency_ms").get<double>());
  out << buf;
  std::snprintf(buf, sizeof buf, "%-32s %14.4f\n", "gpu hit ratio",
                j.at("gpu_hit_ratio").get<double>());
  out << buf;
  std::snprintf(buf, sizeof buf, "%-32s %14.4f\n", "total hit ratio",
                j.at("total_hit_ratio").get<double>());
  out << buf;
  out << "tokens processed: " << j.at("tokens_processed").get<std::uint64_t>()
      << ", evictions: " << j.at("evictions").get<std::uint64_t>()
      << ", tail tokens lost: "
      << j.at("tail_tokens_lost").get<std::uint64_t>() << "\n";
  return out.str();
}

}  // namespace mtkv
