// Command-line front end: trace replay, oracle verification, footprint
// accounting, parameter sweeps, workload generation and report rendering.

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mtkv/sim.hpp"

namespace {

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f.good()) throw mtkv::Error("cannot write " + path);
  f << text;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw mtkv::Error("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct RunArgs {
  std::string config_path;
  std::string trace_path;
  std::string preset;
  std::string mode = "hierarchical";
  std::string backend = "tag";
  std::uint32_t batch = 1;
  std::uint64_t seed = 1;
  std::uint32_t vocab = 64;
  std::uint64_t model_seed = 1;
  std::string out_path;
  std::string events_path;
  std::string dump_pages_path;
};

int cmd_run(const RunArgs& a) {
  mtkv::KVConfig cfg;
  if (!a.config_path.empty()) cfg = mtkv::load_config(a.config_path);

  std::vector<mtkv::Request> trace;
  if (!a.trace_path.empty()) {
    trace = mtkv::load_trace(a.trace_path);
  } else if (!a.preset.empty()) {
    mtkv::GenConfig g = mtkv::resolve_preset(a.preset);
    g.seed = a.seed;
    if (a.backend == "value") g.vocab = a.vocab;
    trace = mtkv::generate_trace(g);
  } else {
    throw mtkv::Error("run: need --trace or --preset");
  }

  mtkv::CostModel cost;
  mtkv::Mode mode = mtkv::parse_mode(a.mode);

  mtkv::ModelParams model;
  const mtkv::ModelParams* model_ptr = nullptr;
  if (a.backend == "value") {
    mtkv::ModelConfig mc;
    mc.num_layers = cfg.num_layers;
    mc.num_heads = cfg.num_heads;
    mc.head_dim = cfg.head_dim;
    mc.vocab = a.vocab;
    mc.seed = a.model_seed;
    model = mtkv::ModelParams::random(mc);
    model_ptr = &model;
  }

  std::vector<mtkv::TraceEvent> events;
  std::vector<mtkv::TraceEvent>* event_sink =
      a.events_path.empty() ? nullptr : &events;

  mtkv::RunReport report;
  std::string page_map;
  if (a.dump_pages_path.empty()) {
    report = mtkv::run_trace(cfg, cost, trace, mode, a.batch, a.seed,
                             a.backend, model_ptr, event_sink);
  } else {
    // Keep the engine alive to dump its page table after the run.
    mtkv::EngineOptions opts;
    opts.mode = mode;
    opts.batch_size = a.batch;
    opts.seed = a.seed;
    opts.model = model_ptr;
    opts.event_sink = event_sink;
    if (a.backend == "tag") {
      mtkv::Engine<mtkv::TagBackend> eng(cfg, cost, opts);
      report = eng.run(trace);
      page_map = eng.dump_page_map();
    } else {
      mtkv::Engine<mtkv::ValueBackend> eng(cfg, cost, opts);
      report = eng.run(trace);
      page_map = eng.dump_page_map();
    }
    write_file(a.dump_pages_path, page_map + "\n");
  }

  std::string json = report.to_json() + "\n";
  if (a.out_path.empty())
    std::cout << json;
  else
    write_file(a.out_path, json);
  if (!a.events_path.empty())
    write_file(a.events_path, mtkv::events_to_jsonl(events));
  return 0;
}

// Cross-checks the incremental forward pass against the full recomputation
// on random models and random splits. --inject-fault flips one cached value
// to demonstrate that the comparison has teeth.
int cmd_verify(std::uint64_t trials, std::uint64_t seed, bool inject_fault) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint32_t> len_dist(1, 40);
  std::uint64_t failures = 0;

  for (std::uint64_t t = 0; t < trials; ++t) {
    mtkv::ModelConfig mc;
    mc.num_layers = 1 + std::uint32_t(rng() % 3);
    mc.num_heads = 1 + std::uint32_t(rng() % 3);
    mc.head_dim = 4 + std::uint32_t(rng() % 8);
    mc.vocab = 32;
    mc.seed = rng();
    mtkv::ModelParams params = mtkv::ModelParams::random(mc);

    std::uint32_t hist_len = len_dist(rng);
    std::uint32_t split = std::uint32_t(rng() % (hist_len + 1));
    std::uniform_int_distribution<mtkv::TokenId> tok(0, mc.vocab - 1);
    std::vector<mtkv::TokenId> history(hist_len);
    for (auto& id : history) id = tok(rng);
    std::vector<mtkv::TokenId> candidates(1 + rng() % 4);
    for (auto& id : candidates) id = tok(rng);

    mtkv::ForwardOutput full =
        mtkv::forward_full(history, candidates, params);

    std::vector<mtkv::TokenId> prefix(history.begin(),
                                      history.begin() + split);
    std::vector<mtkv::TokenId> delta(history.begin() + split, history.end());
    mtkv::ForwardOutput warm = mtkv::forward_full(prefix, {history.empty()
                                                               ? mtkv::TokenId(0)
                                                               : history[0]},
                                                  params);
    std::vector<mtkv::LayerKV> cached(mc.num_layers);
    for (std::uint32_t l = 0; l < mc.num_layers; ++l)
      cached[l] = warm.new_kv[l].prefix(split);
    if (inject_fault && split > 0 && t == 0) cached[0].keys[0] += 0.5;

    mtkv::ForwardOutput inc =
        mtkv::forward_incremental(cached, delta, candidates, params);

    double max_err = 0;
    for (std::size_t i = 0; i < full.logits.size(); ++i)
      max_err = std::max(max_err, std::fabs(full.logits[i] - inc.logits[i]));
    if (max_err > 1e-5) {
      ++failures;
      std::printf("trial %" PRIu64 ": FAIL (max logit error %.3g)\n", t, max_err);
    }
  }
  std::printf("verify: %" PRIu64 "/%" PRIu64 " trials passed\n",
              trials - failures, trials);
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical KV-cache serving simulator"};
  app.require_subcommand(1);

  RunArgs ra;
  auto* run = app.add_subcommand("run", "replay a trace and report step times");
  run->add_option("--config", ra.config_path, "key=value config file");
  run->add_option("--trace", ra.trace_path, "JSONL trace to replay");
  run->add_option("--preset", ra.preset, "workload preset (kuairand1k, mt)");
  run->add_option("--mode", ra.mode, "recompute | gpu_only | hierarchical");
  run->add_option("--backend", ra.backend, "tag | value");
  run->add_option("--batch", ra.batch, "requests per batch");
  run->add_option("--seed", ra.seed, "trace/generator seed");
  run->add_option("--vocab", ra.vocab, "vocabulary size (value backend)");
  run->add_option("--model-seed", ra.model_seed, "model weight seed");
  run->add_option("--out", ra.out_path, "write report JSON here");
  run->add_option("--events", ra.events_path, "write lane events JSONL here");
  run->add_option("--dump-pages", ra.dump_pages_path,
                  "write final per-user page map JSON here");

  std::uint64_t vt_trials = 100, vt_seed = 7;
  bool vt_fault = false;
  auto* verify = app.add_subcommand(
      "verify", "cross-check incremental vs full forward pass");
  verify->add_option("--trials", vt_trials, "number of random trials");
  verify->add_option("--seed", vt_seed, "RNG seed");
  verify->add_flag("--inject-fault", vt_fault,
                   "corrupt one cached value (negative control)");

  std::string fp_config;
  std::uint64_t fp_batch = 16, fp_maxseq = 4096, fp_residual = 2187;
  auto* foot = app.add_subcommand("footprint", "device memory accounting");
  foot->add_option("--config", fp_config, "key=value config file");
  foot->add_option("--batch", fp_batch, "max batch size");
  foot->add_option("--maxseq", fp_maxseq, "max sequence length");
  foot->add_option("--residual-mib", fp_residual,
                   "weights + runtime residual, MiB");

  std::string sw_param = "chunk_size", sw_values_csv;
  RunArgs sa;
  auto* sw = app.add_subcommand("sweep", "replay under a parameter sweep");
  sw->add_option("--param", sw_param, "chunk_size | device_pages | batch_size");
  sw->add_option("--values", sw_values_csv, "comma-separated values")
      ->required();
  sw->add_option("--config", sa.config_path, "key=value config file");
  sw->add_option("--trace", sa.trace_path, "JSONL trace to replay");
  sw->add_option("--preset", sa.preset, "workload preset");
  sw->add_option("--mode", sa.mode, "simulation mode");
  sw->add_option("--batch", sa.batch, "requests per batch");
  sw->add_option("--seed", sa.seed, "trace/generator seed");
  sw->add_option("--out", sa.out_path, "write CSV here (default stdout)");

  std::string gt_preset, gt_out;
  mtkv::GenConfig gt_cfg;
  std::string gt_tail = "lognormal";
  auto* gen = app.add_subcommand("gen-trace", "generate a synthetic trace");
  gen->add_option("--preset", gt_preset, "kuairand1k | mt");
  gen->add_option("--out", gt_out, "output JSONL path")->required();
  gen->add_option("--users", gt_cfg.num_users, "user count");
  gen->add_option("--requests", gt_cfg.total_requests, "request count");
  gen->add_option("--mean-len", gt_cfg.mean_final_len, "mean final history");
  gen->add_option("--min-len", gt_cfg.min_len, "minimum final history");
  gen->add_option("--max-len", gt_cfg.max_len, "history cap");
  gen->add_option("--fixed-delta", gt_cfg.fixed_delta,
                  "fixed per-visit append size");
  gen->add_option("--candidates", gt_cfg.candidates, "candidates per request");
  gen->add_option("--vocab", gt_cfg.vocab, ">0: emit explicit token ids");
  gen->add_option("--seed", gt_cfg.seed, "generator seed");
  gen->add_option("--tail", gt_tail, "lognormal | pareto gap family");

  std::string rp_in;
  auto* rep = app.add_subcommand("report", "render a report JSON as a table");
  rep->add_option("--in", rp_in, "report JSON path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(ra);
    if (verify->parsed()) return cmd_verify(vt_trials, vt_seed, vt_fault);
    if (foot->parsed()) {
      mtkv::KVConfig cfg;
      if (!fp_config.empty()) cfg = mtkv::load_config(fp_config);
      mtkv::FootprintReport r =
          mtkv::memory_footprint(cfg, fp_batch, fp_maxseq, fp_residual);
      std::cout << r.to_text();
      return 0;
    }
    if (sw->parsed()) {
      mtkv::KVConfig cfg;
      if (!sa.config_path.empty()) cfg = mtkv::load_config(sa.config_path);
      std::vector<mtkv::Request> trace;
      if (!sa.trace_path.empty())
        trace = mtkv::load_trace(sa.trace_path);
      else if (!sa.preset.empty()) {
        mtkv::GenConfig g = mtkv::resolve_preset(sa.preset);
        g.seed = sa.seed;
        trace = mtkv::generate_trace(g);
      } else {
        throw mtkv::Error("sweep: need --trace or --preset");
      }
      std::vector<std::uint64_t> values;
      std::stringstream ss(sw_values_csv);
      std::string item;
      while (std::getline(ss, item, ','))
        if (!item.empty()) values.push_back(std::stoull(item));
      auto reports =
          mtkv::sweep(mtkv::parse_sweep_param(sw_param), values, cfg,
                      mtkv::CostModel{}, trace, mtkv::parse_mode(sa.mode),
                      sa.batch, sa.seed);
      std::string csv = mtkv::reports_to_csv(reports);
      if (sa.out_path.empty())
        std::cout << csv;
      else
        write_file(sa.out_path, csv);
      return 0;
    }
    if (gen->parsed()) {
      mtkv::GenConfig g = gt_cfg;
      if (!gt_preset.empty()) {
        mtkv::GenConfig base = mtkv::resolve_preset(gt_preset);
        // Explicit flags override the preset.
        base.seed = gt_cfg.seed;
        base.vocab = gt_cfg.vocab;
        base.fixed_delta = gt_cfg.fixed_delta;
        if (gen->count("--users")) base.num_users = gt_cfg.num_users;
        if (gen->count("--requests")) base.total_requests = gt_cfg.total_requests;
        if (gen->count("--mean-len")) base.mean_final_len = gt_cfg.mean_final_len;
        if (gen->count("--min-len")) base.min_len = gt_cfg.min_len;
        if (gen->count("--max-len")) base.max_len = gt_cfg.max_len;
        if (gen->count("--candidates")) base.candidates = gt_cfg.candidates;
        g = base;
      }
      g.family = gt_tail == "pareto" ? mtkv::TailFamily::Pareto
                                     : mtkv::TailFamily::LogNormal;
      mtkv::save_trace(mtkv::generate_trace(g), gt_out);
      return 0;
    }
    if (rep->parsed()) {
      std::cout << mtkv::render_report_table(read_file(rp_in));
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
