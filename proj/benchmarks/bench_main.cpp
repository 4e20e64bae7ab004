#include <benchmark/benchmark.h>

#include "mtkv/sim.hpp"

namespace {

void BM_LruTouch(benchmark::State& state) {
  mtkv::LruIndex lru;
  const std::uint32_t n = std::uint32_t(state.range(0));
  for (std::uint32_t u = 0; u < n; ++u) lru.touch(u);
  std::uint32_t u = 0;
  for (auto _ : state) {
    lru.touch(u);
    u = (u * 2654435761u + 1) % n;
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_LruTouch)->Arg(1000)->Arg(100000);

void BM_ScatterGather(benchmark::State& state) {
  const std::uint32_t page = 32, tokens = std::uint32_t(state.range(0));
  mtkv::DevicePagedStore<mtkv::TagBackend> store(1, 4096, page);
  std::vector<mtkv::PageId> pages;
  for (std::uint32_t i = 0; i < (tokens + page - 1) / page; ++i)
    pages.push_back(store.allocate());
  mtkv::Span<mtkv::TagBackend> span(tokens);
  for (std::uint32_t i = 0; i < tokens; ++i)
    span[i] = mtkv::TagBackend::make(1, i, 0);
  for (auto _ : state) {
    store.scatter(span, pages, 0);
    benchmark::DoNotOptimize(store.gather(pages, 0, tokens));
  }
  state.SetItemsProcessed(state.iterations() * tokens);
}
BENCHMARK(BM_ScatterGather)->Arg(1024)->Arg(8192);

void BM_RunTrace(benchmark::State& state) {
  mtkv::GenConfig g;
  g.num_users = 50;
  g.total_requests = 500;
  g.mean_final_len = 3000;
  g.max_len = 8000;
  auto trace = mtkv::generate_trace(g);
  mtkv::KVConfig cfg;
  cfg.device_pages = 2048;
  mtkv::CostModel cost;
  for (auto _ : state) {
    auto r = mtkv::run_trace(cfg, cost, trace, mtkv::Mode::Hierarchical, 4, 1,
                             "tag");
    benchmark::DoNotOptimize(r);
  }
}
BENCHMARK(BM_RunTrace)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
