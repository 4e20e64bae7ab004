#include <doctest.h>

#include <algorithm>
#include <random>

#include "mtkv/manager.hpp"
#include "mtkv/store.hpp"

using namespace mtkv;

namespace {

KVConfig small_cfg(std::uint32_t pages) {
  KVConfig cfg;
  cfg.num_layers = 2;
  cfg.page_size = 8;
  cfg.chunk_size = 16;
  cfg.device_pages = pages;
  cfg.offload_quota = 64;
  return cfg;
}

Request req(UserId u, std::uint32_t delta, std::uint32_t cands = 1) {
  Request r;
  r.user = u;
  r.new_token_count = delta;
  r.candidate_count = cands;
  return r;
}

}  // namespace

TEST_CASE("lru index basics") {
  LruIndex lru;
  lru.touch(1);
  lru.touch(2);
  lru.touch(3);
  lru.touch(1);  // 1 most recent now
  CHECK(lru.snapshot() == std::vector<UserId>{1, 3, 2});

  UserId victim;
  REQUIRE(lru.select_victim({}, victim));
  CHECK(victim == 2);
  REQUIRE(lru.select_victim({2}, victim));
  CHECK(victim == 3);
  CHECK_FALSE(lru.select_victim({1, 2, 3}, victim));

  lru.remove(2);
  CHECK_FALSE(lru.contains(2));
  CHECK(lru.size() == 2);
  lru.remove(2);  // idempotent
}

TEST_CASE("lru differential against a naive reference") {
  LruIndex fast;
  std::vector<UserId> naive;  // front = most recent
  std::mt19937_64 rng(99);
  for (int op = 0; op < 10000; ++op) {
    UserId u = UserId(rng() % 50);
    switch (rng() % 3) {
      case 0:
        fast.touch(u);
        naive.erase(std::remove(naive.begin(), naive.end(), u), naive.end());
        naive.insert(naive.begin(), u);
        break;
      case 1:
        fast.remove(u);
        naive.erase(std::remove(naive.begin(), naive.end(), u), naive.end());
        break;
      default: {
        std::set<UserId> skip;
        for (int i = 0; i < 3; ++i) skip.insert(UserId(rng() % 50));
        UserId got;
        bool ok = fast.select_victim(skip, got);
        UserId want = 0;
        bool want_ok = false;
        for (auto it = naive.rbegin(); it != naive.rend(); ++it)
          if (!skip.count(*it)) {
            want = *it;
            want_ok = true;
            break;
          }
        REQUIRE(ok == want_ok);
        if (ok) REQUIRE(got == want);
      }
    }
    REQUIRE(fast.snapshot() == naive);
  }
}

TEST_CASE("first visit plans fresh-only with scratch") {
  auto cfg = small_cfg(64);
  DevicePagedStore<TagBackend> dev(cfg.num_layers, cfg.device_pages, cfg.page_size);
  CacheManager mgr(cfg, dev);

  auto md = mgr.prepare_metadata({req(7, 20, 3)}, true);
  REQUIRE(md.plans.size() == 1);
  const auto& p = md.plans[0];
  CHECK(p.history_len == 0);
  CHECK(p.reusable_len == 0);
  CHECK(p.fresh_history == 0);
  CHECK(p.delta == 20);
  CHECK(p.fresh_tokens() == 23);
  CHECK(p.total_seq_len() == 23);
  CHECK(mgr.user_pages(7).size() == 3);      // ceil(20/8)
  CHECK(p.scratch_pages.size() == 1);        // ceil(3/8)
  CHECK(mgr.occupied_pages() == 4);

  mgr.finish_append(7, 20);
  CHECK(mgr.get_total_cache_length(7) == 20);
  CHECK(mgr.last_page_len(7) == 4);

  RequestPlan plan = md.plans[0];
  mgr.release_scratch(plan);
  CHECK(plan.scratch_pages.empty());
  CHECK(mgr.occupied_pages() == 3);
}

TEST_CASE("resident prefix is served from the device tier") {
  auto cfg = small_cfg(64);
  DevicePagedStore<TagBackend> dev(cfg.num_layers, cfg.device_pages, cfg.page_size);
  CacheManager mgr(cfg, dev);

  auto md1 = mgr.prepare_metadata({req(1, 16)}, true);
  mgr.finish_append(1, 16);
  mgr.release_scratch(md1.plans[0]);

  auto md2 = mgr.prepare_metadata({req(1, 10)}, true);
  const auto& p = md2.plans[0];
  CHECK(p.history_len == 16);
  CHECK(p.device_served == 16);
  CHECK(p.host_onload == 0);
  CHECK(p.fresh_history == 0);
  CHECK(p.fresh_tokens() == 11);
}

TEST_CASE("same user twice in one batch plans against projected state") {
  auto cfg = small_cfg(64);
  DevicePagedStore<TagBackend> dev(cfg.num_layers, cfg.device_pages, cfg.page_size);
  CacheManager mgr(cfg, dev);

  auto md = mgr.prepare_metadata({req(4, 10), req(4, 6)}, true);
  CHECK(md.plans[0].history_len == 0);
  CHECK(md.plans[1].history_len == 10);
  CHECK(md.plans[1].device_served == 10);
  CHECK(md.plans[1].fresh_history == 0);
}

TEST_CASE("round-robin over capacity evicts the least recent") {
  // capacity = 2 users' worth (plus scratch headroom)
  auto cfg = small_cfg(5);
  DevicePagedStore<TagBackend> dev(cfg.num_layers, cfg.device_pages, cfg.page_size);
  CacheManager mgr(cfg, dev);

  for (UserId u : {1, 2}) {
    auto md = mgr.prepare_metadata({req(u, 16)}, true);
    mgr.finish_append(u, 16);
    mgr.release_scratch(md.plans[0]);
  }
  CHECK(mgr.occupied_pages() == 4);

  auto md = mgr.prepare_metadata({req(3, 16)}, true);
  REQUIRE(md.evictions.size() >= 1);
  CHECK(md.evictions[0].user == 1);  // least recent of {1,2}
  CHECK(md.evictions[0].tail_tokens_lost == 16);  // nothing persisted
  CHECK(mgr.find(1)->device_len == 0);
  CHECK(mgr.user_pages(1).empty());
  CHECK(mgr.counters().evictions == 1);
  mgr.finish_append(3, 16);
  mgr.release_scratch(md.plans[0]);
}

TEST_CASE("zero-copy eviction keeps the persisted prefix") {
  auto cfg = small_cfg(64);
  DevicePagedStore<TagBackend> dev(cfg.num_layers, cfg.device_pages, cfg.page_size);
  CacheManager mgr(cfg, dev);

  auto md = mgr.prepare_metadata({req(5, 40)}, true);
  mgr.finish_append(5, 40);
  mgr.release_scratch(md.plans[0]);
  mgr.advance_persisted(5, 32);  // two chunks on host

  auto freed = mgr.evict_user(5);
  CHECK(freed.size() == 5);
  CHECK(mgr.counters().tail_tokens_lost == 8);
  CHECK(mgr.find(5)->persisted_len == 32);
  CHECK(mgr.find(5)->device_len == 0);
  CHECK(mgr.get_total_cache_length(5) == 32);

  // next visit onloads the persisted chunks and re-encodes the tail
  auto md2 = mgr.prepare_metadata({req(5, 10)}, true);
  const auto& p = md2.plans[0];
  CHECK(p.history_len == 40);
  CHECK(p.host_onload == 32);
  CHECK(p.onload_chunks == std::vector<std::uint64_t>{0, 1});
  CHECK(p.fresh_history == 8);
  mgr.commit_onload(5, p);
  CHECK(mgr.find(5)->device_len == 32);

  // without the host tier the whole history is fresh
  CacheManager mgr2(cfg, dev);
  auto mda = mgr2.prepare_metadata({req(6, 40)}, false);
  mgr2.finish_append(6, 40);
  mgr2.release_scratch(mda.plans[0]);
  mgr2.evict_user(6);
  auto mdb = mgr2.prepare_metadata({req(6, 10)}, false);
  CHECK(mdb.plans[0].fresh_history == 40);
  CHECK(mdb.plans[0].host_onload == 0);
}

TEST_CASE("locking protocol") {
  auto cfg = small_cfg(8);
  DevicePagedStore<TagBackend> dev(cfg.num_layers, cfg.device_pages, cfg.page_size);
  CacheManager mgr(cfg, dev);

  auto md = mgr.prepare_metadata({req(1, 16)}, true);
  mgr.finish_append(1, 16);
  mgr.release_scratch(md.plans[0]);

  mgr.lock_user(1);
  CHECK(mgr.is_locked(1));
  CHECK_THROWS_AS(mgr.lock_user(1), Error);     // double lock
  CHECK_THROWS_AS(mgr.evict_user(1), Error);    // locked users are pinned
  CHECK_THROWS_AS(mgr.lock_user(42), Error);    // unknown user

  // allocation pressure cannot claim the locked user's pages
  CHECK_THROWS_AS(mgr.prepare_metadata({req(2, 48)}, true), BatchRejected);

  mgr.unlock_user(1);
  CHECK_FALSE(mgr.is_locked(1));
  CHECK_THROWS_AS(mgr.unlock_user(1), Error);
  auto md2 = mgr.prepare_metadata({req(2, 56)}, true);  // now evictable
  CHECK(md2.evictions.size() == 1);
  CHECK(md2.evictions[0].user == 1);
}

TEST_CASE("oversized batches are rejected up front") {
  auto cfg = small_cfg(4);
  DevicePagedStore<TagBackend> dev(cfg.num_layers, cfg.device_pages, cfg.page_size);
  CacheManager mgr(cfg, dev);
  CHECK_THROWS_AS(mgr.prepare_metadata({req(1, 100)}, true), BatchRejected);
}

TEST_CASE("batch members protect each other from eviction") {
  auto cfg = small_cfg(6);
  DevicePagedStore<TagBackend> dev(cfg.num_layers, cfg.device_pages, cfg.page_size);
  CacheManager mgr(cfg, dev);
  for (UserId u : {1, 2}) {
    auto md = mgr.prepare_metadata({req(u, 16)}, true);
    mgr.finish_append(u, 16);
    mgr.release_scratch(md.plans[0]);
  }
  // both users grow in one batch; neither may be chosen as a victim
  CHECK_THROWS_AS(mgr.prepare_metadata({req(1, 8), req(2, 8)}, true),
                  BatchRejected);
}

TEST_CASE("strip keeps exactly the uncached suffix") {
  std::vector<TokenId> hist = {10, 11, 12, 13, 14};
  CHECK(strip_cached_tokens(hist, 0) == hist);
  CHECK(strip_cached_tokens(hist, 3) == std::vector<TokenId>{13, 14});
  CHECK(strip_cached_tokens(hist, 5).empty());
  CHECK_THROWS_AS(strip_cached_tokens(hist, 6), Error);
}
