#pragma once

#include <cstdint>
#include <list>
#include <set>
#include <unordered_map>
#include <vector>

#include "mtkv/core.hpp"

namespace mtkv {

/// Allocation surface of the device tier, so the manager stays independent of
/// the payload backend.
class PageAllocator {
 public:
  virtual ~PageAllocator() = default;
  virtual PageId allocate() = 0;
  virtual void release(PageId id) = 0;
  virtual std::size_t free_count() const = 0;
  virtual std::uint32_t num_pages() const = 0;
};

/// Recency list over users: doubly-linked list plus a hash map, O(1) touch,
/// insert and remove. Front = most recent.
class LruIndex {
 public:
  void touch(UserId user);
  void remove(UserId user);
  bool contains(UserId user) const { return pos_.count(user) != 0; }
  std::size_t size() const { return order_.size(); }

  // Least-recent user not in `skip`; returns false if none.
  bool select_victim(const std::set<UserId>& skip, UserId& out) const;

  // Recency order, most recent first (test support).
  std::vector<UserId> snapshot() const { return {order_.begin(), order_.end()}; }

 private:
  std::list<UserId> order_;
  std::unordered_map<UserId, std::list<UserId>::iterator> pos_;
};

struct EvictionRecord {
  UserId user = 0;
  std::uint64_t freed_pages = 0;
  std::uint64_t tail_tokens_lost = 0;
};

/// Resolved execution plan for one request within a batch.
struct RequestPlan {
  UserId user = 0;
  std::uint64_t history_len = 0;   // P before this request's delta
  std::uint64_t reusable_len = 0;  // P_pre served from cache
  std::uint64_t device_served = 0;
  std::uint64_t host_onload = 0;   // tokens fetched from host chunks
  std::uint64_t fresh_history = 0; // lost tail re-encoded this request
  std::uint32_t delta = 0;
  std::uint32_t num_candidates = 0;
  std::vector<std::uint64_t> onload_chunks;
  std::vector<PageId> scratch_pages;   // candidate scratch, freed per request

  std::uint64_t total_seq_len() const {
    return history_len + delta + num_candidates;
  }
  std::uint64_t fresh_tokens() const {
    return fresh_history + delta + num_candidates;
  }
};

struct BatchMetadata {
  std::vector<RequestPlan> plans;
  std::vector<EvictionRecord> evictions;
};

struct BatchRejected : Error {
  using Error::Error;
};

struct ManagerCounters {
  std::uint64_t evictions = 0;
  std::uint64_t tail_tokens_lost = 0;
  std::uint64_t pages_allocated = 0;
};

/// Control plane of workflow steps ①, ⑤, ⑦: length tracking, page table,
/// allocation with LRU eviction, zero-copy reclamation, user locking.
/// All metadata mutations are serialized through this object.
class CacheManager {
 public:
  CacheManager(const KVConfig& cfg, PageAllocator& alloc);

  const KVConfig& config() const { return cfg_; }

  // Alg. step 1: reusable prefix length; 0 for unknown users.
  std::uint64_t get_total_cache_length(UserId user) const;

  const SequenceState* find(UserId user) const;
  SequenceState& state(UserId user);

  // Alg. step 2: resolve P_pre, plan onloads, allocate pages (evicting LRU
  // victims as needed), touch recency. `host_enabled` = hierarchical mode.
  BatchMetadata prepare_metadata(const std::vector<Request>& batch,
                                 bool host_enabled);

  // Zero-copy reclamation: pages back to the free list, device_len := 0,
  // persisted_len untouched. The device-only tail is permanently lost.
  std::vector<PageId> evict_user(UserId user);

  void lock_user(UserId user);
  void unlock_user(UserId user);
  bool is_locked(UserId user) const { return locked_.count(user) != 0; }

  // Alg. step 7: onloaded pages become live; device_len := persisted prefix.
  void commit_onload(UserId user, const RequestPlan& plan);

  // After step 8's append: lengths advance by the freshly encoded history.
  void finish_append(UserId user, std::uint64_t appended_history_tokens);

  // Host persistence completed for one chunk.
  void advance_persisted(UserId user, std::uint64_t tokens);

  void release_scratch(RequestPlan& plan);

  const std::vector<PageId>& user_pages(UserId user) const;
  std::uint32_t last_page_len(UserId user) const;

  std::uint64_t occupied_pages() const { return occupied_pages_; }
  const ManagerCounters& counters() const { return counters_; }
  const LruIndex& lru() const { return lru_; }
  std::vector<UserId> known_users() const;

 private:
  PageId allocate_page();
  void ensure_free(std::uint64_t needed, const std::set<UserId>& protected_users,
                   std::vector<EvictionRecord>& log);

  KVConfig cfg_;
  PageAllocator& alloc_;
  std::unordered_map<UserId, SequenceState> seqs_;
  std::unordered_map<UserId, std::vector<PageId>> pages_;
  LruIndex lru_;
  std::set<UserId> locked_;
  std::uint64_t clock_ = 0;
  std::uint64_t occupied_pages_ = 0;
  ManagerCounters counters_;
};

// Alg. step 3: drop the cached prefix, keep the positions needing fresh
// computation (lost tail ++ delta).
std::vector<TokenId> strip_cached_tokens(const std::vector<TokenId>& history,
                                         std::uint64_t reusable_len);

}  // namespace mtkv
