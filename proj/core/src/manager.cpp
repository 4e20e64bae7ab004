#include "mtkv/manager.hpp"

#include <algorithm>

namespace mtkv {

void LruIndex::touch(UserId user) {
  auto it = pos_.find(user);
  if (it != pos_.end()) order_.erase(it->second);
  order_.push_front(user);
  pos_[user] = order_.begin();
}

void LruIndex::remove(UserId user) {
  auto it = pos_.find(user);
  if (it == pos_.end()) return;
  order_.erase(it->second);
  pos_.erase(it);
}

bool LruIndex::select_victim(const std::set<UserId>& skip, UserId& out) const {
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    if (skip.count(*it)) continue;
    out = *it;
    return true;
  }
  return false;
}

CacheManager::CacheManager(const KVConfig& cfg, PageAllocator& alloc)
    : cfg_(cfg), alloc_(alloc) {
  cfg_.validate();
}

std::uint64_t CacheManager::get_total_cache_length(UserId user) const {
  auto it = seqs_.find(user);
  if (it == seqs_.end()) return 0;
  return std::max(it->second.device_len, it->second.persisted_len);
}

const SequenceState* CacheManager::find(UserId user) const {
  auto it = seqs_.find(user);
  return it == seqs_.end() ? nullptr : &it->second;
}

SequenceState& CacheManager::state(UserId user) { return seqs_[user]; }

PageId CacheManager::allocate_page() {
  PageId id = alloc_.allocate();
  ++occupied_pages_;
  ++counters_.pages_allocated;
  return id;
}

void CacheManager::ensure_free(std::uint64_t needed,
                               const std::set<UserId>& protected_users,
                               std::vector<EvictionRecord>& log) {
  while (alloc_.free_count() < needed) {
    std::set<UserId> skip = protected_users;
    skip.insert(locked_.begin(), locked_.end());
    UserId victim;
    if (!lru_.select_victim(skip, victim))
      throw BatchRejected("allocation unsatisfiable: all resident users locked or in batch");
    EvictionRecord rec;
    rec.user = victim;
    const SequenceState& s = seqs_.at(victim);
    rec.tail_tokens_lost =
        s.device_len > s.persisted_len ? s.device_len - s.persisted_len : 0;
    rec.freed_pages = evict_user(victim).size();
    log.push_back(rec);
  }
}

BatchMetadata CacheManager::prepare_metadata(const std::vector<Request>& batch,
                                             bool host_enabled) {
  BatchMetadata md;
  md.plans.reserve(batch.size());

  std::set<UserId> batch_users;
  for (const auto& r : batch) batch_users.insert(r.user);

  // Projected lengths so a second occurrence of a user within the batch
  // plans against the first occurrence's appended state.
  std::unordered_map<UserId, std::pair<std::uint64_t, std::uint64_t>> projected;

  std::uint64_t batch_need = 0;
  for (const auto& req : batch) {
    ++clock_;
    SequenceState& s = seqs_[req.user];
    s.last_access = clock_;
    lru_.touch(req.user);

    auto [pit, inserted] = projected.try_emplace(
        req.user, std::make_pair(s.total_len, s.device_len));
    std::uint64_t p_prior = pit->second.first;
    std::uint64_t device_len = pit->second.second;

    RequestPlan plan;
    plan.user = req.user;
    plan.history_len = p_prior;
    plan.delta = req.delta();
    plan.num_candidates = req.num_candidates();
    MTKV_CHECK(plan.num_candidates >= 1, "request: need at least one candidate");

    if (device_len > 0) {
      plan.device_served = std::min(device_len, p_prior);
      plan.reusable_len = plan.device_served;
    } else if (host_enabled && s.persisted_len > 0) {
      plan.host_onload = s.persisted_len;
      plan.reusable_len = s.persisted_len;
      std::uint64_t chunks = s.persisted_len / cfg_.chunk_size;
      for (std::uint64_t c = 0; c < chunks; ++c) plan.onload_chunks.push_back(c);
    }
    plan.fresh_history = p_prior - plan.reusable_len;

    std::uint64_t target_tokens = p_prior + plan.delta;
    std::uint64_t target_pages = pages_needed(target_tokens, cfg_.page_size);
    std::uint64_t have_pages = pages_.count(req.user) ? pages_[req.user].size() : 0;
    std::uint64_t grow = target_pages > have_pages ? target_pages - have_pages : 0;
    std::uint64_t scratch = pages_needed(plan.num_candidates, cfg_.page_size);

    batch_need += grow + scratch;
    if (batch_need > alloc_.num_pages())
      throw BatchRejected("batch exceeds total device pages");

    ensure_free(grow + scratch, batch_users, md.evictions);

    auto& plist = pages_[req.user];
    for (std::uint64_t i = 0; i < grow; ++i) plist.push_back(allocate_page());
    for (std::uint64_t i = 0; i < scratch; ++i)
      plan.scratch_pages.push_back(allocate_page());

    pit->second.first = target_tokens;
    pit->second.second = plan.reusable_len + plan.fresh_history + plan.delta;

    md.plans.push_back(std::move(plan));
  }
  return md;
}

std::vector<PageId> CacheManager::evict_user(UserId user) {
  MTKV_CHECK(!is_locked(user), "evict: user is locked");
  auto sit = seqs_.find(user);
  MTKV_CHECK(sit != seqs_.end(), "evict: unknown user");
  SequenceState& s = sit->second;

  std::vector<PageId> freed;
  auto pit = pages_.find(user);
  if (pit != pages_.end()) {
    freed = std::move(pit->second);
    pages_.erase(pit);
  }
  for (PageId id : freed) {
    alloc_.release(id);
    --occupied_pages_;
  }
  if (s.device_len > s.persisted_len)
    counters_.tail_tokens_lost += s.device_len - s.persisted_len;
  s.device_len = 0;
  ++counters_.evictions;
  lru_.remove(user);
  return freed;
}

void CacheManager::lock_user(UserId user) {
  MTKV_CHECK(seqs_.count(user), "lock: unknown user");
  MTKV_CHECK(!is_locked(user), "lock: user already locked");
  locked_.insert(user);
  seqs_[user].locked = true;
}

void CacheManager::unlock_user(UserId user) {
  MTKV_CHECK(is_locked(user), "unlock: user not locked");
  locked_.erase(user);
  seqs_[user].locked = false;
}

void CacheManager::commit_onload(UserId user, const RequestPlan& plan) {
  if (plan.onload_chunks.empty()) return;  // no pending onload: no-op
  SequenceState& s = seqs_.at(user);
  s.device_len = plan.reusable_len;
}

void CacheManager::finish_append(UserId user, std::uint64_t appended) {
  SequenceState& s = seqs_.at(user);
  s.device_len += appended;
  s.total_len = std::max(s.total_len, s.device_len);
}

void CacheManager::advance_persisted(UserId user, std::uint64_t tokens) {
  SequenceState& s = seqs_.at(user);
  s.persisted_len += tokens;
  MTKV_CHECK(s.persisted_len <= s.total_len, "persist: beyond total length");
}

void CacheManager::release_scratch(RequestPlan& plan) {
  for (PageId id : plan.scratch_pages) {
    alloc_.release(id);
    --occupied_pages_;
  }
  plan.scratch_pages.clear();
}

const std::vector<PageId>& CacheManager::user_pages(UserId user) const {
  static const std::vector<PageId> kNone;
  auto it = pages_.find(user);
  return it == pages_.end() ? kNone : it->second;
}

std::uint32_t CacheManager::last_page_len(UserId user) const {
  auto it = seqs_.find(user);
  if (it == seqs_.end() || it->second.device_len == 0) return 0;
  std::uint32_t rem = it->second.device_len % cfg_.page_size;
  return rem == 0 ? cfg_.page_size : rem;
}

std::vector<UserId> CacheManager::known_users() const {
  std::vector<UserId> out;
  out.reserve(seqs_.size());
  for (const auto& [u, _] : seqs_) out.push_back(u);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<TokenId> strip_cached_tokens(const std::vector<TokenId>& history,
                                         std::uint64_t reusable_len) {
  MTKV_CHECK(reusable_len <= history.size(), "strip: prefix exceeds history");
  return {history.begin() + std::ptrdiff_t(reusable_len), history.end()};
}

}  // namespace mtkv
