#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "mtkv/core.hpp"
#include "mtkv/manager.hpp"
#include "mtkv/model.hpp"

namespace mtkv {

// Two interchangeable payload backends sit behind the same store interface.
// The value backend carries real K/V numbers and is paired with the reference
// model for end-to-end oracle runs; the tag backend carries compact token
// identities so data movement stays verifiable at scales where storing
// numbers would be wasteful. One tag covers a token's K/V pair.

struct TagBackend {
  using Elem = std::uint64_t;
  static constexpr Elem kEmpty = UINT64_MAX;

  static Elem make(UserId user, std::uint64_t position, std::uint32_t layer) {
    return (std::uint64_t(user) << 40) | ((position & 0xFFFFFFFFull) << 8) |
           (layer & 0xFF);
  }
  static bool empty(const Elem& e) { return e == kEmpty; }
  static Elem null() { return kEmpty; }
  static TokenAddress decode(const Elem& e) {
    TokenAddress a;
    a.user = UserId(e >> 40);
    a.position = (e >> 8) & 0xFFFFFFFFull;
    a.layer = std::uint32_t(e & 0xFF);
    return a;
  }
};

struct ValueBackend {
  struct Elem {
    std::vector<double> key;    // [H*D]
    std::vector<double> value;  // [H*D]
    bool operator==(const Elem&) const = default;
  };
  static bool empty(const Elem& e) { return e.key.empty(); }
  static Elem null() { return {}; }
};

template <class B>
using Span = std::vector<typename B::Elem>;

/// GPU-tier paged store: L layer planes over one shared slot space. A page id
/// addresses the same slot index in every plane.
template <class B>
class DevicePagedStore : public PageAllocator {
 public:
  using Elem = typename B::Elem;

  DevicePagedStore(std::uint32_t layers, std::uint32_t pages, std::uint32_t page_size)
      : layers_(layers), pages_(pages), page_size_(page_size),
        allocated_(pages, false), planes_(layers) {
    for (auto& p : planes_) p.assign(std::size_t(pages) * page_size, B::null());
    free_list_.reserve(pages);
    for (PageId id = pages; id-- > 0;) free_list_.push_back(id);
  }

  std::size_t free_count() const override { return free_list_.size(); }
  std::uint32_t num_pages() const override { return pages_; }
  bool is_allocated(PageId p) const { return allocated_[p]; }

  PageId allocate() override {
    MTKV_CHECK(!free_list_.empty(), "device store: out of pages");
    PageId id = free_list_.back();
    free_list_.pop_back();
    allocated_[id] = true;
    return id;
  }

  void release(PageId id) override {
    MTKV_CHECK(id < pages_ && allocated_[id], "device store: releasing free page");
    allocated_[id] = false;
    for (auto& plane : planes_)
      for (std::uint32_t t = 0; t < page_size_; ++t)
        plane[std::size_t(id) * page_size_ + t] = B::null();
    free_list_.push_back(id);
  }

  // Workflow step ③: distribute a contiguous span across discrete pages of
  // one layer plane. The last page may be partially covered.
  void scatter(const Span<B>& src, const std::vector<PageId>& dst_pages,
               std::uint32_t layer) {
    MTKV_CHECK(layer < layers_, "scatter: bad layer");
    MTKV_CHECK(src.size() <= std::size_t(dst_pages.size()) * page_size_,
               "scatter: span/page count mismatch");
    MTKV_CHECK(dst_pages.empty() ||
                   src.size() > (dst_pages.size() - 1) * std::size_t(page_size_),
               "scatter: span/page count mismatch");
    for (std::size_t i = 0; i < src.size(); ++i) {
      PageId page = dst_pages[i / page_size_];
      MTKV_CHECK(allocated_[page], "scatter: destination page not allocated");
      planes_[layer][std::size_t(page) * page_size_ + i % page_size_] = src[i];
    }
  }

  // Inverse of scatter: concatenate pages in logical order. `tokens` bounds
  // the read so a trailing partial page is not over-read.
  Span<B> gather(const std::vector<PageId>& src_pages, std::uint32_t layer,
                 std::size_t tokens) const {
    MTKV_CHECK(layer < layers_, "gather: bad layer");
    MTKV_CHECK(tokens <= std::size_t(src_pages.size()) * page_size_,
               "gather: token count exceeds pages");
    Span<B> out;
    out.reserve(tokens);
    for (std::size_t i = 0; i < tokens; ++i) {
      PageId page = src_pages[i / page_size_];
      MTKV_CHECK(page < pages_ && allocated_[page], "gather: unallocated page id");
      out.push_back(planes_[layer][std::size_t(page) * page_size_ + i % page_size_]);
    }
    return out;
  }

  // Alg-style append: write `src` into `pages` starting at token offset
  // `start` (the owner's current device_len), spilling across page boundaries.
  void append(const Span<B>& src, const std::vector<PageId>& pages,
              std::size_t start, std::uint32_t layer) {
    MTKV_CHECK(start + src.size() <= std::size_t(pages.size()) * page_size_,
               "append: insufficient allocated pages");
    for (std::size_t i = 0; i < src.size(); ++i) {
      std::size_t pos = start + i;
      PageId page = pages[pos / page_size_];
      MTKV_CHECK(allocated_[page], "append: destination page not allocated");
      planes_[layer][std::size_t(page) * page_size_ + pos % page_size_] = src[i];
    }
  }

  Elem read(std::uint32_t layer, PageId page, std::uint32_t offset) const {
    MTKV_CHECK(layer < layers_ && page < pages_ && offset < page_size_,
               "device read: out of range");
    return planes_[layer][std::size_t(page) * page_size_ + offset];
  }

 private:
  std::uint32_t layers_, pages_, page_size_;
  std::vector<PageId> free_list_;
  std::vector<bool> allocated_;
  std::vector<std::vector<Elem>> planes_;
};

/// Host-tier chunked store. A chunk holds S_chunk tokens' payload for every
/// layer; chunks of one user form a contiguous prefix.
template <class B>
class HostChunkedStore {
 public:
  struct Chunk {
    std::vector<Span<B>> layers;  // [L][S_chunk]
  };

  HostChunkedStore(std::uint32_t layers, std::uint32_t chunk_size,
                   std::uint64_t capacity_chunks)
      : layers_(layers), chunk_size_(chunk_size), capacity_(capacity_chunks) {}

  std::uint64_t chunk_count(UserId user) const {
    auto it = chunks_.find(user);
    return it == chunks_.end() ? 0 : it->second.size();
  }
  std::uint64_t total_chunks() const { return total_; }

  void write_chunk(UserId user, std::uint64_t index, Chunk chunk) {
    MTKV_CHECK(chunk.layers.size() == layers_, "host write: layer count mismatch");
    for (const auto& s : chunk.layers)
      MTKV_CHECK(s.size() == chunk_size_, "host write: chunk not chunk-sized");
    auto& list = chunks_[user];
    MTKV_CHECK(index == list.size(), "host write: gap in chunk sequence");
    MTKV_CHECK(capacity_ == 0 || total_ < capacity_, "host write: capacity exceeded");
    list.push_back(std::move(chunk));
    ++total_;
  }

  const Chunk& read_chunk(UserId user, std::uint64_t index) const {
    auto it = chunks_.find(user);
    MTKV_CHECK(it != chunks_.end() && index < it->second.size(),
               "host read: beyond persisted range");
    return it->second[index];
  }

 private:
  std::uint32_t layers_, chunk_size_;
  std::uint64_t capacity_;
  std::uint64_t total_ = 0;
  std::map<UserId, std::vector<Chunk>> chunks_;
};

/// Contiguous device staging region for onloaded history, sized N_o pages.
template <class B>
class OnloadBuffer {
 public:
  OnloadBuffer(std::uint32_t layers, std::uint64_t capacity_tokens)
      : capacity_(capacity_tokens), planes_(layers) {}

  std::uint64_t capacity() const { return capacity_; }
  std::uint64_t used() const { return planes_.empty() ? 0 : planes_[0].size(); }

  void reset() {
    for (auto& p : planes_) p.clear();
  }

  // Stage one chunk's payload; returns the token offset of the staged data.
  std::uint64_t stage(const typename HostChunkedStore<B>::Chunk& chunk) {
    std::uint64_t off = used();
    MTKV_CHECK(off + chunk.layers[0].size() <= capacity_,
               "onload buffer: batch exceeds staging capacity");
    for (std::size_t l = 0; l < planes_.size(); ++l)
      planes_[l].insert(planes_[l].end(), chunk.layers[l].begin(),
                        chunk.layers[l].end());
    return off;
  }

  Span<B> slice(std::uint32_t layer, std::uint64_t offset, std::uint64_t count) const {
    MTKV_CHECK(layer < planes_.size() && offset + count <= used(),
               "onload buffer: slice out of range");
    return Span<B>(planes_[layer].begin() + offset,
                   planes_[layer].begin() + offset + count);
  }

 private:
  std::uint64_t capacity_;
  std::vector<Span<B>> planes_;
};

}  // namespace mtkv
