#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtkv {

using UserId = std::uint32_t;
using TokenId = std::uint32_t;
using PageId = std::uint32_t;

inline constexpr PageId kInvalidPage = UINT32_MAX;

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define MTKV_CHECK(cond, msg)                      \
  do {                                             \
    if (!(cond)) throw ::mtkv::Error(msg);         \
  } while (0)

/// Structural constants shared by every component. Defaults follow the
/// 8-layer HSTU serving configuration (page 32 tokens, chunk 1024 tokens,
/// 40,960 primary pages).
struct KVConfig {
  std::uint32_t num_layers = 8;       // L
  std::uint32_t num_heads = 4;        // H
  std::uint32_t head_dim = 128;       // D
  std::uint32_t page_size = 32;       // S_page, tokens
  std::uint32_t chunk_size = 1024;    // S_chunk, tokens
  std::uint32_t device_pages = 40960; // N_pages
  std::uint32_t onload_pages = 10008; // N_o
  std::uint32_t bytes_per_element = 2;
  std::uint64_t offload_quota = 8192;   // tokens in flight
  std::uint64_t host_capacity = 0;      // chunks, 0 = unbounded

  std::uint32_t hidden() const { return num_heads * head_dim; }
  std::uint32_t pages_per_chunk() const { return chunk_size / page_size; }

  // Bytes of K+V state for one token across all layers.
  std::uint64_t token_kv_bytes() const {
    return std::uint64_t(num_layers) * 2 * num_heads * head_dim * bytes_per_element;
  }

  void validate() const;
};

// Parses a plain key=value file ('#' starts a comment). Unknown keys are an
// error; missing keys keep their defaults.
KVConfig load_config(const std::string& path);
KVConfig parse_config_text(const std::string& text, const std::string& origin);

/// One inference request as it appears in a trace.
struct Request {
  std::uint64_t timestamp = 0;       // ms
  UserId user = 0;
  std::vector<TokenId> new_tokens;   // Δ, ids in value mode
  std::vector<TokenId> candidates;   // N ≥ 1 ids in value mode
  // Tag mode carries counts only; ids above are left empty.
  std::uint32_t new_token_count = 0;
  std::uint32_t candidate_count = 0;

  std::uint32_t delta() const {
    return new_tokens.empty() ? new_token_count
                              : std::uint32_t(new_tokens.size());
  }
  std::uint32_t num_candidates() const {
    return candidates.empty() ? candidate_count
                              : std::uint32_t(candidates.size());
  }
};

/// Per-user bookkeeping shared between the manager and the stores.
struct SequenceState {
  std::uint64_t total_len = 0;      // lifetime history P
  std::uint64_t device_len = 0;     // tokens materialized on device
  std::uint64_t persisted_len = 0;  // whole-chunk prefix on host
  bool locked = false;
  std::uint64_t last_access = 0;    // logical request counter
};

/// Identity of one stored K/V element, used by the tag backend to verify
/// data movement without numeric payloads.
struct TokenAddress {
  UserId user = 0;
  std::uint64_t position = 0;  // token index in the user's history
  std::uint32_t layer = 0;
  enum class Kind : std::uint8_t { Key, Value };
  Kind kind = Kind::Key;

  bool operator==(const TokenAddress&) const = default;
};

inline std::uint64_t pages_needed(std::uint64_t len, std::uint32_t page_size) {
  MTKV_CHECK(page_size >= 1, "pages_needed: page size must be >= 1");
  return (len + page_size - 1) / page_size;
}

inline std::uint64_t persisted_prefix(std::uint64_t len, std::uint32_t chunk_size) {
  MTKV_CHECK(chunk_size >= 1, "persisted_prefix: chunk size must be >= 1");
  return (len / chunk_size) * chunk_size;
}

}  // namespace mtkv
