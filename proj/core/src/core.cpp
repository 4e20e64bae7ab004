#include "mtkv/core.hpp"

#include <fstream>
#include <sstream>

namespace mtkv {

void KVConfig::validate() const {
  MTKV_CHECK(page_size >= 1, "config: page_size must be >= 1");
  MTKV_CHECK(chunk_size >= page_size, "config: chunk_size must be >= page_size");
  MTKV_CHECK(chunk_size % page_size == 0,
             "config: chunk_size must be a multiple of page_size");
  MTKV_CHECK(device_pages >= 1, "config: device_pages must be >= 1");
  MTKV_CHECK(offload_quota >= chunk_size,
             "config: offload_quota must admit at least one chunk");
  MTKV_CHECK(num_layers >= 1 && num_heads >= 1 && head_dim >= 1,
             "config: model dimensions must be positive");
  MTKV_CHECK(bytes_per_element >= 1, "config: bytes_per_element must be >= 1");
}

static std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

KVConfig parse_config_text(const std::string& text, const std::string& origin) {
  KVConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    MTKV_CHECK(eq != std::string::npos,
               origin + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    std::uint64_t n = 0;
    try {
      n = std::stoull(val);
    } catch (const std::exception&) {
      throw Error(origin + ":" + std::to_string(lineno) + ": bad number '" + val + "'");
    }
    if (key == "num_layers") cfg.num_layers = std::uint32_t(n);
    else if (key == "num_heads") cfg.num_heads = std::uint32_t(n);
    else if (key == "head_dim") cfg.head_dim = std::uint32_t(n);
    else if (key == "page_size") cfg.page_size = std::uint32_t(n);
    else if (key == "chunk_size") cfg.chunk_size = std::uint32_t(n);
    else if (key == "device_pages") cfg.device_pages = std::uint32_t(n);
    else if (key == "onload_pages") cfg.onload_pages = std::uint32_t(n);
    else if (key == "bytes_per_element") cfg.bytes_per_element = std::uint32_t(n);
    else if (key == "offload_quota") cfg.offload_quota = n;
    else if (key == "host_capacity") cfg.host_capacity = n;
    else
      throw Error(origin + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

KVConfig load_config(const std::string& path) {
  std::ifstream f(path);
  MTKV_CHECK(f.good(), "config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), path);
}

}  // namespace mtkv
