#include "mtkv/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace mtkv {

void GenConfig::validate() const {
  MTKV_CHECK(num_users >= 1, "gen: need at least one user");
  MTKV_CHECK(total_requests >= 1, "gen: need at least one request");
  MTKV_CHECK(min_len <= max_len, "gen: min_len > max_len");
  MTKV_CHECK(mean_final_len <= double(max_len),
             "gen: infeasible config, mean length exceeds cap");
  MTKV_CHECK(mean_final_len >= double(min_len),
             "gen: mean length below minimum");
  MTKV_CHECK(candidates >= 1, "gen: need at least one candidate");
  MTKV_CHECK(gap_log_sigma >= 0 && pareto_alpha > 0 && pareto_scale_ms > 0,
             "gen: distribution parameters out of range");
}

GenConfig preset_kuairand1k() {
  GenConfig g;
  g.num_users = 1000;
  g.total_requests = 20000;
  g.mean_final_len = 6375;
  g.min_len = 1;
  g.max_len = 20000;
  g.gap_log_mu = 9.0;
  g.gap_log_sigma = 1.6;
  g.candidates = 5;
  g.seed = 42;
  return g;
}

GenConfig preset_mt() {
  GenConfig g;
  g.num_users = 2884;
  g.total_requests = 20000;
  g.mean_final_len = 5189;
  g.min_len = 4000;
  g.max_len = 6000;
  g.gap_log_mu = 9.0;
  g.gap_log_sigma = 1.6;
  g.candidates = 5;
  g.seed = 42;
  return g;
}

GenConfig resolve_preset(const std::string& name) {
  if (name == "kuairand1k") return preset_kuairand1k();
  if (name == "mt") return preset_mt();
  throw Error("unknown preset '" + name + "' (expected kuairand1k or mt)");
}

namespace {

double draw_gap_ms(std::mt19937_64& rng, const GenConfig& cfg) {
  if (cfg.family == TailFamily::LogNormal) {
    std::normal_distribution<double> z(0.0, 1.0);
    return std::max(1.0, std::exp(cfg.gap_log_mu + cfg.gap_log_sigma * z(rng)));
  }
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double u = std::max(1e-12, 1.0 - u01(rng));
  return std::max(1.0, cfg.pareto_scale_ms * std::pow(u, -1.0 / cfg.pareto_alpha));
}

// Final length in [min,max] with the configured mean: min + range * U^p.
std::uint64_t draw_final_len(std::mt19937_64& rng, const GenConfig& cfg) {
  if (cfg.max_len == cfg.min_len) return cfg.min_len;
  double range = double(cfg.max_len - cfg.min_len);
  double p = range / (cfg.mean_final_len - double(cfg.min_len)) - 1.0;
  p = std::max(p, 1e-9);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double f = double(cfg.min_len) + range * std::pow(u01(rng), p);
  return std::uint64_t(std::llround(f));
}

}  // namespace

std::vector<Request> generate_trace(const GenConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  // Lifetime history per user, drawn up front so visit counts can follow it.
  std::vector<std::uint64_t> targets(cfg.num_users);
  double tsum = 0;
  for (auto& t : targets) {
    t = draw_final_len(rng, cfg);
    tsum += double(t);
  }

  // Visit counts proportional to history length: interaction sessions are
  // roughly equal-sized, so long histories come from many visits, not from
  // monster single deltas. Pad/trim to the exact request total.
  std::vector<std::uint64_t> visits(cfg.num_users, 1);
  std::uint64_t assigned = 0;
  for (std::uint32_t u = 0; u < cfg.num_users; ++u) {
    visits[u] = std::max<std::uint64_t>(
        1,
        std::uint64_t(std::llround(double(cfg.total_requests) * double(targets[u]) / tsum)));
    assigned += visits[u];
  }
  std::uint32_t cursor = 0;
  while (assigned > cfg.total_requests) {
    if (visits[cursor] > 1) {
      --visits[cursor];
      --assigned;
    }
    cursor = (cursor + 1) % cfg.num_users;
  }
  while (assigned < cfg.total_requests) {
    ++visits[cursor];
    ++assigned;
    cursor = (cursor + 1) % cfg.num_users;
  }

  const double horizon_ms =
      std::exp(cfg.gap_log_mu) * double(cfg.total_requests) / cfg.num_users * 2.0;

  std::vector<Request> trace;
  trace.reserve(cfg.total_requests);
  for (std::uint32_t u = 0; u < cfg.num_users; ++u) {
    std::uint64_t target = targets[u];
    std::uint64_t v = visits[u];

    // Split the lifetime history into per-visit increments.
    std::vector<double> parts(v);
    double psum = 0;
    for (auto& p : parts) {
      p = 0.1 + u01(rng);
      psum += p;
    }
    std::vector<std::uint32_t> deltas(v);
    if (cfg.fixed_delta > 0) {
      std::fill(deltas.begin(), deltas.end(), cfg.fixed_delta);
    } else {
      std::uint64_t acc = 0;
      double cum = 0;
      for (std::uint64_t i = 0; i < v; ++i) {
        cum += parts[i];
        std::uint64_t upto =
            (i + 1 == v) ? target
                         : std::uint64_t(std::llround(double(target) * cum / psum));
        upto = std::clamp(upto, acc, target);
        deltas[i] = std::uint32_t(upto - acc);
        acc = upto;
      }
    }

    double t = u01(rng) * horizon_ms;
    for (std::uint64_t i = 0; i < v; ++i) {
      Request r;
      r.timestamp = std::uint64_t(t);
      r.user = u;
      r.new_token_count = deltas[i];
      r.candidate_count = cfg.candidates;
      if (cfg.vocab > 0) {
        std::uniform_int_distribution<TokenId> tok(0, cfg.vocab - 1);
        r.new_tokens.resize(deltas[i]);
        for (auto& id : r.new_tokens) id = tok(rng);
        r.candidates.resize(cfg.candidates);
        for (auto& id : r.candidates) id = tok(rng);
      }
      trace.push_back(std::move(r));
      t += draw_gap_ms(rng, cfg);
    }
  }

  std::stable_sort(trace.begin(), trace.end(),
                   [](const Request& a, const Request& b) {
                     return a.timestamp < b.timestamp;
                   });
  return trace;
}

std::string trace_to_jsonl(const std::vector<Request>& trace) {
  std::ostringstream out;
  for (const auto& r : trace) {
    nlohmann::json j;
    j["ts"] = r.timestamp;
    j["user"] = r.user;
    j["dn"] = r.delta();
    j["nc"] = r.num_candidates();
    if (!r.new_tokens.empty() || !r.candidates.empty()) {
      j["tokens"] = r.new_tokens;
      j["cands"] = r.candidates;
    }
    out << j.dump() << '\n';
  }
  return out.str();
}

std::vector<Request> trace_from_jsonl(const std::string& text,
                                      const std::string& origin) {
  std::vector<Request> trace;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      Request r;
      r.timestamp = j.at("ts").get<std::uint64_t>();
      r.user = j.at("user").get<UserId>();
      r.new_token_count = j.at("dn").get<std::uint32_t>();
      r.candidate_count = j.at("nc").get<std::uint32_t>();
      if (j.contains("tokens")) r.new_tokens = j["tokens"].get<std::vector<TokenId>>();
      if (j.contains("cands")) r.candidates = j["cands"].get<std::vector<TokenId>>();
      MTKV_CHECK(r.new_tokens.empty() || r.new_tokens.size() == r.new_token_count,
                 "token list length disagrees with dn");
      trace.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw Error(origin + ":" + std::to_string(lineno) +
                  ": malformed trace record: " + e.what());
    }
  }
  std::stable_sort(trace.begin(), trace.end(),
                   [](const Request& a, const Request& b) {
                     return a.timestamp < b.timestamp;
                   });
  return trace;
}

std::vector<Request> load_trace(const std::string& path) {
  std::ifstream f(path);
  MTKV_CHECK(f.good(), "trace: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return trace_from_jsonl(ss.str(), path);
}

void save_trace(const std::vector<Request>& trace, const std::string& path) {
  std::ofstream f(path);
  MTKV_CHECK(f.good(), "trace: cannot write " + path);
  f << trace_to_jsonl(trace);
}

std::vector<std::vector<Request>> batchify(const std::vector<Request>& trace,
                                           std::uint32_t batch_size) {
  MTKV_CHECK(batch_size >= 1, "batchify: batch size must be >= 1");
  std::vector<std::vector<Request>> out;
  for (std::size_t i = 0; i < trace.size(); i += batch_size) {
    std::size_t end = std::min(trace.size(), i + batch_size);
    out.emplace_back(trace.begin() + std::ptrdiff_t(i),
                     trace.begin() + std::ptrdiff_t(end));
  }
  return out;
}

}  // namespace mtkv
