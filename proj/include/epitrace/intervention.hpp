#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "epitrace/error.hpp"
#include "epitrace/trace.hpp"

namespace epitrace::intervention {

enum class PoolKind { kSuccess, kFailed };

std::string_view to_string(PoolKind kind);
std::optional<PoolKind> parse_pool_kind(std::string_view text);

struct InterventionSpec {
  PoolKind kind = PoolKind::kSuccess;
  int k = 1;  // non-zero; negative counts from the end
  std::uint64_t seed = 0;
};

// Keeps the first k items (k > 0) or all but the last |k| (k < 0).
// Throws DomainError when k is zero or the list is too short.
template <typename T>
std::vector<T> slice(std::span<const T> items, int k) {
  const auto n = static_cast<long long>(items.size());
  if (k == 0) throw DomainError("slice needs a non-zero k");
  if (k > 0 && n < k) {
    throw DomainError("cannot take " + std::to_string(k) + " of " + std::to_string(n) + " turns");
  }
  if (k < 0 && n <= -static_cast<long long>(k)) {
    throw DomainError("cannot drop " + std::to_string(-k) + " of " + std::to_string(n) + " turns");
  }
  const auto len = k > 0 ? k : n + k;
  return std::vector<T>(items.begin(), items.begin() + len);
}

// A trace admits step k when it has at least k assistant turns (k > 0) or
// more than |k| of them (k < 0).
bool eligible(const trace::Trace& trace, int k);
std::vector<const trace::Trace*> eligible_pool(std::span<const trace::Trace* const> pool, int k);

// Uniform draw determined by the seed. Throws SamplingError naming
// `context` when the pool is empty.
const trace::Trace& sample_trace(std::span<const trace::Trace* const> pool, std::uint64_t seed,
                                 std::string_view context = {});

struct RegistryKey {
  std::string environment;
  std::string agent;
  std::string task_id;

  auto operator<=>(const RegistryKey&) const = default;
};

// "model" or "model/scaffold".
std::string agent_of(const trace::Trace& trace);
RegistryKey key_of(const trace::Trace& trace);
std::string to_string(const RegistryKey& key);

struct RegistryOptions {
  double success_threshold = 1.0;  // outcome_score at or above counts as success
  double min_success_rate = 0.2;
  double max_success_rate = 0.8;
};

struct PoolEntry {
  std::size_t trials = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;
  bool pooled = false;  // baseline rate inside the admitted band
  std::vector<std::string> success_traces;
  std::vector<std::string> failed_traces;
};

class TraceRegistry {
 public:
  static TraceRegistry build(const trace::TraceCorpus& corpus, const RegistryOptions& options = {});
  // Restores a persisted registry; every id must exist in `corpus` and match
  // its key, otherwise ValidationError.
  static TraceRegistry from_json(const nlohmann::json& doc, const trace::TraceCorpus& corpus);

  const RegistryOptions& options() const noexcept { return options_; }
  const std::map<RegistryKey, PoolEntry>& entries() const noexcept { return entries_; }
  std::vector<RegistryKey> pooled_keys() const;

  // Traces of one pool; empty when the key is unknown or was not pooled.
  std::vector<const trace::Trace*> pool(const RegistryKey& key, PoolKind kind) const;

  // Eligible pool for the spec, then a seeded draw.
  const trace::Trace& sample(const RegistryKey& key, const InterventionSpec& spec) const;

  nlohmann::ordered_json to_json() const;

 private:
  const trace::TraceCorpus* corpus_ = nullptr;
  RegistryOptions options_;
  std::map<RegistryKey, PoolEntry> entries_;
};

// Runs one tool call and returns the observation text.
class ToolExecutor {
 public:
  virtual ~ToolExecutor() = default;
  // Throws InterventionError when the call cannot be executed.
  virtual std::string execute(const trace::ToolCall& call) = 0;
};

// Returns the observations recorded in `source`, in order. The n-th call of an
// assistant turn receives the n-th observation that follows the turn, or an
// empty string when the source recorded fewer.
class ReplayExecutor final : public ToolExecutor {
 public:
  explicit ReplayExecutor(const trace::Trace& source);
  std::string execute(const trace::ToolCall& call) override;

 private:
  struct Recorded {
    std::string tool;
    std::string observation;
  };
  std::vector<Recorded> recorded_;
  std::size_t next_ = 0;
};

// POSTs {"tool", "arguments"} to <base_url>/execute and expects
// {"observation": ...} or {"error": ...}.
std::unique_ptr<ToolExecutor> make_http_executor(const std::string& base_url,
                                                 std::chrono::milliseconds timeout = std::chrono::seconds(60));

struct SeedHistory {
  std::string source_trace_id;
  InterventionSpec spec;
  std::vector<trace::Message> messages;  // u0, then turns with their observations
  double continuation_temperature = 0.7;
};

SeedHistory build_seed_history(const trace::Trace& source, const InterventionSpec& spec, ToolExecutor& executor);

// Linear scan of the ordering rules; returns the first violation, if any.
std::optional<std::string> check_interleaving(const SeedHistory& history);

// Trace document for the seeded history with an extra "intervention" object.
nlohmann::ordered_json to_json(const SeedHistory& history, const trace::Trace& source);

}  // namespace epitrace::intervention
