#include "epitrace/stats.hpp"

#include <cmath>

#include "epitrace/error.hpp"

namespace epitrace::stats {

void check(const TrialTally& tally) {
  if (tally.n < 1) throw DomainError("trial count must be at least 1");
  if (tally.c < 0 || tally.c > tally.n) {
    throw DomainError("success count " + std::to_string(tally.c) + " outside [0, " + std::to_string(tally.n) + "]");
  }
}

namespace {

void check_k(const TrialTally& tally, std::int64_t k) {
  check(tally);
  if (k < 1 || k > tally.n) {
    throw DomainError("k = " + std::to_string(k) + " outside [1, " + std::to_string(tally.n) + "]");
  }
}

void check_series(std::span<const LabelPair> series) {
  if (series.empty()) throw DomainError("agreement needs at least one labeled item");
}

}  // namespace

std::uint64_t binomial_exact(std::int64_t n, std::int64_t k) {
  if (n < 0 || n > 64) throw DomainError("exact binomial supports 0 <= n <= 64");
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  unsigned __int128 value = 1;
  for (std::int64_t i = 1; i <= k; ++i) value = value * static_cast<unsigned>(n - k + i) / static_cast<unsigned>(i);
  return static_cast<std::uint64_t>(value);
}

double binomial(std::int64_t n, std::int64_t k) {
  if (n < 0) throw DomainError("binomial needs n >= 0");
  if (k < 0 || k > n) return 0.0;
  if (n <= 64) return static_cast<double>(binomial_exact(n, k));
  const auto nn = static_cast<double>(n);
  const auto kk = static_cast<double>(k);
  return std::exp(std::lgamma(nn + 1) - std::lgamma(kk + 1) - std::lgamma(nn - kk + 1));
}

double pass_at_k(const TrialTally& tally, std::int64_t k) {
  check_k(tally, k);
  if (tally.n - tally.c < k) return 1.0;
  // C(n-c, k) / C(n, k) = prod_{i=n-c+1}^{n} (1 - k / i)
  double miss = 1.0;
  for (std::int64_t i = tally.n - tally.c + 1; i <= tally.n; ++i) {
    miss *= 1.0 - static_cast<double>(k) / static_cast<double>(i);
  }
  return 1.0 - miss;
}

double pass_hat_k(const TrialTally& tally, std::int64_t k, PassHatEstimator estimator) {
  check_k(tally, k);
  if (estimator == PassHatEstimator::kPlugIn) {
    return std::pow(static_cast<double>(tally.c) / static_cast<double>(tally.n), static_cast<double>(k));
  }
  if (tally.c < k) return 0.0;
  double p = 1.0;
  for (std::int64_t i = 0; i < k; ++i) p *= static_cast<double>(tally.c - i) / static_cast<double>(tally.n - i);
  return p;
}

double percent_agreement(std::span<const LabelPair> series) {
  check_series(series);
  std::size_t same = 0;
  for (const auto& p : series) same += p.a == p.b ? 1 : 0;
  return static_cast<double>(same) / static_cast<double>(series.size());
}

Agreement agreement(std::span<const LabelPair> series) {
  check_series(series);
  Agreement out;
  out.items = series.size();
  out.percent_agreement = percent_agreement(series);
  double a_true = 0;
  double b_true = 0;
  for (const auto& p : series) {
    a_true += p.a ? 1 : 0;
    b_true += p.b ? 1 : 0;
  }
  const auto n = static_cast<double>(series.size());
  const double pa = a_true / n;
  const double pb = b_true / n;
  out.expected_agreement = pa * pb + (1 - pa) * (1 - pb);
  if (out.expected_agreement < 1.0) {
    out.kappa = (out.percent_agreement - out.expected_agreement) / (1.0 - out.expected_agreement);
  }
  out.pabak = pabak_from_agreement(out.percent_agreement);
  return out;
}

std::optional<double> cohen_kappa(std::span<const LabelPair> series) { return agreement(series).kappa; }

double pabak(std::span<const LabelPair> series) { return pabak_from_agreement(percent_agreement(series)); }

double pabak_from_agreement(double p) { return 2.0 * p - 1.0; }

std::vector<LabelPair> pair_labels(std::span<const bool> a, std::span<const bool> b) {
  if (a.size() != b.size()) {
    throw DomainError("label series differ in length (" + std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()) + ")");
  }
  std::vector<LabelPair> out;
  out.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out.push_back(LabelPair{a[i], b[i]});
  return out;
}

std::map<std::string, TokenPool> pool_logprobs(std::span<const trace::Trace> traces,
                                               std::span<const trace::GroupField> group_by) {
  std::map<std::string, TokenPool> pools;
  std::map<std::string, double> sums;
  for (const auto& t : traces) {
    const auto label = trace::group_label(t, group_by);
    auto& pool = pools[label];
    auto& sum = sums[label];
    ++pool.traces;
    for (const auto& m : t.messages) {
      if (m.role != trace::Role::kAssistant) continue;
      if (!m.token_logprobs) {
        ++pool.messages_without_logprobs;
        continue;
      }
      for (const auto& tok : *m.token_logprobs) {
        if ((tok.is_special && tok.logprob == 0.0) || !std::isfinite(tok.logprob)) {
          ++pool.excluded;
          continue;
        }
        sum += tok.logprob;
        ++pool.tokens;
        ++pool.tokens_per_environment[t.environment];
      }
    }
  }
  for (auto& [label, pool] : pools) {
    if (pool.tokens > 0) pool.mean = sums[label] / static_cast<double>(pool.tokens);
  }
  return pools;
}

std::map<std::string, std::optional<double>> mean_logprob(std::span<const trace::Trace> traces,
                                                          std::span<const trace::GroupField> group_by) {
  std::map<std::string, std::optional<double>> out;
  for (const auto& [label, pool] : pool_logprobs(traces, group_by)) out.emplace(label, pool.mean);
  return out;
}

}  // namespace epitrace::stats
