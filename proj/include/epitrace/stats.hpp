#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "epitrace/trace.hpp"

namespace epitrace::stats {

struct TrialTally {
  std::int64_t n = 0;  // trials
  std::int64_t c = 0;  // successes
};

// Throws DomainError unless n >= 1 and 0 <= c <= n.
void check(const TrialTally& tally);

// C(n, k) as a double. Exact for n <= 64; log-gamma above. Zero when k > n.
double binomial(std::int64_t n, std::int64_t k);
// Exact value for n <= 64; throws DomainError for larger n.
std::uint64_t binomial_exact(std::int64_t n, std::int64_t k);

// 1 - C(n-c, k) / C(n, k). Throws DomainError unless 1 <= k <= n.
double pass_at_k(const TrialTally& tally, std::int64_t k);

enum class PassHatEstimator {
  kHypergeometric,  // C(c, k) / C(n, k)
  kPlugIn,          // (c / n)^k
};

double pass_hat_k(const TrialTally& tally, std::int64_t k,
                  PassHatEstimator estimator = PassHatEstimator::kHypergeometric);

// One item judged by two raters; true means "correct".
struct LabelPair {
  bool a = false;
  bool b = false;
};

struct Agreement {
  std::size_t items = 0;
  double percent_agreement = 0.0;
  double expected_agreement = 0.0;
  std::optional<double> kappa;  // unset when expected agreement is 1
  double pabak = 0.0;
};

// Each throws DomainError on an empty series.
double percent_agreement(std::span<const LabelPair> series);
std::optional<double> cohen_kappa(std::span<const LabelPair> series);
double pabak(std::span<const LabelPair> series);
Agreement agreement(std::span<const LabelPair> series);

// Prevalence- and bias-adjusted kappa from an observed agreement rate.
double pabak_from_agreement(double percent_agreement);

// Pairs two equal-length label vectors; throws DomainError on length mismatch.
std::vector<LabelPair> pair_labels(std::span<const bool> a, std::span<const bool> b);

struct TokenPool {
  std::optional<double> mean;  // unset when no token survives filtering
  std::size_t tokens = 0;
  std::size_t excluded = 0;
  std::size_t traces = 0;
  std::size_t messages_without_logprobs = 0;
  std::map<std::string, std::size_t> tokens_per_environment;
};

// Pools top-1 token log-probabilities over every assistant message of the
// traces in each group and averages them. Special tokens with a log-prob of
// exactly zero and non-finite values are dropped.
std::map<std::string, TokenPool> pool_logprobs(std::span<const trace::Trace> traces,
                                               std::span<const trace::GroupField> group_by);

std::map<std::string, std::optional<double>> mean_logprob(std::span<const trace::Trace> traces,
                                                          std::span<const trace::GroupField> group_by);

}  // namespace epitrace::stats
