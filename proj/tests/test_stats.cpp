#include <doctest.h>

#include <random>

#include "epitrace/error.hpp"
#include "epitrace/stats.hpp"
#include "support/traces.hpp"

using namespace epitrace;
using namespace epitrace::stats;
using doctest::Approx;

namespace {

// Fractions of k-subsets of n trials (first c successful) containing at
// least one success and containing only successes, by enumeration.
std::pair<double, double> enumerate_subsets(int n, int c, int k) {
  long total = 0, any = 0, all = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (__builtin_popcount(mask) != k) continue;
    ++total;
    const int hits = __builtin_popcount(mask & ((1u << c) - 1));
    any += hits > 0;
    all += hits == k;
  }
  return {static_cast<double>(any) / total, static_cast<double>(all) / total};
}

std::vector<LabelPair> series(std::initializer_list<int> a, std::initializer_list<int> b) {
  std::vector<bool> va, vb;
  for (int x : a) va.push_back(x != 0);
  for (int x : b) vb.push_back(x != 0);
  std::vector<LabelPair> out;
  for (std::size_t i = 0; i < va.size(); ++i) out.push_back({va[i], vb[i]});
  return out;
}

trace::Trace logprob_trace(std::string id, std::string env, std::vector<std::vector<trace::TokenLogprob>> streams) {
  using trace::Role;
  std::vector<testgen::Msg> msgs{{Role::kUser, "task"}};
  for (std::size_t i = 0; i < streams.size(); ++i) msgs.push_back({Role::kAssistant, "a"});
  auto t = testgen::make_trace(std::move(id), msgs, "m", std::move(env));
  for (std::size_t i = 0; i < streams.size(); ++i) t.messages[i + 1].token_logprobs = streams[i];
  return t;
}

}  // namespace

TEST_CASE("pass@k examples") {
  CHECK(pass_at_k({5, 5}, 3) == 1.0);
  CHECK(pass_at_k({5, 0}, 2) == 0.0);
  CHECK(pass_at_k({4, 2}, 2) == Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK_THROWS_AS(pass_at_k({4, 2}, 5), DomainError);
  CHECK_THROWS_AS(pass_at_k({4, 2}, 0), DomainError);
  CHECK_THROWS_AS(pass_at_k({4, 5}, 1), DomainError);
  CHECK_THROWS_AS(pass_at_k({0, 0}, 1), DomainError);
}

TEST_CASE("pass^k examples") {
  for (int k = 1; k <= 5; ++k) CHECK(pass_hat_k({5, 5}, k) == 1.0);
  CHECK(pass_hat_k({4, 2}, 2) == Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(pass_hat_k({4, 2}, 3) == 0.0);
  CHECK(pass_hat_k({4, 2}, 2, PassHatEstimator::kPlugIn) == Approx(0.25));
  CHECK_THROWS_AS(pass_hat_k({4, 2}, 5), DomainError);
}

TEST_CASE("estimators match subset enumeration") {
  for (int n = 1; n <= 12; ++n)
    for (int c = 0; c <= n; ++c)
      for (int k = 1; k <= n; ++k) {
        const auto [any, all] = enumerate_subsets(n, c, k);
        CHECK(pass_at_k({n, c}, k) == Approx(any).epsilon(1e-12));
        CHECK(pass_hat_k({n, c}, k) == Approx(all).epsilon(1e-12));
        CHECK(pass_at_k({n, c}, k) + binomial(n - c, k) / binomial(n, k) == Approx(1.0).epsilon(1e-12));
      }
}

TEST_CASE("estimator monotonicity") {
  for (int n = 1; n <= 30; ++n)
    for (int c = 0; c <= n; ++c)
      for (int k = 1; k <= n; ++k) {
        if (k < n) {
          CHECK(pass_at_k({n, c}, k + 1) >= pass_at_k({n, c}, k) - 1e-15);
          CHECK(pass_hat_k({n, c}, k + 1) <= pass_hat_k({n, c}, k) + 1e-15);
        }
        if (c < n) {
          CHECK(pass_at_k({n, c + 1}, k) >= pass_at_k({n, c}, k) - 1e-15);
          CHECK(pass_hat_k({n, c + 1}, k) >= pass_hat_k({n, c}, k) - 1e-15);
        }
      }
}

TEST_CASE("large trial counts stay finite") {
  const double p = pass_at_k({10000, 37}, 500);
  CHECK(std::isfinite(p));
  CHECK(p > 0.0);
  CHECK(p <= 1.0);
  CHECK(pass_hat_k({10000, 9990}, 100) > 0.0);
  CHECK(pass_at_k({10000, 10000}, 10000) == 1.0);
}

TEST_CASE("binomials") {
  CHECK(binomial_exact(64, 32) == 1832624140942590534ULL);
  CHECK(binomial_exact(10, 11) == 0);
  CHECK(binomial(10, 3) == 120.0);
  CHECK(binomial(100, 50) == Approx(1.0089134454556419e29).epsilon(1e-10));
}

TEST_CASE("agreement worked example") {
  const auto s = series({1, 1, 1, 0}, {1, 1, 0, 0});
  const auto a = agreement(s);
  CHECK(a.items == 4);
  CHECK(a.percent_agreement == Approx(0.75));
  CHECK(a.expected_agreement == Approx(0.5));
  REQUIRE(a.kappa);
  CHECK(*a.kappa == Approx(0.5));
  CHECK(a.pabak == Approx(0.5));
  CHECK(percent_agreement(s) == Approx(0.75));
  CHECK(*cohen_kappa(s) == Approx(0.5));
  CHECK(pabak(s) == Approx(0.5));
}

TEST_CASE("agreement edge cases") {
  const auto same = series({1, 0, 1}, {1, 0, 1});
  CHECK(percent_agreement(same) == 1.0);
  CHECK(pabak(same) == 1.0);
  CHECK(*cohen_kappa(same) == Approx(1.0));
  // Both raters constant and equal: chance agreement is 1.
  CHECK_FALSE(cohen_kappa(series({1, 1}, {1, 1})));
  CHECK_THROWS_AS(pabak(std::vector<LabelPair>{}), DomainError);
  CHECK(pabak_from_agreement(0.988) == Approx(0.976));
  const bool a[] = {true, false};
  const bool b[] = {true};
  CHECK_THROWS_AS(pair_labels(a, b), DomainError);
}

TEST_CASE("agreement identities on random series") {
  std::mt19937_64 rng(1);
  for (int round = 0; round < 300; ++round) {
    std::vector<LabelPair> s(1 + rng() % 40);
    for (auto& p : s) p = {static_cast<bool>(rng() & 1), static_cast<bool>(rng() & 1)};
    CHECK(pabak(s) == Approx(2 * percent_agreement(s) - 1).epsilon(1e-12));
  }
  // Uniform marginals on both sides make kappa and PABAK coincide.
  const auto uniform = series({1, 1, 0, 0, 1, 0}, {1, 0, 0, 1, 1, 0});
  CHECK(agreement(uniform).expected_agreement == Approx(0.5));
  CHECK(*cohen_kappa(uniform) == Approx(pabak(uniform)));
}

TEST_CASE("log-probability pooling") {
  using trace::GroupField;
  const std::vector<GroupField> by_env{GroupField::kEnvironment};
  SUBCASE("simple mean") {
    const std::vector<trace::Trace> ts{logprob_trace("a", "x", {{{"a", -0.1}, {"b", -0.3}}})};
    CHECK(*mean_logprob(ts, by_env).at("x") == Approx(-0.2).epsilon(1e-15));
  }
  SUBCASE("special zero tokens are dropped") {
    const std::vector<trace::Trace> ts{logprob_trace("a", "x", {{{"a", -0.2}, {"<|eot|>", 0.0, true}}})};
    const auto pools = pool_logprobs(ts, by_env);
    CHECK(*pools.at("x").mean == -0.2);
    CHECK(pools.at("x").excluded == 1);
    CHECK(pools.at("x").tokens == 1);
  }
  SUBCASE("non-special zero and special non-zero tokens count") {
    const std::vector<trace::Trace> ts{
        logprob_trace("a", "x", {{{"a", 0.0}, {"<s>", -0.5, true}, {"b", -0.25}, {"<e>", 0.0, true}}})};
    CHECK(*mean_logprob(ts, by_env).at("x") == -0.25);
  }
  SUBCASE("environments pool separately across messages and trials") {
    const std::vector<trace::Trace> ts{logprob_trace("a", "x", {{{"a", -0.5}}, {{"b", -0.25}, {"c", -0.75}}}),
                                       logprob_trace("b", "x", {{{"d", -1.5}}}),
                                       logprob_trace("c", "y", {{{"e", -0.125}, {"f", -0.375}}})};
    const auto means = mean_logprob(ts, by_env);
    CHECK(*means.at("x") == -0.75);
    CHECK(*means.at("y") == -0.25);
    const auto pools = pool_logprobs(ts, by_env);
    CHECK(pools.at("x").traces == 2);
    CHECK(pools.at("x").tokens == 4);
  }
  SUBCASE("group without retained tokens is absent") {
    std::vector<trace::Trace> ts{logprob_trace("a", "x", {{{"<e>", 0.0, true}}}),
                                 logprob_trace("b", "y", {{{"a", -1.0}}})};
    auto no_stream = testgen::make_trace("c", {{trace::Role::kAssistant, "a"}}, "m", "z");
    ts.push_back(no_stream);
    const auto means = mean_logprob(ts, by_env);
    CHECK_FALSE(means.at("x").has_value());
    CHECK_FALSE(means.at("z").has_value());
    CHECK(*means.at("y") == -1.0);
    CHECK(pool_logprobs(ts, by_env).at("z").messages_without_logprobs == 1);
  }
  SUBCASE("observation and user streams are ignored") {
    auto t = logprob_trace("a", "x", {{{"a", -1.0}}});
    t.messages[0].token_logprobs = std::vector<trace::TokenLogprob>{{"u", -9.0}};
    CHECK(*mean_logprob(std::vector<trace::Trace>{t}, by_env).at("x") == -1.0);
  }
}

TEST_CASE("pooled mean ignores ordering") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> lp(-5.0, 0.0);
  std::vector<trace::Trace> ts;
  for (int i = 0; i < 6; ++i) {
    std::vector<std::vector<trace::TokenLogprob>> streams(3);
    for (auto& s : streams)
      for (int j = 0; j < 10; ++j) s.push_back({"t", lp(rng)});
    ts.push_back(logprob_trace("t" + std::to_string(i), "x", streams));
  }
  const std::vector<trace::GroupField> by{trace::GroupField::kEnvironment};
  const double base = *mean_logprob(ts, by).at("x");
  for (int round = 0; round < 10; ++round) {
    std::shuffle(ts.begin(), ts.end(), rng);
    for (auto& t : ts) std::shuffle(t.messages.begin() + 1, t.messages.end(), rng);
    CHECK(*mean_logprob(ts, by).at("x") == Approx(base).epsilon(1e-12));
  }
}
