#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "epitrace/irt2pl.hpp"

namespace testgen {

struct Synthetic {
  std::vector<double> a;
  std::vector<double> b;
  std::vector<double> theta;
  epitrace::irt::ResponseMatrix data;
};

// Responses drawn from the 2PL model with a in [0.5, 2], b and theta in
// [-2, 2]. Respondents are spread over `models` x `environments` cells.
inline Synthetic simulate_2pl(std::mt19937_64& rng, std::size_t items, std::size_t respondents,
                              std::size_t models = 6, std::size_t environments = 5) {
  std::uniform_real_distribution<double> ua(0.5, 2.0);
  std::uniform_real_distribution<double> ub(-2.0, 2.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<epitrace::irt::Respondent> rs;
  for (std::size_t j = 0; j < respondents; ++j) {
    rs.push_back({"model" + std::to_string(j % models), "env" + std::to_string((j / models) % environments)});
  }
  std::vector<epitrace::irt::Item> is;
  for (std::size_t i = 0; i < items; ++i) is.push_back({"q" + std::to_string(i), "knowledge"});
  Synthetic s{{}, {}, {}, epitrace::irt::ResponseMatrix(rs, is)};
  for (std::size_t i = 0; i < items; ++i) {
    s.a.push_back(ua(rng));
    s.b.push_back(ub(rng));
  }
  for (std::size_t j = 0; j < respondents; ++j) s.theta.push_back(ub(rng));
  for (std::size_t j = 0; j < respondents; ++j) {
    for (std::size_t i = 0; i < items; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-s.a[i] * (s.theta[j] - s.b[i])));
      s.data.set(j, i, u01(rng) < p ? 1 : 0);
    }
  }
  return s;
}

// Average ranks, ties sharing the mean rank.
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = (static_cast<double>(i + j) / 2.0) + 1.0;
    i = j + 1;
  }
  return r;
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace testgen
