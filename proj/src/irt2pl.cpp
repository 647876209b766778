#include "epitrace/irt2pl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "epitrace/error.hpp"

namespace epitrace::irt {

namespace {

// log(1 + e^z) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

template <typename Key>
std::size_t intern(std::vector<Key>& list, const Key& key) {
  const auto it = std::find(list.begin(), list.end(), key);
  if (it != list.end()) return static_cast<std::size_t>(it - list.begin());
  list.push_back(key);
  return list.size() - 1;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(field));
      field.clear();
    } else {
      field += c;
    }
  }
  fields.push_back(trim(field));
  return fields;
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (const double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

ResponseMatrix::ResponseMatrix(std::vector<Respondent> respondents, std::vector<Item> items)
    : respondents_(std::move(respondents)),
      items_(std::move(items)),
      y_(respondents_.size() * items_.size(), kMissing) {
  for (const auto& r : respondents_) {
    model_index_.push_back(intern(models_, r.model));
    environment_index_.push_back(intern(environments_, r.environment));
  }
}

void ResponseMatrix::set(std::size_t respondent, std::size_t item, std::int8_t value) {
  if (value != 0 && value != 1 && value != kMissing) {
    throw DomainError("response must be 0, 1 or missing, got " + std::to_string(value));
  }
  y_.at(respondent * items_.size() + item) = value;
}

void ResponseMatrix::check() const {
  if (respondents_.size() < 2) throw DomainError("an IRT fit needs at least 2 respondents");
  if (items_.size() < 2) throw DomainError("an IRT fit needs at least 2 items");
}

std::vector<ResponseRow> read_responses_csv(std::istream& in) {
  std::string line;
  std::vector<ResponseRow> rows;
  if (!std::getline(in, line)) return rows;
  const auto header = split_csv_line(line);
  const std::array<std::string_view, 5> names = {"respondent_model", "respondent_environment", "item_id", "item_set",
                                                 "outcome"};
  std::array<std::size_t, 5> col{};
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto it = std::find(header.begin(), header.end(), names[k]);
    if (it == header.end()) throw ParseError(std::string(names[k]), "missing column in response header");
    col[k] = static_cast<std::size_t>(it - header.begin());
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() < header.size()) {
      throw ParseError("line " + std::to_string(line_no), "expected " + std::to_string(header.size()) + " fields");
    }
    ResponseRow row{f[col[0]], f[col[1]], f[col[2]], f[col[3]], std::nullopt};
    const auto& outcome = f[col[4]];
    if (outcome == "1") {
      row.outcome = 1;
    } else if (outcome == "0") {
      row.outcome = 0;
    } else if (!(outcome.empty() || outcome == "NA" || outcome == "missing")) {
      throw ParseError("line " + std::to_string(line_no) + ".outcome", "expected 0, 1 or empty, got '" + outcome + "'");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<ResponseRow> load_responses_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open response file " + path.string());
  return read_responses_csv(in);
}

ResponseMatrix build_matrix(std::span<const ResponseRow> rows, std::string_view item_set) {
  std::vector<Respondent> respondents;
  std::vector<std::string> item_ids;
  std::vector<Item> items;
  for (const auto& r : rows) {
    if (!item_set.empty() && r.item_set != item_set) continue;
    intern(respondents, Respondent{r.model, r.environment});
    if (std::find(item_ids.begin(), item_ids.end(), r.item_id) == item_ids.end()) {
      item_ids.push_back(r.item_id);
      items.push_back(Item{r.item_id, r.item_set});
    }
  }
  ResponseMatrix m(respondents, items);
  std::vector<bool> seen(respondents.size() * items.size(), false);
  for (const auto& r : rows) {
    if (!item_set.empty() && r.item_set != item_set) continue;
    const auto i = intern(respondents, Respondent{r.model, r.environment});
    const auto j = intern(item_ids, r.item_id);
    const std::int8_t v = r.outcome ? static_cast<std::int8_t>(*r.outcome) : kMissing;
    if (seen[i * items.size() + j] && m.at(i, j) != v) {
      throw ValidationError("conflicting responses for " + r.model + "/" + r.environment + " on item " + r.item_id);
    }
    seen[i * items.size() + j] = true;
    m.set(i, j, v);
  }
  return m;
}

Params Params::zeros(const ResponseMatrix& data) {
  Params p;
  p.log_a.assign(data.item_count(), 0.0);
  p.b.assign(data.item_count(), 0.0);
  p.theta.assign(data.respondent_count(), 0.0);
  p.mu.assign(data.models().size(), 0.0);
  p.nu.assign(data.environments().size(), 0.0);
  return p;
}

std::vector<double> Params::flatten() const {
  std::vector<double> out;
  out.reserve(log_a.size() + b.size() + theta.size() + mu.size() + nu.size());
  for (const auto* v : {&log_a, &b, &theta, &mu, &nu}) out.insert(out.end(), v->begin(), v->end());
  return out;
}

Params Params::unflatten(std::span<const double> flat, const Params& shape) {
  Params p;
  std::size_t at = 0;
  auto take = [&](std::vector<double>& dst, std::size_t n) {
    if (at + n > flat.size()) throw DomainError("parameter vector too short");
    dst.assign(flat.begin() + static_cast<std::ptrdiff_t>(at), flat.begin() + static_cast<std::ptrdiff_t>(at + n));
    at += n;
  };
  take(p.log_a, shape.log_a.size());
  take(p.b, shape.b.size());
  take(p.theta, shape.theta.size());
  take(p.mu, shape.mu.size());
  take(p.nu, shape.nu.size());
  if (at != flat.size()) throw DomainError("parameter vector too long");
  return p;
}

double irt_prob(double a, double b, double theta) {
  if (!(a > 0)) throw DomainError("discrimination must be positive");
  return sigmoid(a * (theta - b));
}

namespace {

void check_shape(const Params& p, const ResponseMatrix& data) {
  if (p.log_a.size() != data.item_count() || p.b.size() != data.item_count() ||
      p.theta.size() != data.respondent_count() || p.mu.size() != data.models().size() ||
      p.nu.size() != data.environments().size()) {
    throw DomainError("parameter shapes do not match the response matrix");
  }
}

}  // namespace

double neg_log_likelihood(const Params& p, const ResponseMatrix& data) {
  check_shape(p, data);
  double nll = 0.0;
  for (std::size_t j = 0; j < data.respondent_count(); ++j) {
    for (std::size_t i = 0; i < data.item_count(); ++i) {
      const auto y = data.at(j, i);
      if (y == kMissing) continue;
      const double z = std::exp(p.log_a[i]) * (p.theta[j] - p.b[i]);
      nll += softplus(z) - (y == 1 ? z : 0.0);
    }
  }
  return nll;
}

double neg_log_posterior(const Params& p, const ResponseMatrix& data, const IrtConfig& config) {
  double f = neg_log_likelihood(p, data);
  const double va = config.sd_log_a * config.sd_log_a;
  const double vb = config.sd_b * config.sd_b;
  const double vt = config.sigma_theta * config.sigma_theta;
  for (std::size_t i = 0; i < data.item_count(); ++i) {
    f += p.log_a[i] * p.log_a[i] / (2 * va) + p.b[i] * p.b[i] / (2 * vb);
  }
  for (std::size_t j = 0; j < data.respondent_count(); ++j) {
    const double r = p.theta[j] - p.mu[data.model_of(j)] - p.nu[data.environment_of(j)];
    f += r * r / (2 * vt);
  }
  const double smu = std::accumulate(p.mu.begin(), p.mu.end(), 0.0);
  const double snu = std::accumulate(p.nu.begin(), p.nu.end(), 0.0);
  f += 0.5 * config.centering_weight * (smu * smu + snu * snu);
  return f;
}

Params gradient(const Params& p, const ResponseMatrix& data, const IrtConfig& config) {
  check_shape(p, data);
  Params g = Params::zeros(data);
  for (std::size_t j = 0; j < data.respondent_count(); ++j) {
    for (std::size_t i = 0; i < data.item_count(); ++i) {
      const auto y = data.at(j, i);
      if (y == kMissing) continue;
      const double a = std::exp(p.log_a[i]);
      const double d = p.theta[j] - p.b[i];
      const double r = sigmoid(a * d) - y;
      g.theta[j] += r * a;
      g.b[i] -= r * a;
      g.log_a[i] += r * a * d;
    }
  }
  const double va = config.sd_log_a * config.sd_log_a;
  const double vb = config.sd_b * config.sd_b;
  const double vt = config.sigma_theta * config.sigma_theta;
  for (std::size_t i = 0; i < data.item_count(); ++i) {
    g.log_a[i] += p.log_a[i] / va;
    g.b[i] += p.b[i] / vb;
  }
  for (std::size_t j = 0; j < data.respondent_count(); ++j) {
    const auto m = data.model_of(j);
    const auto e = data.environment_of(j);
    const double r = (p.theta[j] - p.mu[m] - p.nu[e]) / vt;
    g.theta[j] += r;
    g.mu[m] -= r;
    g.nu[e] -= r;
  }
  const double smu = std::accumulate(p.mu.begin(), p.mu.end(), 0.0);
  const double snu = std::accumulate(p.nu.begin(), p.nu.end(), 0.0);
  for (auto& v : g.mu) v += config.centering_weight * smu;
  for (auto& v : g.nu) v += config.centering_weight * snu;
  return g;
}

std::vector<double> standardize(std::span<const double> values) {
  if (values.size() < 2) throw DomainError("standardization needs at least two values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (const double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / n);
  if (!(sd > 1e-12 * std::max(1.0, max_abs(values)))) throw DomainError("cannot standardize values with zero variance");
  std::vector<double> out;
  out.reserve(values.size());
  for (const double v : values) out.push_back((v - mean) / sd);
  return out;
}

IrtFit fit_map(const ResponseMatrix& data, const IrtConfig& config) {
  data.check();
  if (!(config.sigma_theta > 0) || !(config.sd_log_a > 0) || !(config.sd_b > 0)) {
    throw DomainError("prior scales must be positive");
  }
  const Params shape = Params::zeros(data);
  auto objective = [&](std::span<const double> x) {
    return neg_log_posterior(Params::unflatten(x, shape), data, config);
  };
  auto grad = [&](std::span<const double> x) { return gradient(Params::unflatten(x, shape), data, config).flatten(); };

  std::vector<double> x = shape.flatten();
  double f = objective(x);
  std::vector<double> g = grad(x);
  if (!std::isfinite(f)) throw FitError("non-finite objective", 0);

  IrtFit fit;
  double step = 1.0;
  std::vector<double> x_new(x.size());
  int it = 0;
  for (; it < config.max_iters; ++it) {
    if (max_abs(g) < config.tolerance) {
      fit.converged = true;
      break;
    }
    double gg = 0.0;
    for (const double v : g) gg += v * v;
    double f_new = 0.0;
    double t = step;
    for (int tries = 0;; ++tries) {
      for (std::size_t k = 0; k < x.size(); ++k) x_new[k] = x[k] - t * g[k];
      f_new = objective(x_new);
      if (std::isfinite(f_new) && f_new <= f - config.armijo_c * t * gg) break;
      if (tries > 200) throw FitError("line search failed to decrease the objective", it);
      t *= config.backtrack;
    }
    auto g_new = grad(x_new);
    if (!std::isfinite(f_new)) throw FitError("non-finite objective", it);
    // Barzilai-Borwein step for the next iteration.
    double ss = 0.0;
    double sy = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double s = x_new[k] - x[k];
      const double y = g_new[k] - g[k];
      ss += s * s;
      sy += s * y;
    }
    step = sy > 0 ? std::clamp(ss / sy, 1e-10, 1e6) : std::min(t * 2.0, 1e6);
    x.swap(x_new);
    g = std::move(g_new);
    f = f_new;
  }

  fit.respondents = data.respondents();
  fit.items = data.items();
  fit.models = data.models();
  fit.environments = data.environments();
  fit.item_set = data.items().empty() ? std::string() : data.items().front().set;
  fit.params = Params::unflatten(x, shape);
  fit.iterations = it;
  fit.final_objective = f;
  fit.gradient_max_norm = max_abs(g);
  try {
    fit.standardized_theta = standardize(fit.params.theta);
  } catch (const DomainError&) {
    fit.standardized_theta.reset();
  }
  return fit;
}

std::map<std::string, IrtFit> fit_item_sets(std::span<const ResponseRow> rows, const IrtConfig& config) {
  std::vector<std::string> sets;
  for (const auto& r : rows) intern(sets, r.item_set);
  std::map<std::string, IrtFit> fits;
  for (const auto& s : sets) {
    auto fit = fit_map(build_matrix(rows, s), config);
    fit.item_set = s;
    fits.emplace(s, std::move(fit));
  }
  return fits;
}

nlohmann::ordered_json to_json(const IrtFit& fit) {
  nlohmann::ordered_json doc;
  doc["item_set"] = fit.item_set;
  doc["converged"] = fit.converged;
  doc["iterations"] = fit.iterations;
  doc["final_objective"] = fit.final_objective;
  doc["gradient_max_norm"] = fit.gradient_max_norm;
  auto& respondents = doc["respondents"] = nlohmann::ordered_json::array();
  for (std::size_t j = 0; j < fit.respondents.size(); ++j) {
    nlohmann::ordered_json r;
    r["model"] = fit.respondents[j].model;
    r["environment"] = fit.respondents[j].environment;
    r["theta"] = fit.params.theta[j];
    if (fit.standardized_theta) {
      r["theta_standardized"] = (*fit.standardized_theta)[j];
    } else {
      r["theta_standardized"] = nullptr;
    }
    respondents.push_back(std::move(r));
  }
  auto& items = doc["items"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < fit.items.size(); ++i) {
    items.push_back({{"item_id", fit.items[i].id},
                     {"a", std::exp(fit.params.log_a[i])},
                     {"log_a", fit.params.log_a[i]},
                     {"b", fit.params.b[i]}});
  }
  auto& mu = doc["model_effects"] = nlohmann::ordered_json::object();
  for (std::size_t m = 0; m < fit.models.size(); ++m) mu[fit.models[m]] = fit.params.mu[m];
  auto& nu = doc["environment_effects"] = nlohmann::ordered_json::object();
  for (std::size_t e = 0; e < fit.environments.size(); ++e) nu[fit.environments[e]] = fit.params.nu[e];
  return doc;
}

}  // namespace epitrace::irt
