#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace epitrace::irt {

struct Respondent {
  std::string model;
  std::string environment;

  auto operator<=>(const Respondent&) const = default;
};

struct Item {
  std::string id;
  std::string set;  // "knowledge" or "reasoning"
};

inline constexpr std::int8_t kMissing = -1;

// Respondent x item outcomes, row-major; each cell is 0, 1 or kMissing.
class ResponseMatrix {
 public:
  ResponseMatrix(std::vector<Respondent> respondents, std::vector<Item> items);

  std::size_t respondent_count() const noexcept { return respondents_.size(); }
  std::size_t item_count() const noexcept { return items_.size(); }
  const std::vector<Respondent>& respondents() const noexcept { return respondents_; }
  const std::vector<Item>& items() const noexcept { return items_; }

  std::int8_t at(std::size_t respondent, std::size_t item) const { return y_[respondent * items_.size() + item]; }
  // Throws DomainError for a value other than 0, 1 or kMissing.
  void set(std::size_t respondent, std::size_t item, std::int8_t value);

  // Distinct models and environments in first-seen order, and each
  // respondent's index into them.
  const std::vector<std::string>& models() const noexcept { return models_; }
  const std::vector<std::string>& environments() const noexcept { return environments_; }
  std::size_t model_of(std::size_t respondent) const { return model_index_[respondent]; }
  std::size_t environment_of(std::size_t respondent) const { return environment_index_[respondent]; }

  // Throws DomainError unless there are at least 2 respondents and 2 items.
  void check() const;

 private:
  std::vector<Respondent> respondents_;
  std::vector<Item> items_;
  std::vector<std::int8_t> y_;
  std::vector<std::string> models_;
  std::vector<std::string> environments_;
  std::vector<std::size_t> model_index_;
  std::vector<std::size_t> environment_index_;
};

// One observation of the long-format response file.
struct ResponseRow {
  std::string model;
  std::string environment;
  std::string item_id;
  std::string item_set;
  std::optional<int> outcome;  // unset when missing
};

// Header: respondent_model,respondent_environment,item_id,item_set,outcome.
// An empty outcome, "NA" or "missing" marks a missing cell.
std::vector<ResponseRow> read_responses_csv(std::istream& in);
std::vector<ResponseRow> load_responses_csv(const std::filesystem::path& path);

// Builds the matrix of one item set (every set when `item_set` is empty).
// Respondents and items appear in first-seen order. Throws ValidationError
// on conflicting duplicate rows.
ResponseMatrix build_matrix(std::span<const ResponseRow> rows, std::string_view item_set = {});

struct Params {
  std::vector<double> log_a;  // per item
  std::vector<double> b;      // per item
  std::vector<double> theta;  // per respondent
  std::vector<double> mu;     // per model
  std::vector<double> nu;     // per environment

  static Params zeros(const ResponseMatrix& data);
  std::vector<double> flatten() const;
  static Params unflatten(std::span<const double> flat, const Params& shape);
};

struct IrtConfig {
  int max_iters = 50000;
  double tolerance = 1e-6;  // on the gradient max-norm
  double sigma_theta = 1.0;
  double sd_log_a = 0.5;
  double sd_b = 2.0;
  // Weight of the quadratic penalty pulling sum(mu) and sum(nu) to zero.
  double centering_weight = 100.0;
  double armijo_c = 1e-4;
  double backtrack = 0.5;
};

// Logistic of a (theta - b). Throws DomainError unless a > 0.
double irt_prob(double a, double b, double theta);

// Bernoulli negative log-likelihood over observed cells.
double neg_log_likelihood(const Params& p, const ResponseMatrix& data);
// Likelihood plus Gaussian priors and the centering penalty (constants dropped).
double neg_log_posterior(const Params& p, const ResponseMatrix& data, const IrtConfig& config = {});
Params gradient(const Params& p, const ResponseMatrix& data, const IrtConfig& config = {});

struct IrtFit {
  std::string item_set;
  std::vector<Respondent> respondents;
  std::vector<Item> items;
  std::vector<std::string> models;
  std::vector<std::string> environments;
  Params params;
  // Unset when the fitted abilities have no spread.
  std::optional<std::vector<double>> standardized_theta;
  bool converged = false;
  int iterations = 0;
  double final_objective = 0.0;
  double gradient_max_norm = 0.0;
};

// MAP estimate by gradient descent with Barzilai-Borwein steps and Armijo
// backtracking from the all-zero start. Throws FitError on a non-finite
// objective.
IrtFit fit_map(const ResponseMatrix& data, const IrtConfig& config = {});

// Fits each item set separately; keyed by set name.
std::map<std::string, IrtFit> fit_item_sets(std::span<const ResponseRow> rows, const IrtConfig& config = {});

// (x - mean) / sd with the population sd. Throws DomainError for fewer than
// two values or zero variance.
std::vector<double> standardize(std::span<const double> values);

nlohmann::ordered_json to_json(const IrtFit& fit);

}  // namespace epitrace::irt
