#include "dacpol/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "dacpol/errors.hpp"
#include "dacpol/rng.hpp"

namespace dacpol {
namespace {

constexpr std::array<int, 6> kStatlogLabels = {1, 2, 3, 4, 5, 7};
constexpr std::size_t kStatlogFeatures = 36;

int remap_statlog_label(long raw) {
  const auto it = std::find(kStatlogLabels.begin(), kStatlogLabels.end(), raw);
  if (it == kStatlogLabels.end()) return -1;
  return static_cast<int>(it - kStatlogLabels.begin());
}

void standardize_columns(Matrix& x) {
  const auto n = static_cast<double>(x.rows());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double mean = x.col(j).sum() / n;
    const double var = (x.col(j).array() - mean).square().sum() / n;
    const double sd = std::sqrt(var);
    if (sd > 0.0) {
      x.col(j) = (x.col(j).array() - mean) / sd;
    } else {
      x.col(j).setZero();
    }
  }
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

void SupervisedDataset::validate() const {
  if (labels.empty()) throw DataError("supervised dataset is empty");
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw ShapeError("feature rows do not match label count");
  for (int label : labels) {
    if (label < 0 || label >= num_classes) throw DataError("label outside [0, k)");
  }
}

void BanditDataset::validate() const {
  const auto n = size();
  if (n == 0) throw DataError("bandit dataset is empty");
  if (static_cast<std::size_t>(features.rows()) != n || outcomes.size() != n ||
      static_cast<std::size_t>(potential_outcomes.rows()) != n)
    throw ShapeError("bandit dataset columns disagree on row count");
  const int k = num_actions();
  if (k < 2) throw ShapeError("bandit dataset needs at least two actions");
  if (true_propensities && (true_propensities->rows() != static_cast<Eigen::Index>(n) ||
                            true_propensities->cols() != k))
    throw ShapeError("true propensities have the wrong shape");
  if (!all_finite(features)) throw DataError("non-finite feature value");
  for (std::size_t i = 0; i < n; ++i) {
    const int a = actions[i];
    if (a < 0 || a >= k) throw DataError("logged action outside [0, k) at row " + std::to_string(i));
    if (!(outcomes[i] >= 0.0 && outcomes[i] <= 1.0))
      throw DataError("outcome outside [0, 1] at row " + std::to_string(i));
    if (outcomes[i] != potential_outcomes(static_cast<Eigen::Index>(i), a))
      throw DataError("outcome disagrees with potential outcome at row " + std::to_string(i));
    if (true_propensities) {
      const auto row = true_propensities->row(static_cast<Eigen::Index>(i));
      if (std::abs(row.sum() - 1.0) > 1e-9 || (row.array() <= 0.0).any() ||
          (row.array() >= 1.0).any())
        throw DataError("propensity row violates overlap at row " + std::to_string(i));
    }
  }
  if ((potential_outcomes.array() < 0.0).any() || (potential_outcomes.array() > 1.0).any())
    throw DataError("potential outcome outside [0, 1]");
}

BanditDataset BanditDataset::subset(std::span<const std::size_t> rows) const {
  BanditDataset out;
  const auto m = static_cast<Eigen::Index>(rows.size());
  out.features.resize(m, features.cols());
  out.potential_outcomes.resize(m, potential_outcomes.cols());
  out.actions.reserve(rows.size());
  out.outcomes.reserve(rows.size());
  if (true_propensities) out.true_propensities = Matrix(m, true_propensities->cols());
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto i = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)]);
    if (i >= features.rows()) throw ShapeError("subset row index out of range");
    out.features.row(r) = features.row(i);
    out.potential_outcomes.row(r) = potential_outcomes.row(i);
    out.actions.push_back(actions[static_cast<std::size_t>(i)]);
    out.outcomes.push_back(outcomes[static_cast<std::size_t>(i)]);
    if (true_propensities) out.true_propensities->row(r) = true_propensities->row(i);
  }
  return out;
}

SupervisedDataset parse_statlog(std::istream& in) {
  std::vector<std::array<double, kStatlogFeatures>> rows;
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream tokens(line);
    std::string token;
    std::vector<long> values;
    while (tokens >> token) {
      long value = 0;
      const auto* first = token.data();
      const auto* last = token.data() + token.size();
      const auto [ptr, ec] = std::from_chars(first, last, value);
      if (ec != std::errc() || ptr != last) throw ParseError(line_no, "non-integer token '" + token + "'");
      values.push_back(value);
    }
    if (values.size() != kStatlogFeatures + 1)
      throw ParseError(line_no, "expected 37 fields, found " + std::to_string(values.size()));
    const int label = remap_statlog_label(values.back());
    if (label < 0) throw ParseError(line_no, "label " + std::to_string(values.back()) + " not in {1,2,3,4,5,7}");
    std::array<double, kStatlogFeatures> row{};
    for (std::size_t j = 0; j < kStatlogFeatures; ++j) row[j] = static_cast<double>(values[j]);
    rows.push_back(row);
    labels.push_back(label);
  }
  if (rows.empty()) throw ParseError(line_no, "no data rows");

  SupervisedDataset out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), kStatlogFeatures);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < kStatlogFeatures; ++j)
      out.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  standardize_columns(out.features);
  out.labels = std::move(labels);
  out.num_classes = static_cast<int>(kStatlogLabels.size());
  return out;
}

SupervisedDataset load_statlog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_statlog(in);
}

LoggingPolicy make_logging_policy(double sigma, int s, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("logging policy needs at least two actions");
  if (s < 0) throw std::invalid_argument("negative feature dimension");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("sigma must be finite and >= 0");
  LoggingPolicy policy;
  policy.sigma = sigma;
  policy.weights = Matrix::Zero(s, k);
  Rng rng(seed);
  for (int j = 0; j < s; ++j)
    for (int a = 0; a < k; ++a) policy.weights(j, a) = sigma * rng.normal();
  return policy;
}

Vector propensities(const LoggingPolicy& policy, std::span<const double> x) {
  if (x.size() != policy.dims()) throw ShapeError("feature vector does not match logging policy");
  const Eigen::Map<const RowVector> row(x.data(), static_cast<Eigen::Index>(x.size()));
  Vector logits = (row * policy.weights).transpose();
  const double shift = logits.maxCoeff();
  Vector p = (logits.array() - shift).exp();
  return p / p.sum();
}

Matrix propensity_matrix(const LoggingPolicy& policy, const Matrix& features) {
  if (static_cast<std::size_t>(features.cols()) != policy.dims())
    throw ShapeError("feature matrix does not match logging policy");
  Matrix logits = features * policy.weights;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    row.array() = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
  return logits;
}

int sample_categorical(std::span<const double> probs, double u) {
  double cumulative = 0.0;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    cumulative += probs[a];
    if (u < cumulative) return static_cast<int>(a);
  }
  // u landed in the rounding gap above the last cumulative sum.
  for (std::size_t a = probs.size(); a > 0; --a)
    if (probs[a - 1] > 0.0) return static_cast<int>(a - 1);
  return 0;
}

namespace {

void log_actions(BanditDataset& ds, const Matrix& props, std::uint64_t seed) {
  Rng rng(seed);
  const auto n = ds.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const auto row = props.row(r);
    const int a = sample_categorical(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())),
                                     rng.uniform());
    ds.actions[i] = a;
    ds.outcomes[i] = ds.potential_outcomes(r, a);
  }
  ds.true_propensities = props;
}

}  // namespace

BanditDataset supervised_to_bandit(const SupervisedDataset& sup, const LoggingPolicy& policy,
                                   std::uint64_t seed) {
  sup.validate();
  if (sup.dims() != policy.dims() || sup.num_classes != policy.num_actions())
    throw ShapeError("logging policy shape does not match dataset (s, k)");
  BanditDataset ds;
  const auto n = static_cast<Eigen::Index>(sup.size());
  ds.features = sup.features;
  ds.potential_outcomes = Matrix::Zero(n, sup.num_classes);
  for (Eigen::Index i = 0; i < n; ++i) ds.potential_outcomes(i, sup.labels[static_cast<std::size_t>(i)]) = 1.0;
  ds.actions.assign(sup.size(), 0);
  ds.outcomes.assign(sup.size(), 0.0);
  log_actions(ds, propensity_matrix(policy, ds.features), seed);
  return ds;
}

BanditDataset resample_actions(const BanditDataset& ds, const LoggingPolicy& policy,
                               std::uint64_t seed) {
  if (ds.dims() != policy.dims() || ds.num_actions() != policy.num_actions())
    throw ShapeError("logging policy shape does not match dataset (s, k)");
  BanditDataset out = ds;
  out.actions.assign(ds.size(), 0);
  out.outcomes.assign(ds.size(), 0.0);
  log_actions(out, propensity_matrix(policy, out.features), seed);
  return out;
}

SyntheticMedical make_synthetic_medical(const MedicalSpec& spec) {
  if (spec.n == 0) throw std::invalid_argument("synthetic cohort needs n >= 1");
  if (spec.relevant_features < 1) throw std::invalid_argument("need at least one relevant feature");
  const auto n = static_cast<Eigen::Index>(spec.n);
  const int s = spec.relevant_features;
  const int k = spec.num_actions;

  Rng feature_rng(mix_seed(spec.seed, 1));
  Rng outcome_rng(mix_seed(spec.seed, 2));

  SyntheticMedical out;
  out.outcome_weights.resize(s, k);
  const double weight_sd = spec.outcome_scale / std::sqrt(static_cast<double>(s));
  for (int j = 0; j < s; ++j)
    for (int a = 0; a < k; ++a) out.outcome_weights(j, a) = weight_sd * outcome_rng.normal();

  BanditDataset& ds = out.data;
  ds.features.resize(n, s);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < s; ++j) ds.features(i, j) = feature_rng.normal();
  ds.potential_outcomes = (ds.features * out.outcome_weights).unaryExpr([](double t) {
    return 1.0 / (1.0 + std::exp(-t));
  });
  ds.actions.assign(spec.n, 0);
  ds.outcomes.assign(spec.n, 0.0);

  out.logging = make_logging_policy(spec.sigma, s, k, mix_seed(spec.seed, 3));
  log_actions(ds, propensity_matrix(out.logging, ds.features), mix_seed(spec.seed, 4));
  return out;
}

BanditDataset append_irrelevant_features(const BanditDataset& ds, int d, double sigma,
                                         std::uint64_t seed) {
  if (d < 0) throw std::invalid_argument("number of irrelevant features must be >= 0");
  const auto n = static_cast<Eigen::Index>(ds.size());
  const auto s = ds.features.cols();
  const int k = ds.num_actions();

  BanditDataset out = ds;
  out.features.conservativeResize(n, s + d);
  Rng feature_rng(mix_seed(seed, 11));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) out.features(i, s + j) = feature_rng.normal();

  LoggingPolicy logging;
  logging.sigma = sigma;
  logging.weights = Matrix::Zero(s + d, k);
  if (d > 0) logging.weights.bottomRows(d) = make_logging_policy(sigma, d, k, mix_seed(seed, 12)).weights;
  log_actions(out, propensity_matrix(logging, out.features), mix_seed(seed, 13));
  return out;
}

double mean_kl_from_uniform(const Matrix& probs) {
  if (probs.rows() == 0) return 0.0;
  const double log_k = std::log(static_cast<double>(probs.cols()));
  double total = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    for (Eigen::Index a = 0; a < probs.cols(); ++a) {
      const double p = probs(i, a);
      if (p > 0.0) total += p * (std::log(p) + log_k);
    }
  return total / static_cast<double>(probs.rows());
}

DataSplit split(std::size_t n, std::array<double, 3> fractions, std::uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  for (double f : fractions)
    if (!(f >= 0.0)) throw std::invalid_argument("split fractions must be nonnegative");
  if (total > 1.0 + 1e-9) throw std::invalid_argument("split fractions sum above one");

  const auto part = [n](double f) {
    return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
  };
  const std::size_t n_val = part(fractions[1]);
  const std::size_t n_test = part(fractions[2]);
  std::size_t n_train = part(fractions[0]);
  if (total >= 1.0 - 1e-9) n_train = n - std::min(n, n_val + n_test);
  if (n_train + n_val + n_test > n) throw SplitError("split sizes exceed n");
  if (n_train == 0 || n_val == 0 || n_test == 0)
    throw SplitError("split would leave a part empty (train " + std::to_string(n_train) + ", validation " +
                     std::to_string(n_val) + ", test " + std::to_string(n_test) + ")");

  Rng rng(seed);
  std::vector<std::size_t> order = rng.sample_without_replacement(n, n_train + n_val + n_test);
  DataSplit out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                        order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return out;
}

}  // namespace dacpol
