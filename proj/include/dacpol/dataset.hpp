#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "dacpol/linalg.hpp"

namespace dacpol {

// Fully labelled data before any bandit conversion.
struct SupervisedDataset {
  Matrix features;          // n x s
  std::vector<int> labels;  // each in [0, num_classes)
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dims() const { return static_cast<std::size_t>(features.cols()); }
  void validate() const;
};

// Logged (x, a, y) triples. potential_outcomes holds every counterfactual and
// must only be read by evaluation code.
struct BanditDataset {
  Matrix features;            // n x s
  std::vector<int> actions;   // logged actions
  std::vector<double> outcomes;
  Matrix potential_outcomes;  // n x k, ground truth
  std::optional<Matrix> true_propensities;  // n x k logging probabilities

  std::size_t size() const { return actions.size(); }
  std::size_t dims() const { return static_cast<std::size_t>(features.cols()); }
  int num_actions() const { return static_cast<int>(potential_outcomes.cols()); }

  // Throws DataError when any structural invariant fails.
  void validate() const;
  BanditDataset subset(std::span<const std::size_t> rows) const;
};

// Softmax logging policy over logits x^T W.
struct LoggingPolicy {
  Matrix weights;  // s x k
  double sigma = 0.0;

  std::size_t dims() const { return static_cast<std::size_t>(weights.rows()); }
  int num_actions() const { return static_cast<int>(weights.cols()); }
};

struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

// Statlog satimage: 36 integer features followed by a label in {1,2,3,4,5,7}.
// Labels are remapped to 0..5 and each feature column is z-scored over the
// file. Throws ParseError naming the offending line.
SupervisedDataset load_statlog(const std::filesystem::path& path);
SupervisedDataset parse_statlog(std::istream& in);

// Entries drawn i.i.d. Normal(0, sigma^2).
LoggingPolicy make_logging_policy(double sigma, int s, int k, std::uint64_t seed);

Vector propensities(const LoggingPolicy& policy, std::span<const double> x);
Matrix propensity_matrix(const LoggingPolicy& policy, const Matrix& features);

// Inverse-CDF draw from a probability vector using one uniform in [0,1).
int sample_categorical(std::span<const double> probs, double u);

BanditDataset supervised_to_bandit(const SupervisedDataset& sup, const LoggingPolicy& policy,
                                   std::uint64_t seed);

// Replaces logged actions, outcomes and true propensities with draws from
// `policy`; features and potential outcomes are untouched.
BanditDataset resample_actions(const BanditDataset& ds, const LoggingPolicy& policy,
                               std::uint64_t seed);

struct MedicalSpec {
  std::size_t n = 10000;
  int num_actions = 5;
  int relevant_features = 15;
  double sigma = 0.3;
  // Scale of the outcome-model logits; each logit x^T v_a has this st. dev.
  double outcome_scale = 2.0;
  std::uint64_t seed = 0;
};

struct SyntheticMedical {
  Matrix outcome_weights;  // s x k; potential outcome = sigmoid(x^T v_a)
  LoggingPolicy logging;
  BanditDataset data;
};

// Stand-in for a clinical cohort: Gaussian features, sigmoid-linear potential
// outcomes and softmax logging bias.
SyntheticMedical make_synthetic_medical(const MedicalSpec& spec);

// Appends d standard-normal columns and re-logs actions with a softmax policy
// whose weights (Normal(0, sigma^2)) are nonzero only on the new columns.
BanditDataset append_irrelevant_features(const BanditDataset& ds, int d, double sigma,
                                         std::uint64_t seed);

// Mean over rows of KL(row || uniform).
double mean_kl_from_uniform(const Matrix& probs);

// Sizes are floor(f * n) for validation and test; train takes its share plus
// whatever rounding leaves over when the fractions sum to one.
DataSplit split(std::size_t n, std::array<double, 3> fractions, std::uint64_t seed);

// Canonical binary layout; see docs/formats.md.
void write_dataset(std::ostream& out, const BanditDataset& ds);
BanditDataset read_dataset(std::istream& in);
void write_dataset(const std::filesystem::path& path, const BanditDataset& ds);
BanditDataset read_dataset(const std::filesystem::path& path);

}  // namespace dacpol
