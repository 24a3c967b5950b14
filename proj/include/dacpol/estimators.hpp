#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dacpol/dataset.hpp"

namespace dacpol::estimators {

// Deterministic policy over representation vectors.
using Policy = std::function<int(std::span<const double>)>;

struct FinitePolicyClass {
  std::vector<std::string> names;
  std::vector<Policy> policies;

  std::size_t size() const { return policies.size(); }
  void add(std::string name, Policy policy);
};

// h applied to every row of z.
std::vector<int> apply_policy(const Policy& h, const Matrix& z);

// k * mean(y_i * 1{h(z_i) == a_i}); `recommended` holds h(z_i).
double v_hat_source(std::span<const int> recommended, std::span<const int> actions,
                    std::span<const double> outcomes, int k);
double v_hat_source(const Matrix& z, std::span<const int> actions, std::span<const double> outcomes,
                    const Policy& h, int k);

// k * mean(y_i * q_i[a_i]) for a stochastic policy with probability rows q.
double v_hat_source_stochastic(const Matrix& q, std::span<const int> actions, std::span<const double> outcomes);

// Ground truth: mean of potential_outcomes[i][h_i].
double true_policy_value(const BanditDataset& ds, std::span<const int> recommended);
double true_policy_value(const BanditDataset& ds, const Policy& h);

// Paired (z, a) sample.
struct PairSample {
  const Matrix& z;
  std::span<const int> actions;
};

// Fraction of rows with h(z_i) == a_i.
double characteristic_mass(const PairSample& sample, const Policy& h);

// max over h of |P_T(I_h) - P_S(I_h)|.
double empirical_h_divergence_exact(const PairSample& source, const PairSample& target, const FinitePolicyClass& H);

// Logistic-regression domain classifier fitted by full-batch gradient
// descent with step 1/L (L from the feature Gram matrix).
struct ProxyConfig {
  int folds = 2;
  int iterations = 300;
  double l2 = 1e-4;
};

struct ProxyDivergence {
  double value = 0.0;  // 2 * (1 - 2 * balanced error), clamped to [0, 2]
  double balanced_error = 0.0;
  std::vector<double> fold_errors;
};

// Features a linear domain classifier can use to detect z-a dependence:
// [one-hot(a), z (x) one-hot(a)].
Matrix pair_features(const Matrix& z, std::span<const int> actions, int k);

// Proxy A-distance from held-out logistic-regression domain classification
// (source label 0, target label 1). Row i of each sample goes to fold i mod F.
ProxyDivergence proxy_h_divergence(const Matrix& source, const Matrix& target, const ProxyConfig& config = {});

// sqrt(18 ln(M/delta) / n) + 15 ln(M/delta) / n. Requires n >= 16,
// delta in (0, 1) and M >= delta so the logarithm is nonnegative.
double deviation_beta(double delta, std::size_t n, double complexity);

struct BoundInputs {
  double v_hat_source = 0.0;
  double d_hat = 0.0;
  int k = 2;
  std::size_t n = 16;
  double delta = 0.1;
  double complexity = 1.0;  // M(n)

  void validate() const;
};

struct BoundTerms {
  double v_hat_source = 0.0;
  double divergence_penalty = 0.0;  // k * d_hat
  double beta = 0.0;
  double deviation_penalty = 0.0;   // 3k * beta
  double bound = 0.0;
};

BoundTerms lower_bound_terms(const BoundInputs& b);
double value_lower_bound(const BoundInputs& b);

// M(n) for a finite class.
inline double finite_class_complexity(std::size_t class_size) { return 10.0 * static_cast<double>(class_size); }

struct PropensityFit {
  Matrix probabilities;  // n x k
  Matrix weights;        // s x k
  RowVector intercepts;  // k
  int iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
};

struct PropensityOptions {
  double tolerance = 1e-6;
  int max_iterations = 5000;
};

// Multinomial logistic regression of actions on features (L2 on slopes only)
// by accelerated full-batch gradient descent. Non-convergence is reported in
// the result, never thrown.
PropensityFit estimate_propensities(const BanditDataset& ds, double reg, const PropensityOptions& options = {});
PropensityFit estimate_propensities(const Matrix& features, std::span<const int> actions, int k, double reg,
                                    const PropensityOptions& options = {});
Matrix predict_propensities(const PropensityFit& fit, const Matrix& features);

}  // namespace dacpol::estimators
