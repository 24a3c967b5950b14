#pragma once

// Propensity-weighted baselines over stochastic linear softmax policies:
// IPS maximizes the clipped importance-weighted outcome mean, POEM
// additionally penalizes its standard error (counterfactual risk
// minimization).

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "dacpol/dataset.hpp"

namespace dacpol::baselines {

struct LinearPolicy {
  Matrix weights;  // s x k, pi(a|x) = softmax(x^T W)_a

  Matrix probabilities(const Matrix& features) const;
  std::vector<int> recommend(const Matrix& features) const;
};

struct IpsEstimate {
  double mean = 0.0;
  double variance = 0.0;    // sample variance of y_i * u_i
  double max_weight = 0.0;  // largest u_i used
};

// u_i = min(pi(a_i|x_i) / propensity(a_i|x_i), clip).
IpsEstimate ips_value(const Matrix& features, std::span<const int> actions, std::span<const double> outcomes,
                      const LinearPolicy& policy, const Matrix& propensities, double clip);
IpsEstimate ips_value(const BanditDataset& ds, const LinearPolicy& policy, const Matrix& propensities,
                      double clip);

struct CrmConfig {
  double variance_weight = 0.0;  // lambda_var; 0 reduces POEM to IPS
  double clip = 100.0;
  double learning_rate = 0.01;
  int iterations = 300;
  std::uint64_t seed = 0;
};

// mean - lambda_var * sqrt(variance / n) and its gradient in W.
struct CrmObjective {
  IpsEstimate estimate;
  double value = 0.0;
  Matrix gradient;  // s x k, ascent direction
};

CrmObjective crm_objective(const Matrix& features, std::span<const int> actions, std::span<const double> outcomes,
                           const LinearPolicy& policy, const Matrix& propensities, const CrmConfig& config);

struct CrmTraceRow {
  int iteration = 0;
  double objective = 0.0;
  double mean = 0.0;
  double variance = 0.0;
  double max_weight = 0.0;
};

struct CrmResult {
  LinearPolicy policy;
  std::vector<CrmTraceRow> trace;  // objective at each iterate before its step
};

// Small Normal(0, 0.01^2) weights from the seed.
LinearPolicy initial_policy(std::size_t s, int k, std::uint64_t seed);

// Adam ascent on the CRM objective over the rows in `ds`.
CrmResult train_poem(const BanditDataset& ds, const Matrix& propensities, const CrmConfig& config);
// train_poem with the variance weight forced to zero.
CrmResult train_ips(const BanditDataset& ds, const Matrix& propensities, CrmConfig config);

void write_trace_csv(std::ostream& out, std::span<const CrmTraceRow> trace);
void save_policy(std::ostream& out, const LinearPolicy& policy);
LinearPolicy load_policy(std::istream& in);

}  // namespace dacpol::baselines
