#include "dacpol/baselines.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "dacpol/dacpol.hpp"
#include "dacpol/errors.hpp"
#include "dacpol/nnet.hpp"
#include "dacpol/rng.hpp"

namespace dacpol::baselines {
namespace {

void check_shapes(const Matrix& features, std::span<const int> actions, std::span<const double> outcomes,
                  const LinearPolicy& policy, const Matrix& propensities) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (actions.size() != n || outcomes.size() != n) throw ShapeError("sample columns differ in length");
  if (features.cols() != policy.weights.rows()) throw ShapeError("policy weights do not match features");
  if (propensities.rows() != features.rows() || propensities.cols() != policy.weights.cols())
    throw ShapeError("propensity matrix must be n x k");
}

nnet::Network as_network(const LinearPolicy& policy) {
  nnet::Network net;
  net.layers.push_back({policy.weights, RowVector::Zero(policy.weights.cols()), nnet::Activation::identity});
  return net;
}

}  // namespace

Matrix LinearPolicy::probabilities(const Matrix& features) const {
  if (features.cols() != weights.rows()) throw ShapeError("policy weights do not match features");
  return nnet::softmax_rows(features * weights);
}

std::vector<int> LinearPolicy::recommend(const Matrix& features) const {
  if (features.cols() != weights.rows()) throw ShapeError("policy weights do not match features");
  const Matrix logits = features * weights;
  std::vector<int> out(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    out[static_cast<std::size_t>(i)] =
        argmax_lowest(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
  }
  return out;
}

CrmObjective crm_objective(const Matrix& features, std::span<const int> actions, std::span<const double> outcomes,
                           const LinearPolicy& policy, const Matrix& propensities, const CrmConfig& config) {
  check_shapes(features, actions, outcomes, policy, propensities);
  if (!(config.clip > 0.0)) throw std::invalid_argument("clip ceiling must be positive");
  if (!(config.variance_weight >= 0.0)) throw std::invalid_argument("variance weight must be nonnegative");
  const auto n = features.rows();
  if (n == 0) throw InsufficientDataError("empty sample");
  const double nn = static_cast<double>(n);

  const Matrix pi = policy.probabilities(features);
  Vector weight(n);
  Vector reward(n);
  std::vector<bool> clipped(static_cast<std::size_t>(n));
  CrmObjective out;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    const int a = actions[iu];
    if (a < 0 || a >= pi.cols()) throw ShapeError("logged action outside [0, k)");
    const double ratio = pi(i, a) / propensities(i, a);
    clipped[iu] = !(ratio < config.clip);
    weight[i] = clipped[iu] ? config.clip : ratio;
    reward[i] = outcomes[iu] * weight[i];
    out.estimate.max_weight = std::max(out.estimate.max_weight, weight[i]);
  }
  const double mean = reward.mean();
  const double variance = n > 1 ? (reward.array() - mean).square().sum() / (nn - 1.0) : 0.0;
  out.estimate.mean = mean;
  out.estimate.variance = variance;
  const double std_error = std::sqrt(variance / nn);
  out.value = mean - config.variance_weight * std_error;

  // d r_i / dW = y_i u_i x_i (e_{a_i} - pi_i)^T for unclipped rows.
  const bool penalize = config.variance_weight > 0.0 && std_error > 0.0;
  Matrix coeff = Matrix::Zero(n, pi.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    if (clipped[iu] || reward[i] == 0.0) continue;
    double c = 1.0 / nn;
    if (penalize) c -= config.variance_weight * (reward[i] - mean) / ((nn - 1.0) * nn * std_error);
    c *= reward[i];
    coeff.row(i) = -c * pi.row(i);
    coeff(i, actions[iu]) += c;
  }
  out.gradient = features.transpose() * coeff;
  return out;
}

IpsEstimate ips_value(const Matrix& features, std::span<const int> actions, std::span<const double> outcomes,
                      const LinearPolicy& policy, const Matrix& propensities, double clip) {
  CrmConfig config;
  config.clip = clip;
  return crm_objective(features, actions, outcomes, policy, propensities, config).estimate;
}

IpsEstimate ips_value(const BanditDataset& ds, const LinearPolicy& policy, const Matrix& propensities,
                      double clip) {
  return ips_value(ds.features, ds.actions, ds.outcomes, policy, propensities, clip);
}

LinearPolicy initial_policy(std::size_t s, int k, std::uint64_t seed) {
  Rng rng(seed);
  LinearPolicy policy;
  policy.weights.resize(static_cast<Eigen::Index>(s), k);
  for (Eigen::Index i = 0; i < policy.weights.size(); ++i) policy.weights.data()[i] = 0.01 * rng.normal();
  return policy;
}

CrmResult train_poem(const BanditDataset& ds, const Matrix& propensities, const CrmConfig& config) {
  if (ds.size() == 0) throw InsufficientDataError("empty training data");
  if (config.iterations < 0) throw std::invalid_argument("negative iteration count");
  CrmResult result;
  result.policy = initial_policy(ds.dims(), ds.num_actions(), config.seed);
  nnet::Network net = as_network(result.policy);
  auto state = nnet::AdamState::for_network(net);
  auto grad = nnet::NetworkGradient::zeros_like(net);
  for (int it = 0; it < config.iterations; ++it) {
    const LinearPolicy current{net.layers[0].weights};
    const CrmObjective obj = crm_objective(ds.features, ds.actions, ds.outcomes, current, propensities, config);
    if (!std::isfinite(obj.value) || !obj.gradient.allFinite()) {
      std::ostringstream msg;
      msg << std::setprecision(17) << "non-finite CRM objective at iteration " << it << " (mean "
          << obj.estimate.mean << ", variance " << obj.estimate.variance << ")";
      throw TrainingError(msg.str());
    }
    result.trace.push_back({it, obj.value, obj.estimate.mean, obj.estimate.variance, obj.estimate.max_weight});
    grad.layers[0].weights = -obj.gradient;
    nnet::adam_step(net, grad, state, config.learning_rate, "linear");
  }
  result.policy.weights = net.layers[0].weights;
  return result;
}

CrmResult train_ips(const BanditDataset& ds, const Matrix& propensities, CrmConfig config) {
  config.variance_weight = 0.0;
  return train_poem(ds, propensities, config);
}

void write_trace_csv(std::ostream& out, std::span<const CrmTraceRow> trace) {
  out << "iteration,objective,mean,variance,max_weight\n" << std::setprecision(17);
  for (const auto& r : trace)
    out << r.iteration << ',' << r.objective << ',' << r.mean << ',' << r.variance << ',' << r.max_weight << '\n';
}

void save_policy(std::ostream& out, const LinearPolicy& policy) {
  const nnet::NamedBlock blocks[] = {{"linear", as_network(policy)}};
  nnet::write_checkpoint(out, blocks);
}

LinearPolicy load_policy(std::istream& in) {
  for (auto& block : nnet::read_checkpoint(in))
    if (block.name == "linear" && block.network.layers.size() == 1) return {block.network.layers[0].weights};
  throw DataError("checkpoint has no single-layer 'linear' block");
}

}  // namespace dacpol::baselines
