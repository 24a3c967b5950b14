#pragma once

// Domain-adversarial counterfactual policy learning.
//
// Three blocks share one representation z = F_r(x):
//   policy block   z -> softmax over actions (trained on logged outcomes)
//   domain block   (z[, one-hot a]) -> P(row came from the uniform-action
//                  target sample)
// The representation descends the policy loss while ascending the domain
// loss, so that logged and randomized (z, a) pairs become indistinguishable.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dacpol/dataset.hpp"
#include "dacpol/nnet.hpp"

namespace dacpol {

inline constexpr double kProbabilityFloor = 1e-12;

struct ModelConfig {
  int input_dim = 0;
  int num_actions = 0;
  int hidden_width = 0;  // 0 selects max(input_dim, 32)
  int rep_dim = 0;       // 0 selects max(input_dim / 2, 16)
  // Feed one-hot(a) next to z into the domain block.
  bool domain_uses_action = true;

  // Copy with the zero-valued widths replaced by their defaults.
  ModelConfig resolved() const;
};

struct DacpolModel {
  ModelConfig config;
  nnet::Network representation;  // x -> hidden -> z
  nnet::Network policy;          // z -> hidden -> hidden -> logits (k)
  nnet::Network domain;          // z (+ one-hot a) -> hidden -> logit (1)
};

DacpolModel make_model(const ModelConfig& config, std::uint64_t seed);

struct ModelOutputs {
  Matrix z;  // n x rep_dim
  Matrix q;  // n x k action probabilities
  Vector p;  // n target-domain probabilities
};

// `actions` is required when the domain block consumes actions.
ModelOutputs model_forward(const DacpolModel& model, const Matrix& x, std::span<const int> actions = {});

// Paired source/target sample. Source rows carry logged (a, y) and domain
// flag 0; target rows carry uniform pseudo-actions and domain flag 1.
struct Batch {
  std::vector<std::size_t> source_rows;
  std::vector<std::size_t> target_rows;
  Matrix source_features;
  std::vector<int> source_actions;
  std::vector<double> source_outcomes;
  Matrix target_features;
  std::vector<int> target_actions;

  std::size_t size() const { return source_rows.size(); }
};

// Draws m source rows from `pool` without replacement, then m target rows
// from the remainder, each with a uniformly random pseudo-action.
// Throws InsufficientDataError when 2m exceeds the pool.
Batch generate_batch(const BanditDataset& ds, std::span<const std::size_t> pool, std::size_t m, Rng& rng);
Batch generate_batch(const BanditDataset& ds, std::size_t m, std::uint64_t seed);

// -k * y * log(q[a]) with q[a] floored at kProbabilityFloor.
double policy_loss(double y, int a, std::span<const double> q);
// Binary cross-entropy of domain flag d against p, p clamped into
// [kProbabilityFloor, 1 - kProbabilityFloor].
double domain_loss(int d, double p);
// mean(policy) - lambda * (mean(domain_source) + mean(domain_target)).
double total_loss(std::span<const double> policy_losses, std::span<const double> domain_source,
                  std::span<const double> domain_target, double lambda);

struct LossBreakdown {
  double policy = 0.0;
  double domain_source = 0.0;
  double domain_target = 0.0;
  double total = 0.0;

  double domain() const { return domain_source + domain_target; }
};

struct DacpolGradients {
  // Descent direction for theta_r: dLp/dtheta_r - lambda * dLd/dtheta_r.
  nnet::NetworkGradient representation;
  // dLp/dtheta_p.
  nnet::NetworkGradient policy;
  // dLd/dtheta_d; the domain block descends its own loss.
  nnet::NetworkGradient domain;

  static DacpolGradients zeros_like(const DacpolModel& model);
};

LossBreakdown evaluate_losses(const DacpolModel& model, const Batch& batch, double lambda);

// Losses and all three gradients from one shared forward pass. With
// `ablate_domain` the domain block is never evaluated; its gradient stays
// zero and the domain losses are reported as zero.
LossBreakdown compute_gradients(const DacpolModel& model, const Batch& batch, double lambda,
                                DacpolGradients& grads, bool ablate_domain = false);

enum class LambdaMode { fixed, annealed };

struct TrainConfig {
  std::size_t batch_size = 64;
  double learning_rate = 0.01;
  double lambda = 0.0;
  LambdaMode lambda_mode = LambdaMode::annealed;
  bool anneal_learning_rate = true;
  int max_epochs = 1000;
  int patience = 25;
  double min_improvement = 1e-4;
  // lambda_t = lambda * (2 / (1 + exp(-lambda_gamma * p)) - 1)
  double lambda_gamma = 10.0;
  // mu_t = mu_0 / (1 + lr_alpha * p)^lr_beta
  double lr_alpha = 10.0;
  double lr_beta = 0.75;
  // 0 selects max(1, |train| / batch_size).
  std::size_t iterations_per_epoch = 0;
  // Remove the domain block from the computation entirely.
  bool ablate_domain = false;
  // Return the parameters of the best validation epoch instead of the last.
  bool restore_best = false;
  std::uint64_t seed = 0;
  ModelConfig model;  // input_dim / num_actions are taken from the data
};

// Schedules at training progress p in [0, 1].
double lambda_at(const TrainConfig& config, double progress);
double learning_rate_at(const TrainConfig& config, double progress);

struct EpochTrace {
  int epoch = 0;
  double policy_loss = 0.0;
  double domain_loss_source = 0.0;
  double domain_loss_target = 0.0;
  double total = 0.0;
  double lambda = 0.0;
  double learning_rate = 0.0;
  double validation_loss = 0.0;
};

struct TrainResult {
  // Last iterate, or the best validation epoch under restore_best.
  DacpolModel model;
  int best_epoch = 0;
  std::vector<EpochTrace> trace;
  bool early_stopped = false;
};

// Saddle-point training. Every iteration draws a fresh batch from the train
// split; stops at max_epochs or when validation policy loss has not improved
// by min_improvement for `patience` epochs. Throws TrainingError on a
// non-finite loss.
TrainResult train(const BanditDataset& ds, const DataSplit& split, const TrainConfig& config);

double mean_policy_loss(const DacpolModel& model, const BanditDataset& ds, std::span<const std::size_t> rows);

// argmax of the policy block, lowest index on ties.
int recommend(const DacpolModel& model, std::span<const double> x);
std::vector<int> recommend(const DacpolModel& model, const Matrix& x);
int argmax_lowest(std::span<const double> values);

void write_trace_csv(std::ostream& out, std::span<const EpochTrace> trace);

void save_model(std::ostream& out, const DacpolModel& model);
DacpolModel load_model(std::istream& in);

}  // namespace dacpol
