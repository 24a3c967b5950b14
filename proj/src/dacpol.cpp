#include "dacpol/dacpol.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>

#include "dacpol/errors.hpp"

namespace dacpol {
namespace {

// [z | one-hot(a)] when the domain block is action-aware, z otherwise.
Matrix domain_input(const ModelConfig& config, const Matrix& z, std::span<const int> actions) {
  if (!config.domain_uses_action) return z;
  if (actions.size() != static_cast<std::size_t>(z.rows()))
    throw ShapeError("domain block needs one action per row");
  Matrix out = Matrix::Zero(z.rows(), z.cols() + config.num_actions);
  out.leftCols(z.cols()) = z;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const int a = actions[static_cast<std::size_t>(i)];
    if (a < 0 || a >= config.num_actions) throw std::out_of_range("action outside [0, k)");
    out(i, z.cols() + a) = 1.0;
  }
  return out;
}

double clamp_probability(double p) { return std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor); }

}  // namespace

ModelConfig ModelConfig::resolved() const {
  ModelConfig out = *this;
  if (out.hidden_width <= 0) out.hidden_width = std::max(input_dim, 32);
  if (out.rep_dim <= 0) out.rep_dim = std::max(input_dim / 2, 16);
  return out;
}

DacpolModel make_model(const ModelConfig& config, std::uint64_t seed) {
  const ModelConfig c = config.resolved();
  if (c.input_dim < 1) throw std::invalid_argument("model input dimension must be positive");
  if (c.num_actions < 2) throw std::invalid_argument("model needs at least two actions");
  Rng rng(seed);
  DacpolModel model;
  model.config = c;
  const int h = c.hidden_width;
  const int rep_widths[] = {c.input_dim, h, c.rep_dim};
  const int policy_widths[] = {c.rep_dim, h, h, c.num_actions};
  const int domain_widths[] = {c.rep_dim + (c.domain_uses_action ? c.num_actions : 0), h, 1};
  using nnet::Activation;
  model.representation = nnet::make_network(rep_widths, Activation::relu, Activation::relu, rng);
  model.policy = nnet::make_network(policy_widths, Activation::relu, Activation::identity, rng);
  model.domain = nnet::make_network(domain_widths, Activation::relu, Activation::identity, rng);
  return model;
}

ModelOutputs model_forward(const DacpolModel& model, const Matrix& x, std::span<const int> actions) {
  ModelOutputs out;
  out.z = nnet::forward(model.representation, x);
  out.q = nnet::softmax_rows(nnet::forward(model.policy, out.z));
  if (model.config.domain_uses_action && actions.empty()) {
    out.p = Vector::Constant(x.rows(), std::numeric_limits<double>::quiet_NaN());
    return out;
  }
  const Matrix logits = nnet::forward(model.domain, domain_input(model.config, out.z, actions));
  out.p = logits.col(0).unaryExpr([](double t) { return nnet::sigmoid(t); });
  return out;
}

Batch generate_batch(const BanditDataset& ds, std::span<const std::size_t> pool, std::size_t m, Rng& rng) {
  if (2 * m > pool.size())
    throw InsufficientDataError("batch of 2 x " + std::to_string(m) + " rows needs more than " +
                                std::to_string(pool.size()) + " available");
  const int k = ds.num_actions();
  // First m of the draw form U, the next m form V, so V excludes U.
  const std::vector<std::size_t> draw = rng.sample_without_replacement(pool.size(), 2 * m);
  Batch batch;
  const auto s = ds.features.cols();
  batch.source_features.resize(static_cast<Eigen::Index>(m), s);
  batch.target_features.resize(static_cast<Eigen::Index>(m), s);
  batch.source_rows.reserve(m);
  batch.target_rows.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t row = pool[draw[i]];
    batch.source_rows.push_back(row);
    batch.source_features.row(static_cast<Eigen::Index>(i)) = ds.features.row(static_cast<Eigen::Index>(row));
    batch.source_actions.push_back(ds.actions[row]);
    batch.source_outcomes.push_back(ds.outcomes[row]);
  }
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t row = pool[draw[m + i]];
    batch.target_rows.push_back(row);
    batch.target_features.row(static_cast<Eigen::Index>(i)) = ds.features.row(static_cast<Eigen::Index>(row));
    batch.target_actions.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(k))));
  }
  return batch;
}

Batch generate_batch(const BanditDataset& ds, std::size_t m, std::uint64_t seed) {
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  Rng rng(seed);
  return generate_batch(ds, all, m, rng);
}

double policy_loss(double y, int a, std::span<const double> q) {
  if (a < 0 || static_cast<std::size_t>(a) >= q.size()) throw std::out_of_range("logged action outside [0, k)");
  const double k = static_cast<double>(q.size());
  if (y == 0.0) return 0.0;
  return -k * y * std::log(std::max(q[static_cast<std::size_t>(a)], kProbabilityFloor));
}

double domain_loss(int d, double p) {
  const double c = clamp_probability(p);
  return d != 0 ? -std::log(c) : -std::log(1.0 - c);
}

double total_loss(std::span<const double> policy_losses, std::span<const double> domain_source,
                  std::span<const double> domain_target, double lambda) {
  if (policy_losses.empty()) throw InsufficientDataError("total loss over an empty source set");
  auto mean = [](std::span<const double> v) {
    if (v.empty()) return 0.0;
    double total = 0.0;
    for (double x : v) total += x;
    return total / static_cast<double>(v.size());
  };
  return mean(policy_losses) - lambda * (mean(domain_source) + mean(domain_target));
}

DacpolGradients DacpolGradients::zeros_like(const DacpolModel& model) {
  return {nnet::NetworkGradient::zeros_like(model.representation), nnet::NetworkGradient::zeros_like(model.policy),
          nnet::NetworkGradient::zeros_like(model.domain)};
}

namespace {

struct BatchPass {
  Matrix x;
  Matrix z;
  Matrix q;
  Vector domain_logits;
  nnet::ForwardCache rep_cache;
  nnet::ForwardCache policy_cache;
  nnet::ForwardCache domain_cache;
  LossBreakdown loss;
};

BatchPass run_batch(const DacpolModel& model, const Batch& batch, double lambda, bool ablate_domain) {
  const auto m = static_cast<Eigen::Index>(batch.size());
  if (m == 0) throw InsufficientDataError("empty source set");
  if (batch.target_rows.size() != batch.size()) throw ShapeError("source and target sets differ in size");
  BatchPass pass;
  pass.x.resize(2 * m, batch.source_features.cols());
  pass.x.topRows(m) = batch.source_features;
  pass.x.bottomRows(m) = batch.target_features;
  pass.z = nnet::forward(model.representation, pass.x, &pass.rep_cache);

  const Matrix zs = pass.z.topRows(m);
  pass.q = nnet::softmax_rows(nnet::forward(model.policy, zs, &pass.policy_cache));
  double policy_total = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto row = pass.q.row(i);
    policy_total += policy_loss(batch.source_outcomes[static_cast<std::size_t>(i)],
                                batch.source_actions[static_cast<std::size_t>(i)],
                                std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
  }
  pass.loss.policy = policy_total / static_cast<double>(m);

  if (!ablate_domain) {
    std::vector<int> actions(batch.source_actions);
    actions.insert(actions.end(), batch.target_actions.begin(), batch.target_actions.end());
    const Matrix dom_in = domain_input(model.config, pass.z, actions);
    pass.domain_logits = nnet::forward(model.domain, dom_in, &pass.domain_cache).col(0);
    double source_total = 0.0;
    double target_total = 0.0;
    for (Eigen::Index i = 0; i < 2 * m; ++i) {
      const int d = i >= m ? 1 : 0;
      const double l = domain_loss(d, nnet::sigmoid(pass.domain_logits[i]));
      (d ? target_total : source_total) += l;
    }
    pass.loss.domain_source = source_total / static_cast<double>(m);
    pass.loss.domain_target = target_total / static_cast<double>(m);
  }
  pass.loss.total = pass.loss.policy - lambda * pass.loss.domain();
  return pass;
}

}  // namespace

LossBreakdown evaluate_losses(const DacpolModel& model, const Batch& batch, double lambda) {
  return run_batch(model, batch, lambda, false).loss;
}

LossBreakdown compute_gradients(const DacpolModel& model, const Batch& batch, double lambda,
                                DacpolGradients& grads, bool ablate_domain) {
  BatchPass pass = run_batch(model, batch, lambda, ablate_domain);
  const auto m = static_cast<Eigen::Index>(batch.size());
  const double inv_m = 1.0 / static_cast<double>(m);
  const int k = model.config.num_actions;

  // d(mean policy loss)/d(logits): k*y*(q - e_a)/m, zero where the floor is active.
  Matrix dlogits = Matrix::Zero(m, k);
  for (Eigen::Index i = 0; i < m; ++i) {
    const int a = batch.source_actions[static_cast<std::size_t>(i)];
    const double y = batch.source_outcomes[static_cast<std::size_t>(i)];
    if (y == 0.0 || pass.q(i, a) < kProbabilityFloor) continue;
    dlogits.row(i) = (static_cast<double>(k) * y * inv_m) * pass.q.row(i);
    dlogits(i, a) -= static_cast<double>(k) * y * inv_m;
  }
  grads.policy.set_zero();
  const Matrix dzs = nnet::backward(model.policy, pass.policy_cache, dlogits, grads.policy);

  Matrix dz = Matrix::Zero(pass.z.rows(), pass.z.cols());
  dz.topRows(m) = dzs;

  grads.domain.set_zero();
  if (!ablate_domain) {
    // Each half enters L_d through its own mean, so every row is weighted 1/m.
    Matrix dt(2 * m, 1);
    for (Eigen::Index i = 0; i < 2 * m; ++i) {
      const double d = i >= m ? 1.0 : 0.0;
      const double p = nnet::sigmoid(pass.domain_logits[i]);
      const bool clamped = p < kProbabilityFloor || p > 1.0 - kProbabilityFloor;
      dt(i, 0) = clamped ? 0.0 : (p - d) * inv_m;
    }
    const Matrix ddom = nnet::backward(model.domain, pass.domain_cache, dt, grads.domain);
    // Gradient reversal: the representation ascends the domain loss.
    dz -= lambda * ddom.leftCols(pass.z.cols());
  }

  grads.representation.set_zero();
  nnet::backward(model.representation, pass.rep_cache, dz, grads.representation);
  return pass.loss;
}

double lambda_at(const TrainConfig& config, double progress) {
  if (config.lambda_mode == LambdaMode::fixed) return config.lambda;
  return config.lambda * (2.0 / (1.0 + std::exp(-config.lambda_gamma * progress)) - 1.0);
}

double learning_rate_at(const TrainConfig& config, double progress) {
  if (!config.anneal_learning_rate) return config.learning_rate;
  return config.learning_rate / std::pow(1.0 + config.lr_alpha * progress, config.lr_beta);
}

double mean_policy_loss(const DacpolModel& model, const BanditDataset& ds, std::span<const std::size_t> rows) {
  if (rows.empty()) return 0.0;
  Matrix x(static_cast<Eigen::Index>(rows.size()), ds.features.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = ds.features.row(static_cast<Eigen::Index>(rows[i]));
  const Matrix q = nnet::softmax_rows(nnet::forward(model.policy, nnet::forward(model.representation, x)));
  double total = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto row = q.row(static_cast<Eigen::Index>(i));
    total += policy_loss(ds.outcomes[rows[i]], ds.actions[rows[i]],
                         std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
  }
  return total / static_cast<double>(rows.size());
}

TrainResult train(const BanditDataset& ds, const DataSplit& split, const TrainConfig& config) {
  if (split.train.empty()) throw InsufficientDataError("empty training split");
  if (config.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(config.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(config.lambda >= 0.0)) throw std::invalid_argument("lambda must be nonnegative");
  if (config.max_epochs < 0) throw std::invalid_argument("negative epoch budget");
  if (2 * config.batch_size > split.train.size())
    throw InsufficientDataError("training split too small for batch size " + std::to_string(config.batch_size));

  ModelConfig model_config = config.model;
  model_config.input_dim = static_cast<int>(ds.dims());
  model_config.num_actions = ds.num_actions();

  TrainResult result;
  result.model = make_model(model_config, mix_seed(config.seed, 0));
  DacpolModel& model = result.model;
  Rng batch_rng(mix_seed(config.seed, 1));

  auto rep_state = nnet::AdamState::for_network(model.representation);
  auto policy_state = nnet::AdamState::for_network(model.policy);
  auto domain_state = nnet::AdamState::for_network(model.domain);
  auto grads = DacpolGradients::zeros_like(model);

  const std::size_t iters = config.iterations_per_epoch > 0
                                ? config.iterations_per_epoch
                                : std::max<std::size_t>(1, split.train.size() / config.batch_size);
  const double total_iters = static_cast<double>(iters) * std::max(1, config.max_epochs);

  double best_validation = std::numeric_limits<double>::infinity();
  std::optional<DacpolModel> best_model;
  int stale_epochs = 0;
  std::size_t global_iter = 0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    EpochTrace row;
    row.epoch = epoch;
    for (std::size_t it = 0; it < iters; ++it, ++global_iter) {
      const double progress = static_cast<double>(global_iter) / total_iters;
      const double lambda = lambda_at(config, progress);
      const double lr = learning_rate_at(config, progress);
      const Batch batch = generate_batch(ds, split.train, config.batch_size, batch_rng);
      const LossBreakdown loss = compute_gradients(model, batch, lambda, grads, config.ablate_domain);
      if (!std::isfinite(loss.total) || !std::isfinite(loss.policy) || !std::isfinite(loss.domain())) {
        std::ostringstream msg;
        msg << std::setprecision(17) << "non-finite loss at epoch " << epoch << " iteration " << it
            << " (policy " << loss.policy << ", domain_S " << loss.domain_source << ", domain_T "
            << loss.domain_target << ", lambda " << lambda << ", lr " << lr << ")";
        throw TrainingError(msg.str());
      }
      nnet::adam_step(model.representation, grads.representation, rep_state, lr, "representation");
      nnet::adam_step(model.policy, grads.policy, policy_state, lr, "policy");
      if (!config.ablate_domain) nnet::adam_step(model.domain, grads.domain, domain_state, lr, "domain");
      row.policy_loss += loss.policy;
      row.domain_loss_source += loss.domain_source;
      row.domain_loss_target += loss.domain_target;
      row.total += loss.total;
      row.lambda = lambda;
      row.learning_rate = lr;
    }
    const double n_iter = static_cast<double>(iters);
    row.policy_loss /= n_iter;
    row.domain_loss_source /= n_iter;
    row.domain_loss_target /= n_iter;
    row.total /= n_iter;
    row.validation_loss = mean_policy_loss(model, ds, split.validation);
    result.trace.push_back(row);

    if (split.validation.empty()) continue;
    if (row.validation_loss < best_validation - config.min_improvement) {
      best_validation = row.validation_loss;
      best_model = model;
      result.best_epoch = epoch;
      stale_epochs = 0;
    } else if (++stale_epochs >= config.patience) {
      result.early_stopped = true;
      break;
    }
  }
  if (config.restore_best && best_model) model = std::move(*best_model);
  return result;
}

int argmax_lowest(std::span<const double> values) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

int recommend(const DacpolModel& model, std::span<const double> x) {
  const Matrix row = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  return recommend(model, row).front();
}

std::vector<int> recommend(const DacpolModel& model, const Matrix& x) {
  const Matrix logits = nnet::forward(model.policy, nnet::forward(model.representation, x));
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto row = logits.row(i);
    out[static_cast<std::size_t>(i)] = argmax_lowest(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
  }
  return out;
}

void write_trace_csv(std::ostream& out, std::span<const EpochTrace> trace) {
  out << "epoch,policy_loss,domain_loss_S,domain_loss_T,total,lambda,mu,val_loss\n";
  out << std::setprecision(17);
  for (const auto& r : trace)
    out << r.epoch << ',' << r.policy_loss << ',' << r.domain_loss_source << ',' << r.domain_loss_target << ','
        << r.total << ',' << r.lambda << ',' << r.learning_rate << ',' << r.validation_loss << '\n';
}

void save_model(std::ostream& out, const DacpolModel& model) {
  const nnet::NamedBlock blocks[] = {{"representation", model.representation},
                                     {"policy", model.policy},
                                     {"domain", model.domain}};
  nnet::write_checkpoint(out, blocks);
}

DacpolModel load_model(std::istream& in) {
  auto blocks = nnet::read_checkpoint(in);
  DacpolModel model;
  bool seen[3] = {false, false, false};
  for (auto& block : blocks) {
    if (block.name == "representation") {
      model.representation = std::move(block.network);
      seen[0] = true;
    } else if (block.name == "policy") {
      model.policy = std::move(block.network);
      seen[1] = true;
    } else if (block.name == "domain") {
      model.domain = std::move(block.network);
      seen[2] = true;
    }
  }
  if (!seen[0] || !seen[1] || !seen[2]) throw DataError("checkpoint lacks a representation, policy or domain block");
  ModelConfig& c = model.config;
  c.input_dim = static_cast<int>(model.representation.input_dim());
  c.rep_dim = static_cast<int>(model.representation.output_dim());
  c.num_actions = static_cast<int>(model.policy.output_dim());
  c.hidden_width = static_cast<int>(model.representation.layers.front().out());
  if (model.policy.input_dim() != c.rep_dim) throw ShapeError("policy block does not consume the representation");
  const auto dom_in = model.domain.input_dim();
  if (dom_in == c.rep_dim) {
    c.domain_uses_action = false;
  } else if (dom_in == c.rep_dim + c.num_actions) {
    c.domain_uses_action = true;
  } else {
    throw ShapeError("domain block input width matches neither z nor (z, a)");
  }
  return model;
}

}  // namespace dacpol
