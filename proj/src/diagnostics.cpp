#include <cmath>
#include <vector>

#include "dacpol/baselines.hpp"
#include "dacpol/dacpol.hpp"
#include "dacpol/errors.hpp"
#include "dacpol/estimators.hpp"
#include "dacpol/harness.hpp"
#include "dacpol/nnet.hpp"
#include "dacpol/rng.hpp"

namespace dacpol::harness {
namespace {

std::uint64_t combine(std::uint64_t h, std::uint64_t v) { return (h ^ v) * 0x100000001b3ULL + 0x9e3779b97f4a7c15ULL; }

struct NetInstance {
  DacpolModel model;
  Batch batch;
  double lambda = 0.0;
};

NetInstance make_net_instance(std::uint64_t seed) {
  Rng rng(seed);
  const int s = 3 + static_cast<int>(rng.below(4));
  const int k = 2 + static_cast<int>(rng.below(3));
  const std::size_t m = 6;
  const std::size_t n = 4 * m;
  BanditDataset ds;
  ds.features.resize(static_cast<Eigen::Index>(n), s);
  for (Eigen::Index i = 0; i < ds.features.size(); ++i) ds.features.data()[i] = rng.normal();
  ds.potential_outcomes.resize(static_cast<Eigen::Index>(n), k);
  for (Eigen::Index i = 0; i < ds.potential_outcomes.size(); ++i) ds.potential_outcomes.data()[i] = rng.uniform();
  for (std::size_t i = 0; i < n; ++i) {
    const int a = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    ds.actions.push_back(a);
    ds.outcomes.push_back(ds.potential_outcomes(static_cast<Eigen::Index>(i), a));
  }
  ModelConfig mc;
  mc.input_dim = s;
  mc.num_actions = k;
  mc.hidden_width = 5 + static_cast<int>(rng.below(4));
  mc.rep_dim = 3 + static_cast<int>(rng.below(3));
  NetInstance inst;
  inst.model = make_model(mc, rng.next());
  inst.batch = generate_batch(ds, m, rng.next());
  inst.lambda = rng.uniform(0.1, 2.0);
  return inst;
}

// Recomputes every ReLU sign pattern the losses pass through.
std::uint64_t model_pattern(const DacpolModel& model, const Batch& batch) {
  const auto m = static_cast<Eigen::Index>(batch.size());
  Matrix x(2 * m, batch.source_features.cols());
  x << batch.source_features, batch.target_features;
  nnet::ForwardCache rep, pol, dom;
  const Matrix z = nnet::forward(model.representation, x, &rep);
  nnet::forward(model.policy, Matrix(z.topRows(m)), &pol);
  Matrix din = Matrix::Zero(2 * m, z.cols() + model.config.num_actions);
  din.leftCols(z.cols()) = z;
  for (Eigen::Index i = 0; i < 2 * m; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    const int a = i < m ? batch.source_actions[iu] : batch.target_actions[iu - static_cast<std::size_t>(m)];
    din(i, z.cols() + a) = 1.0;
  }
  nnet::forward(model.domain, din, &dom);
  std::uint64_t h = nnet::activation_pattern(model.representation, rep);
  h = combine(h, nnet::activation_pattern(model.policy, pol));
  return combine(h, nnet::activation_pattern(model.domain, dom));
}

void append(std::vector<double*>& dst, std::vector<double*> src) { dst.insert(dst.end(), src.begin(), src.end()); }

void append_scaled(std::vector<double>& dst, const nnet::NetworkGradient& g, double scale) {
  for (double v : nnet::flatten(g)) dst.push_back(scale * v);
}

void accumulate(ObjectiveCheck& total, const nnet::GradCheckReport& r) {
  ++total.instances;
  total.max_relative_error = std::max(total.max_relative_error, r.max_relative_error);
  total.checked += r.checked;
  total.skipped += r.skipped;
}

void check_networks(std::uint64_t seed, ObjectiveCheck& policy, ObjectiveCheck& domain, ObjectiveCheck& total) {
  NetInstance inst = make_net_instance(seed);
  DacpolModel& model = inst.model;
  const Batch& batch = inst.batch;
  auto g0 = DacpolGradients::zeros_like(model);
  auto g1 = DacpolGradients::zeros_like(model);
  auto gl = DacpolGradients::zeros_like(model);
  compute_gradients(model, batch, 0.0, g0);
  compute_gradients(model, batch, 1.0, g1);
  compute_gradients(model, batch, inst.lambda, gl);

  {
    std::vector<double*> params = nnet::parameter_pointers(model.representation);
    append(params, nnet::parameter_pointers(model.policy));
    std::vector<double> analytic;
    append_scaled(analytic, g0.representation, 1.0);
    append_scaled(analytic, g0.policy, 1.0);
    accumulate(policy, nnet::check_gradient(params, analytic, [&] {
      return nnet::Probe{evaluate_losses(model, batch, 0.0).policy, model_pattern(model, batch)};
    }));
  }
  {
    std::vector<double*> params = nnet::parameter_pointers(model.representation);
    append(params, nnet::parameter_pointers(model.domain));
    auto rep = g0.representation;
    rep.add_scaled(g1.representation, -1.0);
    std::vector<double> analytic;
    append_scaled(analytic, rep, 1.0);
    append_scaled(analytic, g0.domain, 1.0);
    accumulate(domain, nnet::check_gradient(params, analytic, [&] {
      return nnet::Probe{evaluate_losses(model, batch, 0.0).domain(), model_pattern(model, batch)};
    }));
  }
  {
    std::vector<double*> params = nnet::parameter_pointers(model.representation);
    append(params, nnet::parameter_pointers(model.policy));
    append(params, nnet::parameter_pointers(model.domain));
    std::vector<double> analytic;
    append_scaled(analytic, gl.representation, 1.0);
    append_scaled(analytic, gl.policy, 1.0);
    append_scaled(analytic, gl.domain, -inst.lambda);
    accumulate(total, nnet::check_gradient(params, analytic, [&] {
      return nnet::Probe{evaluate_losses(model, batch, inst.lambda).total, model_pattern(model, batch)};
    }));
  }
}

void check_crm(std::uint64_t seed, bool variance_penalty, ObjectiveCheck& out) {
  Rng rng(seed);
  const int s = 3 + static_cast<int>(rng.below(4));
  const int k = 2 + static_cast<int>(rng.below(3));
  const Eigen::Index n = 20;
  Matrix x(n, s);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  Matrix logits(n, k);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = rng.normal();
  const Matrix props = nnet::softmax_rows(logits);
  std::vector<int> actions;
  std::vector<double> outcomes;
  for (Eigen::Index i = 0; i < n; ++i) {
    actions.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(k))));
    outcomes.push_back(rng.uniform());
  }
  baselines::CrmConfig config;
  config.clip = rng.uniform(1.5, 4.0);
  config.variance_weight = variance_penalty ? rng.uniform(0.1, 2.0) : 0.0;
  baselines::LinearPolicy policy{Matrix(s, k)};
  for (Eigen::Index i = 0; i < policy.weights.size(); ++i) policy.weights.data()[i] = rng.normal();

  const auto base = baselines::crm_objective(x, actions, outcomes, policy, props, config);
  std::vector<double*> params;
  std::vector<double> analytic;
  for (Eigen::Index i = 0; i < policy.weights.rows(); ++i)
    for (Eigen::Index j = 0; j < policy.weights.cols(); ++j) {
      params.push_back(&policy.weights(i, j));
      analytic.push_back(base.gradient(i, j));
    }
  accumulate(out, nnet::check_gradient(params, analytic, [&] {
    const auto obj = baselines::crm_objective(x, actions, outcomes, policy, props, config);
    const Matrix pi = policy.probabilities(x);
    std::uint64_t pattern = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto a = actions[static_cast<std::size_t>(i)];
      pattern = combine(pattern, pi(i, a) / props(i, a) < config.clip ? 1 : 2);
    }
    return nnet::Probe{obj.value, pattern};
  }));
}

}  // namespace

std::vector<ObjectiveCheck> run_gradient_checks(int instances, std::uint64_t seed) {
  std::vector<ObjectiveCheck> checks{{"policy"}, {"domain"}, {"total"}, {"ips"}, {"poem"}};
  for (int i = 0; i < instances; ++i) {
    const auto inst_seed = mix_seed(seed, static_cast<std::uint64_t>(i));
    check_networks(inst_seed, checks[0], checks[1], checks[2]);
    check_crm(mix_seed(inst_seed, 1), false, checks[3]);
    check_crm(mix_seed(inst_seed, 2), true, checks[4]);
  }
  return checks;
}

std::vector<BoundRow> bound_report(const ExperimentConfig& config, double delta) {
  const auto seed = replication_seed(config.seed, 0);
  const ReplicationData rep = make_replication(config, config.sigma, seed);
  TrainConfig tc = config.train;
  tc.seed = mix_seed(seed, 20);
  const TrainResult trained = train(rep.data, rep.split, tc);
  const DacpolModel& model = trained.model;
  const int k = rep.data.num_actions();

  const BanditDataset train_rows = rep.data.subset(rep.split.train);
  const BanditDataset test_rows = rep.data.subset(rep.split.test);
  const Matrix z_train = nnet::forward(model.representation, train_rows.features);
  const Matrix z_test = nnet::forward(model.representation, test_rows.features);
  Rng rng(mix_seed(seed, 30));
  std::vector<int> pseudo(train_rows.size());
  for (auto& a : pseudo) a = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));

  estimators::FinitePolicyClass H;
  for (int a = 0; a < k; ++a) H.add("constant_" + std::to_string(a), [a](std::span<const double>) { return a; });
  H.add("trained", [&model](std::span<const double> z) {
    Matrix row(1, static_cast<Eigen::Index>(z.size()));
    for (std::size_t j = 0; j < z.size(); ++j) row(0, static_cast<Eigen::Index>(j)) = z[j];
    const Matrix logits = nnet::forward(model.policy, row);
    return argmax_lowest(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.cols())));
  });

  const estimators::PairSample source{z_train, train_rows.actions};
  const estimators::PairSample target{z_train, pseudo};
  const double d_hat = estimators::empirical_h_divergence_exact(source, target, H);
  std::vector<BoundRow> rows;
  for (std::size_t i = 0; i < H.size(); ++i) {
    estimators::BoundInputs in;
    in.v_hat_source = estimators::v_hat_source(z_train, train_rows.actions, train_rows.outcomes, H.policies[i], k);
    in.d_hat = d_hat;
    in.k = k;
    in.n = train_rows.size();
    in.delta = delta;
    in.complexity = estimators::finite_class_complexity(H.size());
    const auto terms = estimators::lower_bound_terms(in);
    rows.push_back({H.names[i], terms.v_hat_source, d_hat, terms.beta, terms.bound,
                    estimators::true_policy_value(test_rows, estimators::apply_policy(H.policies[i], z_test))});
  }
  return rows;
}

}  // namespace dacpol::harness
