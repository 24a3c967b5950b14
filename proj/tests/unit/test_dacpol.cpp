#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "dacpol/dacpol.hpp"
#include "dacpol/errors.hpp"
#include "support.hpp"

namespace dacpol {
namespace {

DacpolModel small_model(int s, int k, std::uint64_t seed, bool with_action = true) {
  ModelConfig c;
  c.input_dim = s;
  c.num_actions = k;
  c.hidden_width = 6;
  c.rep_dim = 4;
  c.domain_uses_action = with_action;
  return make_model(c, seed);
}

void zero_last_layer(nnet::Network& net) {
  net.layers.back().weights.setZero();
  net.layers.back().bias.setZero();
}

TEST(ModelConfig, DefaultWidths) {
  ModelConfig c;
  c.input_dim = 36;
  c.num_actions = 6;
  const auto r = c.resolved();
  EXPECT_EQ(r.hidden_width, 36);
  EXPECT_EQ(r.rep_dim, 18);
  c.input_dim = 10;
  EXPECT_EQ(c.resolved().hidden_width, 32);
  EXPECT_EQ(c.resolved().rep_dim, 16);
}

TEST(MakeModel, BlockArityChains) {
  for (bool with_action : {true, false}) {
    const auto m = small_model(5, 3, 1, with_action);
    EXPECT_EQ(m.representation.layers.size(), 2u);
    EXPECT_EQ(m.policy.layers.size(), 3u);
    EXPECT_EQ(m.domain.layers.size(), 2u);
    EXPECT_EQ(m.representation.input_dim(), 5);
    EXPECT_EQ(m.representation.output_dim(), 4);
    EXPECT_EQ(m.policy.input_dim(), 4);
    EXPECT_EQ(m.policy.output_dim(), 3);
    EXPECT_EQ(m.domain.input_dim(), with_action ? 7 : 4);
    EXPECT_EQ(m.domain.output_dim(), 1);
  }
}

TEST(ModelForward, ZeroHeadsGiveUniformAndHalf) {
  auto m = small_model(4, 5, 2);
  zero_last_layer(m.policy);
  zero_last_layer(m.domain);
  Rng rng(1);
  const Matrix x = testing::random_matrix(6, 4, rng);
  const std::vector<int> a{0, 1, 2, 3, 4, 0};
  const auto out = model_forward(m, x, a);
  EXPECT_TRUE((out.q.array() == 0.2).all());
  EXPECT_TRUE((out.p.array() == 0.5).all());
}

TEST(ModelForward, DeterministicAndShapeChecked) {
  const auto a = small_model(4, 3, 9);
  const auto b = small_model(4, 3, 9);
  Rng rng(2);
  const Matrix x = testing::random_matrix(5, 4, rng);
  const std::vector<int> acts{0, 1, 2, 0, 1};
  const auto oa = model_forward(a, x, acts);
  const auto ob = model_forward(b, x, acts);
  EXPECT_EQ(oa.z, ob.z);
  EXPECT_EQ(oa.q, ob.q);
  EXPECT_EQ(oa.p, ob.p);
  EXPECT_THROW(model_forward(a, Matrix::Zero(2, 3), std::vector<int>{0, 1}), ShapeError);
}

TEST(GenerateBatch, SmallExampleIsDisjoint) {
  const auto ds = testing::random_bandit(4, 2, 3, 1);
  const auto b = generate_batch(ds, 2, 7);
  EXPECT_EQ(b.source_rows.size(), 2u);
  EXPECT_EQ(b.target_rows.size(), 2u);
  for (auto s : b.source_rows)
    for (auto t : b.target_rows) EXPECT_NE(s, t);
}

TEST(GenerateBatch, TooLargeIsInsufficientData) {
  const auto ds = testing::random_bandit(5, 2, 3, 1);
  EXPECT_THROW(generate_batch(ds, 3, 1), InsufficientDataError);
}

TEST(GenerateBatch, ZeroSizeGivesEmptySets) {
  const auto ds = testing::random_bandit(5, 2, 3, 1);
  const auto b = generate_batch(ds, 0, 1);
  EXPECT_EQ(b.size(), 0u);
  EXPECT_TRUE(b.target_rows.empty());
}

TEST(GenerateBatch, DisjointnessHoldsAcrossSeeds) {
  const auto ds = testing::random_bandit(60, 3, 4, 2);
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const std::size_t m = 1 + seed % 30;
    const auto b = generate_batch(ds, m, seed);
    ASSERT_EQ(b.source_rows.size(), m);
    ASSERT_EQ(b.target_rows.size(), m);
    std::set<std::size_t> all(b.source_rows.begin(), b.source_rows.end());
    all.insert(b.target_rows.begin(), b.target_rows.end());
    ASSERT_EQ(all.size(), 2 * m);
    for (std::size_t i = 0; i < m; ++i) {
      ASSERT_EQ(b.source_actions[i], ds.actions[b.source_rows[i]]);
      ASSERT_EQ(b.source_outcomes[i], ds.outcomes[b.source_rows[i]]);
      ASSERT_GE(b.target_actions[i], 0);
      ASSERT_LT(b.target_actions[i], 4);
    }
  }
}

TEST(GenerateBatch, PseudoActionsAreUniform) {
  const auto ds = testing::random_bandit(12000, 1, 6, 3);
  std::vector<double> counts(6);
  std::size_t total = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto b = generate_batch(ds, 6000, seed);
    for (int a : b.target_actions) ++counts[static_cast<std::size_t>(a)];
    total += b.target_actions.size();
  }
  const double p = 1.0 / 6;
  const double sd = std::sqrt(static_cast<double>(total) * p * (1 - p));
  for (double c : counts) EXPECT_NEAR(c, static_cast<double>(total) * p, 3 * sd);
}

TEST(PolicyLoss, Examples) {
  const double q[] = {0.5, 0.5};
  EXPECT_EQ(policy_loss(0.0, 0, q), 0.0);
  const double sure[] = {0.0, 1.0};
  EXPECT_EQ(policy_loss(1.0, 1, sure), 0.0);
  EXPECT_NEAR(policy_loss(1.0, 0, q), 2.0 * std::log(2.0), 1e-15);
  EXPECT_NEAR(policy_loss(1.0, 0, sure), -2.0 * std::log(kProbabilityFloor), 1e-9);
  EXPECT_TRUE(std::isfinite(policy_loss(1.0, 0, sure)));
  EXPECT_THROW(policy_loss(1.0, 2, q), std::out_of_range);
}

TEST(DomainLoss, Examples) {
  EXPECT_NEAR(domain_loss(1, 1.0), 0.0, 1e-11);
  EXPECT_NEAR(domain_loss(0, 0.5), std::log(2.0), 1e-15);
  EXPECT_NEAR(domain_loss(1, 0.5), std::log(2.0), 1e-15);
  EXPECT_TRUE(std::isfinite(domain_loss(1, 0.0)));
  EXPECT_TRUE(std::isfinite(domain_loss(0, 1.0)));
}

TEST(TotalLoss, Examples) {
  const double lp[] = {1.0, 3.0};
  const double ds[] = {0.5};
  const double dt[] = {0.7};
  EXPECT_NEAR(total_loss(lp, ds, dt, 2.0), -0.4, 1e-15);
  EXPECT_DOUBLE_EQ(total_loss(lp, ds, dt, 0.0), 2.0);
  const double zero[] = {0.0, 0.0};
  EXPECT_NEAR(total_loss(zero, ds, dt, 1.0), -1.2, 1e-15);
  EXPECT_THROW(total_loss(std::span<const double>(), ds, dt, 1.0), InsufficientDataError);
}

// Independent two-pass computation: policy-only and domain-only gradients
// of the representation, each through its own backward pass.
TEST(GradientReversal, RepresentationGradientMatchesTwoPassOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ds = testing::random_bandit(30, 4, 3, seed);
    const auto model = small_model(4, 3, seed + 100);
    const auto batch = generate_batch(ds, 8, seed);
    const double lambda = 0.3 + 0.1 * static_cast<double>(seed);
    auto grads = DacpolGradients::zeros_like(model);
    compute_gradients(model, batch, lambda, grads);

    auto g0 = DacpolGradients::zeros_like(model);
    compute_gradients(model, batch, 0.0, g0);
    // Domain-only representation gradient: drop the policy term by zeroing outcomes.
    Batch no_policy = batch;
    std::fill(no_policy.source_outcomes.begin(), no_policy.source_outcomes.end(), 0.0);
    auto gd = DacpolGradients::zeros_like(model);
    compute_gradients(model, no_policy, -1.0, gd);  // -(-1) * dLd = +dLd

    const auto rep = nnet::flatten(grads.representation);
    const auto rp = nnet::flatten(g0.representation);
    const auto rd = nnet::flatten(gd.representation);
    for (std::size_t i = 0; i < rep.size(); ++i) ASSERT_NEAR(rep[i], rp[i] - lambda * rd[i], 1e-12);
    // Policy and domain block gradients do not depend on lambda.
    EXPECT_EQ(nnet::flatten(grads.policy), nnet::flatten(g0.policy));
    EXPECT_EQ(nnet::flatten(grads.domain), nnet::flatten(gd.domain));
  }
}

TEST(ComputeGradients, LossesAgreeWithEvaluate) {
  const auto ds = testing::random_bandit(30, 4, 3, 5);
  const auto model = small_model(4, 3, 6);
  const auto batch = generate_batch(ds, 10, 7);
  auto grads = DacpolGradients::zeros_like(model);
  const auto a = compute_gradients(model, batch, 0.7, grads);
  const auto b = evaluate_losses(model, batch, 0.7);
  EXPECT_EQ(a.policy, b.policy);
  EXPECT_EQ(a.domain_source, b.domain_source);
  EXPECT_EQ(a.domain_target, b.domain_target);
  EXPECT_DOUBLE_EQ(a.total, a.policy - 0.7 * a.domain());
}

TEST(ComputeGradients, AblationZeroesDomain) {
  const auto ds = testing::random_bandit(30, 4, 3, 5);
  const auto model = small_model(4, 3, 6);
  const auto batch = generate_batch(ds, 10, 7);
  auto ablated = DacpolGradients::zeros_like(model);
  const auto loss = compute_gradients(model, batch, 0.7, ablated, true);
  EXPECT_EQ(loss.domain(), 0.0);
  EXPECT_EQ(ablated.domain.squared_norm(), 0.0);
  auto plain = DacpolGradients::zeros_like(model);
  compute_gradients(model, batch, 0.0, plain);
  EXPECT_EQ(nnet::flatten(ablated.representation), nnet::flatten(plain.representation));
}

TEST(Schedules, AnnealedAndFixed) {
  TrainConfig c;
  c.lambda = 2.0;
  EXPECT_EQ(lambda_at(c, 0.0), 0.0);
  EXPECT_NEAR(lambda_at(c, 1.0), 2.0 * (2.0 / (1.0 + std::exp(-10.0)) - 1.0), 1e-15);
  EXPECT_LT(lambda_at(c, 0.2), lambda_at(c, 0.4));
  EXPECT_EQ(learning_rate_at(c, 0.0), 0.01);
  EXPECT_NEAR(learning_rate_at(c, 1.0), 0.01 / std::pow(11.0, 0.75), 1e-15);
  c.lambda_mode = LambdaMode::fixed;
  c.anneal_learning_rate = false;
  EXPECT_EQ(lambda_at(c, 0.5), 2.0);
  EXPECT_EQ(learning_rate_at(c, 0.5), 0.01);
}

DataSplit toy_split(std::size_t n) { return split(n, {0.6, 0.2, 0.2}, 3); }

// k = 2 clusters at +-3 on the first coordinate; the logged action is the
// best action and always pays 1.
BanditDataset separable_clusters(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  BanditDataset ds;
  ds.features.resize(static_cast<Eigen::Index>(n), 2);
  ds.potential_outcomes = Matrix::Zero(static_cast<Eigen::Index>(n), 2);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 2);
    const auto r = static_cast<Eigen::Index>(i);
    ds.features(r, 0) = (c == 0 ? -3.0 : 3.0) + 0.5 * rng.normal();
    ds.features(r, 1) = rng.normal();
    ds.potential_outcomes(r, c) = 1.0;
    ds.actions.push_back(c);
    ds.outcomes.push_back(1.0);
  }
  return ds;
}

TEST(Train, FitsSeparableClusters) {
  const auto ds = separable_clusters(400, 1);
  const auto sp = toy_split(ds.size());
  TrainConfig c;
  c.batch_size = 16;
  c.max_epochs = 200;
  c.seed = 4;
  const auto result = train(ds, sp, c);
  EXPECT_LE(result.trace.size(), 200u);
  const auto train_rows = ds.subset(sp.train);
  const auto recs = recommend(result.model, train_rows.features);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) hits += recs[i] == train_rows.actions[i];
  EXPECT_GT(static_cast<double>(hits) / static_cast<double>(recs.size()), 0.95);
}

TEST(Train, DeterministicGivenSeed) {
  const auto ds = testing::random_bandit(200, 3, 3, 8);
  const auto sp = toy_split(ds.size());
  TrainConfig c;
  c.batch_size = 16;
  c.max_epochs = 5;
  c.lambda = 0.5;
  c.seed = 11;
  const auto a = train(ds, sp, c);
  const auto b = train(ds, sp, c);
  for (std::size_t l = 0; l < a.model.representation.layers.size(); ++l)
    EXPECT_EQ(a.model.representation.layers[l].weights, b.model.representation.layers[l].weights);
  for (std::size_t l = 0; l < a.model.domain.layers.size(); ++l)
    EXPECT_EQ(a.model.domain.layers[l].weights, b.model.domain.layers[l].weights);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t e = 0; e < a.trace.size(); ++e) EXPECT_EQ(a.trace[e].total, b.trace[e].total);
}

TEST(Train, ZeroLambdaMatchesAblatedDomainBitForBit) {
  const auto ds = testing::random_bandit(200, 3, 3, 8);
  const auto sp = toy_split(ds.size());
  TrainConfig c;
  c.batch_size = 16;
  c.max_epochs = 6;
  c.lambda = 0.0;
  c.seed = 12;
  c.restore_best = false;
  TrainConfig ablated = c;
  ablated.ablate_domain = true;
  const auto a = train(ds, sp, c);
  const auto b = train(ds, sp, ablated);
  for (std::size_t l = 0; l < a.model.representation.layers.size(); ++l) {
    EXPECT_EQ(a.model.representation.layers[l].weights, b.model.representation.layers[l].weights);
    EXPECT_EQ(a.model.representation.layers[l].bias, b.model.representation.layers[l].bias);
  }
  for (std::size_t l = 0; l < a.model.policy.layers.size(); ++l)
    EXPECT_EQ(a.model.policy.layers[l].weights, b.model.policy.layers[l].weights);
  // The domain block itself only trains in the non-ablated run.
  EXPECT_NE(a.model.domain.layers[0].weights, b.model.domain.layers[0].weights);
}

TEST(Train, TraceRecordsSchedules) {
  const auto ds = testing::random_bandit(200, 3, 3, 9);
  const auto sp = toy_split(ds.size());
  TrainConfig c;
  c.batch_size = 16;
  c.max_epochs = 4;
  c.patience = 100;
  c.lambda = 1.0;
  c.seed = 2;
  const auto result = train(ds, sp, c);
  ASSERT_EQ(result.trace.size(), 4u);
  for (std::size_t e = 1; e < result.trace.size(); ++e) {
    EXPECT_GT(result.trace[e].lambda, result.trace[e - 1].lambda);
    EXPECT_LT(result.trace[e].learning_rate, result.trace[e - 1].learning_rate);
  }
  std::ostringstream csv;
  write_trace_csv(csv, result.trace);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')),
            "epoch,policy_loss,domain_loss_S,domain_loss_T,total,lambda,mu,val_loss");
}

TEST(Train, EarlyStopsWithPatience) {
  const auto ds = testing::random_bandit(200, 3, 3, 10);
  const auto sp = toy_split(ds.size());
  TrainConfig c;
  c.batch_size = 16;
  c.max_epochs = 1000;
  c.patience = 3;
  c.min_improvement = 10.0;  // nothing ever counts as an improvement after epoch 1
  c.seed = 3;
  const auto result = train(ds, sp, c);
  EXPECT_TRUE(result.early_stopped);
  EXPECT_EQ(result.trace.size(), 4u);
  EXPECT_EQ(result.best_epoch, 1);
}

TEST(Train, RejectsBadConfigurations) {
  const auto ds = testing::random_bandit(40, 3, 3, 10);
  const auto sp = toy_split(ds.size());
  TrainConfig c;
  c.batch_size = 64;
  EXPECT_THROW(train(ds, sp, c), InsufficientDataError);
  c.batch_size = 4;
  c.lambda = -1;
  EXPECT_THROW(train(ds, sp, c), std::invalid_argument);
}

TEST(Train, NonFiniteLossAbortsWithSnapshot) {
  auto ds = testing::random_bandit(100, 3, 3, 10);
  const auto sp = toy_split(ds.size());
  ds.features(static_cast<Eigen::Index>(sp.train[0]), 0) = std::numeric_limits<double>::infinity();
  TrainConfig c;
  c.batch_size = 30;
  c.max_epochs = 5;
  c.seed = 1;
  try {
    train(ds, sp, c);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
  }
}

TEST(Recommend, ArgmaxWithLowestIndexTies) {
  const double q[] = {0.1, 0.7, 0.2};
  EXPECT_EQ(argmax_lowest(q), 1);
  const double flat[] = {0.25, 0.25, 0.25, 0.25};
  EXPECT_EQ(argmax_lowest(flat), 0);

  auto m = small_model(3, 4, 5);
  zero_last_layer(m.policy);
  const double x[] = {0.3, -1.0, 2.0};
  EXPECT_EQ(recommend(m, x), 0);
}

TEST(Recommend, InvariantToIncreasingLogitTransform) {
  auto m = small_model(3, 4, 6);
  Rng rng(3);
  const Matrix x = testing::random_matrix(20, 3, rng);
  const auto before = recommend(m, x);
  // Affine map of the last layer with positive scale plus a shared offset.
  m.policy.layers.back().weights *= 3.0;
  m.policy.layers.back().bias = m.policy.layers.back().bias * 3.0 + RowVector::Constant(4, 1.5);
  EXPECT_EQ(recommend(m, x), before);
}

TEST(ModelCheckpoint, RoundTrip) {
  const auto m = small_model(5, 3, 8, false);
  std::stringstream buf;
  save_model(buf, m);
  const auto back = load_model(buf);
  EXPECT_EQ(back.config.input_dim, 5);
  EXPECT_EQ(back.config.num_actions, 3);
  EXPECT_EQ(back.config.rep_dim, 4);
  EXPECT_FALSE(back.config.domain_uses_action);
  Rng rng(1);
  const Matrix x = testing::random_matrix(4, 5, rng);
  EXPECT_EQ(model_forward(back, x).q, model_forward(m, x).q);
}

}  // namespace
}  // namespace dacpol
