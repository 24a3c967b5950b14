#include "dacpol/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dacpol/errors.hpp"
#include "dacpol/nnet.hpp"

namespace dacpol::estimators {
namespace {

std::span<const double> row_span(const Matrix& m, Eigen::Index i) {
  return {m.data() + i * m.cols(), static_cast<std::size_t>(m.cols())};
}

// Largest eigenvalue of X^T X / n by power iteration (X gets a ones column
// when `intercept` is set).
double gram_spectral_norm(const Matrix& x, bool intercept) {
  const auto n = static_cast<double>(x.rows());
  const Eigen::Index d = x.cols() + (intercept ? 1 : 0);
  Vector v = Vector::Ones(d) / std::sqrt(static_cast<double>(d));
  double eig = 0.0;
  for (int it = 0; it < 100; ++it) {
    Vector xv = x * v.head(x.cols());
    if (intercept) xv.array() += v[d - 1];
    Vector w(d);
    w.head(x.cols()) = x.transpose() * xv / n;
    if (intercept) w[d - 1] = xv.sum() / n;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    const double next = v.dot(w);
    v = w / norm;
    if (std::abs(next - eig) <= 1e-10 * std::max(1.0, next)) {
      eig = next;
      break;
    }
    eig = next;
  }
  // Power iteration approaches from below; pad so 1/L stays a safe step.
  return 1.05 * eig + 1e-12;
}

}  // namespace

void FinitePolicyClass::add(std::string name, Policy policy) {
  names.push_back(std::move(name));
  policies.push_back(std::move(policy));
}

std::vector<int> apply_policy(const Policy& h, const Matrix& z) {
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) out[static_cast<std::size_t>(i)] = h(row_span(z, i));
  return out;
}

double v_hat_source(std::span<const int> recommended, std::span<const int> actions,
                    std::span<const double> outcomes, int k) {
  if (actions.empty()) throw InsufficientDataError("empty sample");
  if (recommended.size() != actions.size() || outcomes.size() != actions.size())
    throw ShapeError("sample columns differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < actions.size(); ++i)
    if (recommended[i] == actions[i]) total += outcomes[i];
  return static_cast<double>(k) * total / static_cast<double>(actions.size());
}

double v_hat_source(const Matrix& z, std::span<const int> actions, std::span<const double> outcomes,
                    const Policy& h, int k) {
  if (static_cast<std::size_t>(z.rows()) != actions.size()) throw ShapeError("z rows differ from action count");
  return v_hat_source(apply_policy(h, z), actions, outcomes, k);
}

double v_hat_source_stochastic(const Matrix& q, std::span<const int> actions, std::span<const double> outcomes) {
  if (actions.empty()) throw InsufficientDataError("empty sample");
  if (static_cast<std::size_t>(q.rows()) != actions.size() || outcomes.size() != actions.size())
    throw ShapeError("probability rows differ from sample size");
  double total = 0.0;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    const int a = actions[i];
    if (a < 0 || a >= q.cols()) throw ShapeError("logged action outside probability row");
    total += outcomes[i] * q(static_cast<Eigen::Index>(i), a);
  }
  return static_cast<double>(q.cols()) * total / static_cast<double>(actions.size());
}

double true_policy_value(const BanditDataset& ds, std::span<const int> recommended) {
  if (ds.potential_outcomes.rows() == 0 || ds.potential_outcomes.cols() == 0)
    throw DataError("potential outcomes are missing");
  if (recommended.size() != static_cast<std::size_t>(ds.potential_outcomes.rows()))
    throw ShapeError("one recommendation per row required");
  double total = 0.0;
  for (std::size_t i = 0; i < recommended.size(); ++i) {
    const int a = recommended[i];
    if (a < 0 || a >= ds.num_actions()) throw ShapeError("recommended action outside [0, k)");
    total += ds.potential_outcomes(static_cast<Eigen::Index>(i), a);
  }
  return total / static_cast<double>(recommended.size());
}

double true_policy_value(const BanditDataset& ds, const Policy& h) {
  return true_policy_value(ds, apply_policy(h, ds.features));
}

double characteristic_mass(const PairSample& sample, const Policy& h) {
  if (sample.actions.empty()) throw InsufficientDataError("empty sample");
  if (static_cast<std::size_t>(sample.z.rows()) != sample.actions.size())
    throw ShapeError("z rows differ from action count");
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < sample.z.rows(); ++i)
    if (h(row_span(sample.z, i)) == sample.actions[static_cast<std::size_t>(i)]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(sample.actions.size());
}

double empirical_h_divergence_exact(const PairSample& source, const PairSample& target, const FinitePolicyClass& H) {
  if (H.size() == 0) throw std::invalid_argument("empty policy class");
  double sup = 0.0;
  for (const auto& h : H.policies)
    sup = std::max(sup, std::abs(characteristic_mass(target, h) - characteristic_mass(source, h)));
  return sup;
}

Matrix pair_features(const Matrix& z, std::span<const int> actions, int k) {
  if (static_cast<std::size_t>(z.rows()) != actions.size()) throw ShapeError("z rows differ from action count");
  const Eigen::Index d = z.cols();
  Matrix out = Matrix::Zero(z.rows(), k * (1 + d));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const int a = actions[static_cast<std::size_t>(i)];
    if (a < 0 || a >= k) throw ShapeError("action outside [0, k)");
    out(i, a) = 1.0;
    out.block(i, k + a * d, 1, d) = z.row(i);
  }
  return out;
}

namespace {

// Logistic regression with intercept; returns (weights, intercept).
std::pair<Vector, double> fit_logistic(const Matrix& x, const Vector& labels, const ProxyConfig& config) {
  const auto n = static_cast<double>(x.rows());
  const double lipschitz = 0.25 * gram_spectral_norm(x, true) + config.l2;
  const double step = 1.0 / std::max(lipschitz, 1e-12);
  Vector w = Vector::Zero(x.cols());
  double b = 0.0;
  for (int it = 0; it < config.iterations; ++it) {
    Vector t = x * w;
    t.array() += b;
    const Vector residual = t.unaryExpr([](double v) { return nnet::sigmoid(v); }) - labels;
    const Vector gw = x.transpose() * residual / n + config.l2 * w;
    const double gb = residual.sum() / n;
    w -= step * gw;
    b -= step * gb;
  }
  return {w, b};
}

}  // namespace

ProxyDivergence proxy_h_divergence(const Matrix& source, const Matrix& target, const ProxyConfig& config) {
  if (source.rows() == 0 || target.rows() == 0) throw InsufficientDataError("proxy divergence needs both samples");
  if (source.cols() != target.cols()) throw ShapeError("source and target feature widths differ");
  if (config.folds < 2) throw std::invalid_argument("proxy divergence needs at least two folds");
  const int folds = config.folds;

  ProxyDivergence out;
  double error_sum = 0.0;
  for (int f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> train_s, train_t, test_s, test_t;
    for (Eigen::Index i = 0; i < source.rows(); ++i) (i % folds == f ? test_s : train_s).push_back(i);
    for (Eigen::Index i = 0; i < target.rows(); ++i) (i % folds == f ? test_t : train_t).push_back(i);
    if (train_s.empty() || train_t.empty() || test_s.empty() || test_t.empty())
      throw InsufficientDataError("fold " + std::to_string(f) + " lacks one of the two domains");

    const auto n_train = static_cast<Eigen::Index>(train_s.size() + train_t.size());
    Matrix x(n_train, source.cols());
    Vector labels(n_train);
    Eigen::Index r = 0;
    for (auto i : train_s) {
      x.row(r) = source.row(i);
      labels[r++] = 0.0;
    }
    for (auto i : train_t) {
      x.row(r) = target.row(i);
      labels[r++] = 1.0;
    }
    const auto [w, b] = fit_logistic(x, labels, config);
    std::size_t wrong_s = 0, wrong_t = 0;
    for (auto i : test_s)
      if (source.row(i).dot(w) + b > 0.0) ++wrong_s;
    for (auto i : test_t)
      if (target.row(i).dot(w) + b < 0.0) ++wrong_t;
    const double balanced = 0.5 * (static_cast<double>(wrong_s) / static_cast<double>(test_s.size()) +
                                   static_cast<double>(wrong_t) / static_cast<double>(test_t.size()));
    out.fold_errors.push_back(balanced);
    error_sum += balanced;
  }
  out.balanced_error = error_sum / static_cast<double>(folds);
  out.value = std::clamp(2.0 * (1.0 - 2.0 * out.balanced_error), 0.0, 2.0);
  return out;
}

double deviation_beta(double delta, std::size_t n, double complexity) {
  if (n < 16) throw std::invalid_argument("deviation bound requires n >= 16");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
  if (!(complexity >= delta) || !std::isfinite(complexity))
    throw std::invalid_argument("complexity term must be finite and at least delta");
  const double log_term = std::log(complexity / delta);
  const double nn = static_cast<double>(n);
  return std::sqrt(18.0 * log_term / nn) + 15.0 * log_term / nn;
}

void BoundInputs::validate() const {
  if (n < 16) throw std::invalid_argument("bound requires n >= 16");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
  if (!(d_hat >= 0.0)) throw std::invalid_argument("divergence estimate must be nonnegative");
  if (k < 2) throw std::invalid_argument("bound needs k >= 2");
  if (!(complexity >= delta)) throw std::invalid_argument("complexity term must be at least delta");
}

BoundTerms lower_bound_terms(const BoundInputs& b) {
  b.validate();
  BoundTerms t;
  t.v_hat_source = b.v_hat_source;
  t.divergence_penalty = static_cast<double>(b.k) * b.d_hat;
  t.beta = deviation_beta(b.delta, b.n, b.complexity);
  t.deviation_penalty = 3.0 * static_cast<double>(b.k) * t.beta;
  t.bound = b.v_hat_source - t.divergence_penalty - t.deviation_penalty;
  return t;
}

double value_lower_bound(const BoundInputs& b) { return lower_bound_terms(b).bound; }

PropensityFit estimate_propensities(const Matrix& features, std::span<const int> actions, int k, double reg,
                                    const PropensityOptions& options) {
  const auto n = features.rows();
  const auto s = features.cols();
  if (static_cast<std::size_t>(n) != actions.size()) throw ShapeError("feature rows differ from action count");
  if (n < k) throw InsufficientDataError("propensity model needs at least k rows");
  if (!(reg >= 0.0)) throw std::invalid_argument("regularization must be nonnegative");

  Matrix onehot = Matrix::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int a = actions[static_cast<std::size_t>(i)];
    if (a < 0 || a >= k) throw ShapeError("action outside [0, k)");
    onehot(i, a) = 1.0;
  }
  const double nn = static_cast<double>(n);

  // Block-diagonal step: the intercepts are unpenalized, so they keep a
  // large step even when reg dominates the slope curvature.
  const double data_curvature = 0.5 * gram_spectral_norm(features, true);
  const double step_w = 1.0 / (data_curvature + reg);
  const double step_b = 1.0 / std::max(data_curvature, 1e-12);

  auto objective_and_gradient = [&](const Matrix& w, const RowVector& b, Matrix& gw, RowVector& gb) {
    Matrix logits = features * w;
    logits.rowwise() += b;
    double nll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double shift = logits.row(i).maxCoeff();
      logits.row(i) = (logits.row(i).array() - shift).exp();
      const double z = logits.row(i).sum();
      logits.row(i) /= z;
      nll -= std::log(std::max(logits(i, actions[static_cast<std::size_t>(i)]), 1e-300));
    }
    const Matrix residual = logits - onehot;
    gw = features.transpose() * residual / nn + reg * w;
    gb = residual.colwise().sum() / nn;
    return nll / nn + 0.5 * reg * w.squaredNorm();
  };

  PropensityFit fit;
  Matrix w = Matrix::Zero(s, k);
  RowVector b = RowVector::Zero(k);
  Matrix w_prev = w;
  RowVector b_prev = b;
  Matrix gw(s, k);
  RowVector gb(k);
  double momentum = 1.0;

  fit.iterations = options.max_iterations;
  for (int it = 0; it < options.max_iterations; ++it) {
    // Nesterov extrapolation point; the gradient there drives both the step
    // and the convergence test.
    const double next_momentum = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
    const double beta = (momentum - 1.0) / next_momentum;
    const Matrix yw = w + beta * (w - w_prev);
    const RowVector yb = b + beta * (b - b_prev);
    objective_and_gradient(yw, yb, gw, gb);
    fit.gradient_norm = std::sqrt(gw.squaredNorm() + gb.squaredNorm());
    if (fit.gradient_norm < options.tolerance) {
      w = yw;
      b = yb;
      fit.iterations = it;
      fit.converged = true;
      break;
    }
    w_prev = w;
    b_prev = b;
    w = yw - step_w * gw;
    b = yb - step_b * gb;
    // Gradient-based adaptive restart.
    const double progress = (gw.array() * (w - w_prev).array()).sum() + (gb.array() * (b - b_prev).array()).sum();
    momentum = progress > 0.0 ? 1.0 : next_momentum;
  }
  fit.weights = std::move(w);
  fit.intercepts = std::move(b);
  fit.probabilities = predict_propensities(fit, features);
  return fit;
}

PropensityFit estimate_propensities(const BanditDataset& ds, double reg, const PropensityOptions& options) {
  return estimate_propensities(ds.features, ds.actions, ds.num_actions(), reg, options);
}

Matrix predict_propensities(const PropensityFit& fit, const Matrix& features) {
  if (features.cols() != fit.weights.rows()) throw ShapeError("features do not match propensity model");
  Matrix logits = features * fit.weights;
  logits.rowwise() += fit.intercepts;
  return nnet::softmax_rows(logits);
}

}  // namespace dacpol::estimators
