#include "dacpol/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "dacpol/errors.hpp"
#include "dacpol/estimators.hpp"
#include "dacpol/rng.hpp"
#include "json.hpp"

namespace dacpol::harness {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Seed streams inside one replication.
enum Stream : std::uint64_t {
  kLoggingStream = 10,
  kSplitStream = 11,
  kTrainActionStream = 12,
  kTestActionStream = 13,
  kIrrelevantStream = 14,
  kModelStream = 20,
  kPolicyStream = 21,
};

std::vector<std::size_t> iota_rows(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> rows(end - begin);
  std::iota(rows.begin(), rows.end(), begin);
  return rows;
}

BanditDataset concatenate(const BanditDataset& a, const BanditDataset& b) {
  BanditDataset out;
  out.features.resize(a.features.rows() + b.features.rows(), a.features.cols());
  out.features << a.features, b.features;
  out.potential_outcomes.resize(a.potential_outcomes.rows() + b.potential_outcomes.rows(),
                                a.potential_outcomes.cols());
  out.potential_outcomes << a.potential_outcomes, b.potential_outcomes;
  out.actions = a.actions;
  out.actions.insert(out.actions.end(), b.actions.begin(), b.actions.end());
  out.outcomes = a.outcomes;
  out.outcomes.insert(out.outcomes.end(), b.outcomes.begin(), b.outcomes.end());
  if (a.true_propensities && b.true_propensities) {
    Matrix p(a.true_propensities->rows() + b.true_propensities->rows(), a.true_propensities->cols());
    p << *a.true_propensities, *b.true_propensities;
    out.true_propensities = std::move(p);
  }
  return out;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

struct StatlogFiles {
  SupervisedDataset train;
  SupervisedDataset test;
};

StatlogFiles load_statlog_files(const ExperimentConfig& config) {
  return {load_statlog(config.statlog_train), load_statlog(config.statlog_test)};
}

double dacpol_loss(const DacpolModel& model, const BanditDataset& ds, std::span<const std::size_t> rows) {
  return loss_metric(recommend(model, gather_rows(ds.features, rows)), ds, rows);
}

double linear_loss(const baselines::LinearPolicy& policy, const BanditDataset& ds,
                   std::span<const std::size_t> rows) {
  return loss_metric(policy.recommend(gather_rows(ds.features, rows)), ds, rows);
}

// Outcome of one algorithm on one replication.
struct Cell {
  std::string algorithm;
  double test_loss = kNaN;
  double validation_loss = kNaN;
  double selected = kNaN;
  std::string status = "ok";
};

TrainConfig train_config(const ExperimentConfig& config, std::uint64_t seed) {
  TrainConfig tc = config.train;
  tc.seed = mix_seed(seed, kModelStream);
  return tc;
}

Matrix train_propensities(const ExperimentConfig& config, const BanditDataset& train) {
  if (config.use_true_propensities) {
    if (!train.true_propensities) throw DataError("true propensities requested but not recorded");
    return *train.true_propensities;
  }
  return estimators::estimate_propensities(train, config.propensity_reg).probabilities;
}

Cell run_crm(const ExperimentConfig& config, const ReplicationData& rep, const BanditDataset& train,
             const Matrix& props, bool variance_penalty, std::uint64_t seed) {
  Cell cell;
  cell.algorithm = variance_penalty ? "poem" : "ips";
  baselines::CrmConfig crm = config.crm;
  crm.seed = mix_seed(seed, kPolicyStream);
  const std::vector<double> ips_grid{0.0};
  const std::span<const double> grid = variance_penalty ? std::span<const double>(config.variance_grid)
                                                        : std::span<const double>(ips_grid);
  std::optional<baselines::LinearPolicy> best;
  for (double weight : grid) {
    crm.variance_weight = weight;
    const auto result = baselines::train_poem(train, props, crm);
    const double val = linear_loss(result.policy, rep.data, rep.split.validation);
    if (!best || val < cell.validation_loss) {
      best = result.policy;
      cell.validation_loss = val;
      cell.selected = weight;
    }
  }
  cell.test_loss = linear_loss(*best, rep.data, rep.split.test);
  return cell;
}

template <class F>
Cell guarded(const std::string& algorithm, F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    Cell cell;
    cell.algorithm = algorithm;
    cell.status = std::string("failed: ") + e.what();
    return cell;
  }
}

std::vector<Cell> run_algorithms(const ExperimentConfig& config, const ReplicationData& rep,
                                 std::uint64_t seed) {
  std::vector<Cell> cells;
  const bool needs_crm = std::ranges::any_of(config.algorithms, [](const std::string& a) {
    return a == "poem" || a == "ips";
  });
  std::optional<BanditDataset> train_rows;
  std::optional<Matrix> props;
  std::string props_error;
  if (needs_crm) {
    train_rows = rep.data.subset(rep.split.train);
    try {
      props = train_propensities(config, *train_rows);
    } catch (const std::exception& e) {
      props_error = e.what();
    }
  }
  for (const auto& algorithm : config.algorithms) {
    if (algorithm == "dacpol") {
      cells.push_back(guarded(algorithm, [&] {
        const auto sel = select_lambda(rep.data, rep.split, config.lambda_grid, train_config(config, seed));
        Cell cell{algorithm};
        cell.selected = sel.lambda;
        for (const auto& p : sel.curve)
          if (p.value == sel.lambda) cell.validation_loss = p.validation_loss;
        cell.test_loss = dacpol_loss(sel.model, rep.data, rep.split.test);
        return cell;
      }));
    } else if (algorithm == "dacpol0") {
      cells.push_back(guarded(algorithm, [&] {
        TrainConfig tc = train_config(config, seed);
        tc.lambda = 0.0;
        tc.ablate_domain = true;
        const auto result = train(rep.data, rep.split, tc);
        Cell cell{algorithm};
        cell.selected = 0.0;
        cell.validation_loss = dacpol_loss(result.model, rep.data, rep.split.validation);
        cell.test_loss = dacpol_loss(result.model, rep.data, rep.split.test);
        return cell;
      }));
    } else if (algorithm == "poem" || algorithm == "ips") {
      cells.push_back(guarded(algorithm, [&] {
        if (!props) throw DataError("propensity estimation failed: " + props_error);
        return run_crm(config, rep, *train_rows, *props, algorithm == "poem", seed);
      }));
    } else {
      throw std::invalid_argument("unknown algorithm '" + algorithm + "'");
    }
  }
  return cells;
}

void append_cells(std::vector<RawRow>& out, std::span<const Cell> cells, int replication, std::uint64_t seed,
                  const std::string& axis, double axis_value) {
  for (const char* metric : {"test_loss", "validation_loss"}) {
    for (const auto& c : cells) {
      RawRow row;
      row.replication = replication;
      row.seed = seed;
      row.algorithm = c.algorithm;
      row.axis = axis;
      row.axis_value = axis_value;
      row.metric = metric;
      row.loss = std::string_view(metric) == "test_loss" ? c.test_loss : c.validation_loss;
      row.selected = c.selected;
      row.status = c.status;
      out.push_back(row);
    }
  }
}

// Runs one job per (axis point, replication) and concatenates their rows in
// job order, independent of scheduling.
ExperimentReport run_grid(const ExperimentConfig& config, const std::string& kind, std::size_t points,
                          const std::function<std::vector<RawRow>(std::size_t point, int rep)>& job) {
  config.validate();
  const auto reps = static_cast<std::size_t>(config.replications);
  std::vector<std::vector<RawRow>> parts(points * reps);
  parallel_for(parts.size(), config.threads, [&](std::size_t i) {
    parts[i] = job(i / reps, static_cast<int>(i % reps));
  });
  ExperimentReport report;
  report.kind = kind;
  report.config = config;
  for (auto& p : parts) report.raw.insert(report.raw.end(), p.begin(), p.end());
  report.summary = summarize(report.raw);
  return report;
}

using json = nlohmann::ordered_json;

template <class T>
void read_optional(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

int best_action(const BanditDataset& ds, std::size_t row) {
  const auto r = ds.potential_outcomes.row(static_cast<Eigen::Index>(row));
  return argmax_lowest(std::span<const double>(r.data(), static_cast<std::size_t>(r.size())));
}

double loss_metric(std::span<const int> recommendations, const BanditDataset& ds,
                   std::span<const std::size_t> rows) {
  if (rows.empty()) throw InsufficientDataError("loss_metric needs a nonempty test set");
  if (recommendations.size() != rows.size()) throw ShapeError("one recommendation per row required");
  std::size_t hits = 0;
  for (std::size_t j = 0; j < rows.size(); ++j)
    if (recommendations[j] == best_action(ds, rows[j])) ++hits;
  return 1.0 - static_cast<double>(hits) / static_cast<double>(rows.size());
}

double loss_metric(std::span<const int> recommendations, const BanditDataset& ds) {
  const auto rows = iota_rows(0, ds.size());
  return loss_metric(recommendations, ds, rows);
}

std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (double gamma : {-4.0, -3.0, -2.0, -1.0, 0.0, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0})
    grid.push_back(std::pow(10.0, gamma) / 2.0);
  return grid;
}

LambdaSelection select_lambda(const BanditDataset& ds, const DataSplit& split, std::span<const double> grid,
                              const TrainConfig& base) {
  if (grid.empty()) throw std::invalid_argument("lambda grid is empty");
  LambdaSelection out;
  std::optional<std::size_t> best;
  for (double lambda : grid) {
    GridPoint point;
    point.value = lambda;
    point.validation_loss = kNaN;
    try {
      TrainConfig tc = base;
      tc.lambda = lambda;
      auto result = train(ds, split, tc);
      point.validation_loss = dacpol_loss(result.model, ds, split.validation);
      const bool better = !best || point.validation_loss < out.curve[*best].validation_loss ||
                          (point.validation_loss == out.curve[*best].validation_loss && lambda < out.lambda);
      if (better) {
        best = out.curve.size();
        out.lambda = lambda;
        out.model = std::move(result.model);
      }
    } catch (const TrainingError& e) {
      point.error = e.what();
    }
    out.curve.push_back(point);
  }
  if (!best) throw TrainingError("every lambda grid point failed to train");
  return out;
}

void ExperimentConfig::validate() const {
  if (replications < 1) throw std::invalid_argument("replications must be at least 1");
  if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be nonnegative");
  if (lambda_grid.empty()) throw std::invalid_argument("lambda grid is empty");
  if (variance_grid.empty()) throw std::invalid_argument("variance grid is empty");
  if (algorithms.empty()) throw std::invalid_argument("algorithm list is empty");
  for (const auto& a : algorithms)
    if (a != "dacpol" && a != "dacpol0" && a != "poem" && a != "ips")
      throw std::invalid_argument("unknown algorithm '" + a + "'");
  for (double s : sigma_list)
    if (!(s >= 0.0)) throw std::invalid_argument("sigma list entries must be nonnegative");
  for (int d : irrelevant_list)
    if (d < 0) throw std::invalid_argument("irrelevant feature counts must be nonnegative");
  if (threads < 1) throw std::invalid_argument("threads must be at least 1");
}

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw DataError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  try {
    read_optional(j, "name", c.name);
    if (j.contains("dataset")) {
      const auto kind = j.at("dataset").get<std::string>();
      if (kind == "statlog") c.dataset = DatasetKind::statlog;
      else if (kind == "synthetic-medical") c.dataset = DatasetKind::synthetic_medical;
      else throw std::invalid_argument("unknown dataset '" + kind + "'");
    }
    if (j.contains("statlog_train")) c.statlog_train = j.at("statlog_train").get<std::string>();
    if (j.contains("statlog_test")) c.statlog_test = j.at("statlog_test").get<std::string>();
    if (j.contains("medical")) {
      const auto& m = j.at("medical");
      read_optional(m, "n", c.medical.n);
      read_optional(m, "num_actions", c.medical.num_actions);
      read_optional(m, "relevant_features", c.medical.relevant_features);
      read_optional(m, "outcome_scale", c.medical.outcome_scale);
    }
    read_optional(j, "sigma", c.sigma);
    read_optional(j, "lambda_grid", c.lambda_grid);
    read_optional(j, "variance_grid", c.variance_grid);
    read_optional(j, "replications", c.replications);
    read_optional(j, "fractions", c.fractions);
    read_optional(j, "seed", c.seed);
    read_optional(j, "algorithms", c.algorithms);
    if (j.contains("output")) c.output = j.at("output").get<std::string>();
    if (j.contains("train")) {
      const auto& t = j.at("train");
      read_optional(t, "batch_size", c.train.batch_size);
      read_optional(t, "learning_rate", c.train.learning_rate);
      read_optional(t, "lambda", c.train.lambda);
      if (t.contains("lambda_mode")) {
        const auto mode = t.at("lambda_mode").get<std::string>();
        if (mode == "annealed") c.train.lambda_mode = LambdaMode::annealed;
        else if (mode == "fixed") c.train.lambda_mode = LambdaMode::fixed;
        else throw std::invalid_argument("unknown lambda_mode '" + mode + "'");
      }
      read_optional(t, "anneal_learning_rate", c.train.anneal_learning_rate);
      read_optional(t, "max_epochs", c.train.max_epochs);
      read_optional(t, "patience", c.train.patience);
      read_optional(t, "min_improvement", c.train.min_improvement);
      read_optional(t, "iterations_per_epoch", c.train.iterations_per_epoch);
      read_optional(t, "restore_best", c.train.restore_best);
      read_optional(t, "hidden_width", c.train.model.hidden_width);
      read_optional(t, "rep_dim", c.train.model.rep_dim);
      read_optional(t, "domain_uses_action", c.train.model.domain_uses_action);
    }
    if (j.contains("crm")) {
      const auto& t = j.at("crm");
      read_optional(t, "clip", c.crm.clip);
      read_optional(t, "learning_rate", c.crm.learning_rate);
      read_optional(t, "iterations", c.crm.iterations);
    }
    read_optional(j, "propensity_reg", c.propensity_reg);
    read_optional(j, "use_true_propensities", c.use_true_propensities);
    read_optional(j, "sigma_list", c.sigma_list);
    read_optional(j, "irrelevant_list", c.irrelevant_list);
    read_optional(j, "threads", c.threads);
  } catch (const json::exception& e) {
    throw DataError(std::string("bad config field: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  ExperimentConfig c = parse_config(buf.str());
  const auto base = path.parent_path();
  for (auto* p : {&c.statlog_train, &c.statlog_test})
    if (!p->empty() && p->is_relative()) *p = base / *p;
  return c;
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["dataset"] = c.dataset == DatasetKind::statlog ? "statlog" : "synthetic-medical";
  if (c.dataset == DatasetKind::statlog) {
    j["statlog_train"] = c.statlog_train.filename().string();
    j["statlog_test"] = c.statlog_test.filename().string();
  } else {
    j["medical"] = {{"n", c.medical.n},
                    {"num_actions", c.medical.num_actions},
                    {"relevant_features", c.medical.relevant_features},
                    {"outcome_scale", c.medical.outcome_scale}};
  }
  j["sigma"] = c.sigma;
  j["lambda_grid"] = c.lambda_grid;
  j["variance_grid"] = c.variance_grid;
  j["replications"] = c.replications;
  j["fractions"] = c.fractions;
  j["seed"] = c.seed;
  j["algorithms"] = c.algorithms;
  j["train"] = {{"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"lambda", c.train.lambda},
                {"lambda_mode", c.train.lambda_mode == LambdaMode::annealed ? "annealed" : "fixed"},
                {"anneal_learning_rate", c.train.anneal_learning_rate},
                {"max_epochs", c.train.max_epochs},
                {"patience", c.train.patience},
                {"min_improvement", c.train.min_improvement},
                {"iterations_per_epoch", c.train.iterations_per_epoch},
                {"restore_best", c.train.restore_best},
                {"hidden_width", c.train.model.hidden_width},
                {"rep_dim", c.train.model.rep_dim},
                {"domain_uses_action", c.train.model.domain_uses_action}};
  j["crm"] = {{"clip", c.crm.clip}, {"learning_rate", c.crm.learning_rate}, {"iterations", c.crm.iterations}};
  j["propensity_reg"] = c.propensity_reg;
  j["use_true_propensities"] = c.use_true_propensities;
  j["sigma_list"] = c.sigma_list;
  j["irrelevant_list"] = c.irrelevant_list;
  return j.dump(2) + "\n";
}

std::uint64_t replication_seed(std::uint64_t master, int replication) {
  return mix_seed(master, static_cast<std::uint64_t>(replication));
}

ReplicationData make_replication(const ExperimentConfig& config, double sigma, std::uint64_t seed) {
  ReplicationData rep;
  if (config.dataset == DatasetKind::synthetic_medical) {
    MedicalSpec spec = config.medical;
    spec.sigma = sigma;
    spec.seed = mix_seed(seed, kLoggingStream);
    rep.data = make_synthetic_medical(spec).data;
    rep.split = split(rep.data.size(), config.fractions, mix_seed(seed, kSplitStream));
    return rep;
  }
  const StatlogFiles files = load_statlog_files(config);
  const auto s = static_cast<int>(files.train.dims());
  const LoggingPolicy policy = make_logging_policy(sigma, s, files.train.num_classes, mix_seed(seed, kLoggingStream));
  rep.data = concatenate(supervised_to_bandit(files.train, policy, mix_seed(seed, kTrainActionStream)),
                         supervised_to_bandit(files.test, policy, mix_seed(seed, kTestActionStream)));
  const std::size_t n_train = files.train.size();
  const std::size_t n_val =
      static_cast<std::size_t>(std::floor(config.fractions[1] / (config.fractions[0] + config.fractions[1]) *
                                          static_cast<double>(n_train) + 1e-9));
  std::vector<std::size_t> order = iota_rows(0, n_train);
  Rng rng(mix_seed(seed, kSplitStream));
  rng.shuffle(order);
  rep.split.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  rep.split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  rep.split.test = iota_rows(n_train, rep.data.size());
  if (rep.split.train.empty() || rep.split.validation.empty()) throw SplitError("statlog split left a part empty");
  return rep;
}

ExperimentReport run_benchmark(const ExperimentConfig& config) {
  return run_grid(config, "bench", 1, [&](std::size_t, int r) {
    const auto seed = replication_seed(config.seed, r);
    const auto rep = make_replication(config, config.sigma, seed);
    std::vector<RawRow> rows;
    append_cells(rows, run_algorithms(config, rep, seed), r, seed, "none", 0.0);
    return rows;
  });
}

ExperimentReport sweep_sigma(const ExperimentConfig& config) {
  if (config.sigma_list.empty()) throw std::invalid_argument("sigma list is empty");
  return run_grid(config, "sweep-sigma", config.sigma_list.size(), [&](std::size_t point, int r) {
    const double sigma = config.sigma_list[point];
    const auto seed = replication_seed(config.seed, r);
    const auto rep = make_replication(config, sigma, seed);
    std::vector<RawRow> rows;
    append_cells(rows, run_algorithms(config, rep, seed), r, seed, "sigma", sigma);
    return rows;
  });
}

ExperimentReport sweep_lambda(const ExperimentConfig& config) {
  // Point 0 is lambda = 0 with the domain block removed; points 1.. follow the grid.
  return run_grid(config, "sweep-lambda", config.lambda_grid.size() + 1, [&](std::size_t point, int r) {
    const auto seed = replication_seed(config.seed, r);
    const auto rep = make_replication(config, config.sigma, seed);
    TrainConfig tc = train_config(config, seed);
    tc.lambda = point == 0 ? 0.0 : config.lambda_grid[point - 1];
    tc.ablate_domain = point == 0;
    const Cell cell = guarded(point == 0 ? "dacpol0" : "dacpol", [&] {
      const auto result = train(rep.data, rep.split, tc);
      Cell c{point == 0 ? "dacpol0" : "dacpol"};
      c.selected = tc.lambda;
      c.validation_loss = dacpol_loss(result.model, rep.data, rep.split.validation);
      c.test_loss = dacpol_loss(result.model, rep.data, rep.split.test);
      return c;
    });
    std::vector<RawRow> rows;
    append_cells(rows, std::span<const Cell>(&cell, 1), r, seed, "lambda", tc.lambda);
    return rows;
  });
}

ExperimentReport sweep_irrelevant(const ExperimentConfig& config) {
  if (config.irrelevant_list.empty()) throw std::invalid_argument("irrelevant feature list is empty");
  if (config.dataset != DatasetKind::synthetic_medical)
    throw std::invalid_argument("the irrelevant-feature sweep runs on synthetic-medical data");
  return run_grid(config, "sweep-irrelevant", config.irrelevant_list.size(), [&](std::size_t point, int r) {
    const int d = config.irrelevant_list[point];
    const auto seed = replication_seed(config.seed, r);
    ReplicationData rep = make_replication(config, config.sigma, seed);
    rep.data = append_irrelevant_features(rep.data, d, config.sigma, mix_seed(seed, kIrrelevantStream));
    std::vector<RawRow> rows;
    append_cells(rows, run_algorithms(config, rep, seed), r, seed, "d", static_cast<double>(d));
    return rows;
  });
}

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& job) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace dacpol::harness
