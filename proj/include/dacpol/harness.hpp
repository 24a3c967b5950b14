#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dacpol/baselines.hpp"
#include "dacpol/dacpol.hpp"
#include "dacpol/dataset.hpp"

namespace dacpol::harness {

inline constexpr const char* kVersion = "1.0.0";

// Index of the largest potential outcome of a row, lowest index on ties.
int best_action(const BanditDataset& ds, std::size_t row);

// 1 - fraction of rows whose recommendation equals the best action.
// `recommendations[j]` belongs to `rows[j]`.
double loss_metric(std::span<const int> recommendations, const BanditDataset& ds,
                   std::span<const std::size_t> rows);
double loss_metric(std::span<const int> recommendations, const BanditDataset& ds);

// 10^gamma / 2 for gamma in {-4, -3, -2, -1, 0, 0.5, 0.75, 1, 1.5, 2, 3}.
std::vector<double> default_lambda_grid();

struct GridPoint {
  double value = 0.0;
  double validation_loss = 0.0;  // NaN when training failed
  std::string error;
};

struct LambdaSelection {
  double lambda = 0.0;
  std::vector<GridPoint> curve;
  DacpolModel model;  // trained at the selected lambda
};

// One model per grid value on split.train; the minimum validation
// loss_metric wins, ties go to the smaller lambda. Throws TrainingError when
// every grid point failed.
LambdaSelection select_lambda(const BanditDataset& ds, const DataSplit& split, std::span<const double> grid,
                              const TrainConfig& base);

enum class DatasetKind { statlog, synthetic_medical };

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetKind dataset = DatasetKind::synthetic_medical;
  std::filesystem::path statlog_train;
  std::filesystem::path statlog_test;
  MedicalSpec medical;
  double sigma = 0.3;
  std::vector<double> lambda_grid = default_lambda_grid();
  std::vector<double> variance_grid = default_lambda_grid();  // POEM lambda_var
  int replications = 20;
  // Medical: fractions of the generated cohort. Statlog: train and
  // validation fractions of the training file; the test file is the test set.
  std::array<double, 3> fractions{0.56, 0.24, 0.20};
  std::uint64_t seed = 1;
  std::vector<std::string> algorithms{"dacpol", "dacpol0", "poem", "ips"};
  std::filesystem::path output = "out";
  TrainConfig train;
  baselines::CrmConfig crm;
  double propensity_reg = 1e-3;
  // Diagnostics only: baselines read the logged true propensities.
  bool use_true_propensities = false;
  std::vector<double> sigma_list{0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<int> irrelevant_list{0, 10, 20, 30};
  int threads = 1;

  void validate() const;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& config);

// Seed of replication r.
std::uint64_t replication_seed(std::uint64_t master, int replication);

struct RawRow {
  int replication = 0;
  std::uint64_t seed = 0;
  std::string algorithm;
  std::string axis;  // "none", "sigma", "lambda", "d"
  double axis_value = 0.0;
  std::string metric;  // "test_loss" or "validation_loss"
  double loss = 0.0;   // NaN when the cell failed
  double selected = 0.0;  // selected hyperparameter, NaN when none
  std::string status = "ok";
};

struct SummaryRow {
  std::string algorithm;
  std::string axis;
  double axis_value = 0.0;
  std::string metric;
  double mean = 0.0;
  double ci = 0.0;  // NaN with fewer than two successful replications
  int replications = 0;
  bool complete = true;
};

struct ExperimentReport {
  std::string kind;  // bench, sweep-sigma, sweep-lambda, sweep-irrelevant
  ExperimentConfig config;
  std::vector<RawRow> raw;
  std::vector<SummaryRow> summary;

  const SummaryRow* find(std::string_view algorithm, double axis_value, std::string_view metric = "test_loss") const;
};

// Groups raw rows by (algorithm, axis, value, metric) in first-seen order.
std::vector<SummaryRow> summarize(std::span<const RawRow> raw);
double ci_half_width(std::span<const double> values);

// One replication's bandit data and split. Statlog rows after the training
// file belong to the test file.
struct ReplicationData {
  BanditDataset data;
  DataSplit split;
};

ReplicationData make_replication(const ExperimentConfig& config, double sigma, std::uint64_t seed);

ExperimentReport run_benchmark(const ExperimentConfig& config);
ExperimentReport sweep_sigma(const ExperimentConfig& config);
ExperimentReport sweep_lambda(const ExperimentConfig& config);
ExperimentReport sweep_irrelevant(const ExperimentConfig& config);

// Runs job(i) for i in [0, count) on `threads` workers.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& job);

// summary.csv, raw.csv, config.json, metadata.json.
void report_emit(const ExperimentReport& report, const std::filesystem::path& dir);
void write_summary_csv(std::ostream& out, std::span<const SummaryRow> rows);
void write_raw_csv(std::ostream& out, std::span<const RawRow> rows);
std::vector<SummaryRow> read_summary_csv(std::istream& in);
std::string format_double(double v);

// Finite-difference checks of every training objective.
struct ObjectiveCheck {
  std::string objective;
  int instances = 0;
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

std::vector<ObjectiveCheck> run_gradient_checks(int instances, std::uint64_t seed);

// Bound report over a finite class on a trained representation: the
// constant policies plus the trained policy head.
struct BoundRow {
  std::string policy;
  double v_hat_source = 0.0;
  double d_hat = 0.0;
  double beta = 0.0;
  double bound = 0.0;
  double true_value = 0.0;
};

std::vector<BoundRow> bound_report(const ExperimentConfig& config, double delta);

}  // namespace dacpol::harness
