#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dacpol/errors.hpp"
#include "dacpol/harness.hpp"
#include "support.hpp"

namespace dacpol::harness {
namespace {

namespace fs = std::filesystem;

BanditDataset four_rows() {
  BanditDataset ds;
  ds.features = Matrix::Zero(4, 1);
  ds.potential_outcomes.resize(4, 3);
  ds.potential_outcomes << 1, 0, 0,  //
      0, 1, 0,                       //
      0, 0, 1,                       //
      0.5, 0.5, 0;                   // tie: best action 0
  ds.actions = {0, 0, 0, 0};
  ds.outcomes = {1, 0, 0, 0.5};
  return ds;
}

TEST(LossMetric, Examples) {
  const auto ds = four_rows();
  EXPECT_EQ(best_action(ds, 3), 0);
  EXPECT_EQ(loss_metric(std::vector<int>{0, 1, 2, 0}, ds), 0.0);
  EXPECT_EQ(loss_metric(std::vector<int>{1, 2, 0, 2}, ds), 1.0);
  EXPECT_EQ(loss_metric(std::vector<int>{0, 1, 2, 1}, ds), 0.25);
  const std::vector<std::size_t> rows{2, 3};
  EXPECT_EQ(loss_metric(std::vector<int>{2, 1}, ds, rows), 0.5);
  EXPECT_THROW(loss_metric(std::vector<int>{}, ds, std::vector<std::size_t>{}), InsufficientDataError);
}

TEST(LambdaGrid, DefaultValues) {
  const auto g = default_lambda_grid();
  ASSERT_EQ(g.size(), 11u);
  EXPECT_DOUBLE_EQ(g.front(), 0.5e-4);
  EXPECT_DOUBLE_EQ(g[4], 0.5);
  EXPECT_DOUBLE_EQ(g.back(), 500.0);
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.batch_size = 8;
  t.max_epochs = 2;
  t.seed = 1;
  t.model.hidden_width = 8;
  t.model.rep_dim = 4;
  return t;
}

TEST(SelectLambda, SingleElementGrid) {
  const auto ds = testing::random_bandit(120, 3, 3, 1);
  const auto sp = split(ds.size(), {0.6, 0.2, 0.2}, 2);
  const std::vector<double> grid{0.3};
  const auto sel = select_lambda(ds, sp, grid, tiny_train());
  EXPECT_EQ(sel.lambda, 0.3);
  ASSERT_EQ(sel.curve.size(), 1u);
}

TEST(SelectLambda, TiesGoToSmallerLambdaAndPickIsInGrid) {
  const auto ds = testing::random_bandit(120, 3, 3, 1);
  const auto sp = split(ds.size(), {0.6, 0.2, 0.2}, 2);
  auto t = tiny_train();
  t.max_epochs = 0;  // identical untrained models at every lambda
  const std::vector<double> grid{1.0, 0.1, 0.5};
  const auto sel = select_lambda(ds, sp, grid, t);
  EXPECT_EQ(sel.lambda, 0.1);
  EXPECT_THROW(select_lambda(ds, sp, std::vector<double>{}, t), std::invalid_argument);
}

TEST(SelectLambda, SelectedValueIsAlwaysInGrid) {
  const auto ds = testing::random_bandit(150, 3, 3, 4);
  const auto sp = split(ds.size(), {0.6, 0.2, 0.2}, 5);
  const std::vector<double> grid{0.0, 0.05, 5.0};
  const auto sel = select_lambda(ds, sp, grid, tiny_train());
  EXPECT_NE(std::find(grid.begin(), grid.end(), sel.lambda), grid.end());
  double best = sel.curve[0].validation_loss;
  for (const auto& p : sel.curve) best = std::min(best, p.validation_loss);
  for (const auto& p : sel.curve)
    if (p.value == sel.lambda) EXPECT_EQ(p.validation_loss, best);
}

TEST(Summary, CiFormulaAndDegenerateCases) {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const double sd = std::sqrt(5.0 / 3.0);
  EXPECT_NEAR(ci_half_width(v), 1.96 * sd / 2.0, 1e-15);
  EXPECT_TRUE(std::isnan(ci_half_width(std::vector<double>{1.0})));
}

std::vector<RawRow> sample_raw() {
  std::vector<RawRow> raw;
  for (int r = 0; r < 3; ++r) {
    for (const char* algo : {"dacpol", "ips"}) {
      RawRow row;
      row.replication = r;
      row.seed = replication_seed(5, r);
      row.algorithm = algo;
      row.axis = "none";
      row.metric = "test_loss";
      row.loss = 0.1 * (r + 1) + (algo[0] == 'i' ? 0.3 : 0.0) + 1.0 / 3.0;
      raw.push_back(row);
    }
  }
  raw[5].loss = std::numeric_limits<double>::quiet_NaN();
  raw[5].status = "failed: test";
  return raw;
}

TEST(Summary, GroupsByCellWithIncompleteFlag) {
  const auto raw = sample_raw();
  const auto summary = summarize(raw);
  ASSERT_EQ(summary.size(), 2u);
  EXPECT_EQ(summary[0].algorithm, "dacpol");
  EXPECT_EQ(summary[0].replications, 3);
  EXPECT_TRUE(summary[0].complete);
  EXPECT_NEAR(summary[0].mean, 0.2 + 1.0 / 3.0, 1e-15);
  EXPECT_EQ(summary[1].replications, 2);
  EXPECT_FALSE(summary[1].complete);
}

TEST(Summary, CsvRoundTripIsBitExact) {
  const auto summary = summarize(sample_raw());
  std::stringstream csv;
  write_summary_csv(csv, summary);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "algorithm,axis,value,metric,mean,ci,R,flag");
  const auto back = read_summary_csv(csv);
  ASSERT_EQ(back.size(), summary.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].algorithm, summary[i].algorithm);
    EXPECT_EQ(back[i].mean, summary[i].mean);
    EXPECT_EQ(back[i].ci, summary[i].ci);
    EXPECT_EQ(back[i].replications, summary[i].replications);
    EXPECT_EQ(back[i].complete, summary[i].complete);
  }
  EXPECT_EQ(format_double(std::numeric_limits<double>::quiet_NaN()), "nan");
  EXPECT_EQ(std::stod(format_double(0.1)), 0.1);
}

TEST(ReportEmit, EmptyReportWritesHeaderOnlyCsvs) {
  const fs::path dir = fs::temp_directory_path() / "dacpol_empty_report";
  fs::remove_all(dir);
  ExperimentReport report;
  report.kind = "bench";
  report_emit(report, dir);
  for (const char* name : {"summary.csv", "raw.csv"}) {
    std::ifstream in(dir / name);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) ++lines;
    EXPECT_EQ(lines, 1) << name;
  }
  EXPECT_TRUE(fs::exists(dir / "config.json"));
  EXPECT_TRUE(fs::exists(dir / "metadata.json"));
  fs::remove_all(dir);
}

TEST(Config, ParsesAndValidates) {
  const auto c = parse_config(R"({"dataset": "synthetic-medical", "sigma": 0.4, "replications": 3,
    "lambda_grid": [0.1, 1], "train": {"batch_size": 32, "lambda_mode": "fixed"},
    "crm": {"clip": 50}, "algorithms": ["dacpol", "ips"]})");
  EXPECT_EQ(c.sigma, 0.4);
  EXPECT_EQ(c.replications, 3);
  EXPECT_EQ(c.lambda_grid.size(), 2u);
  EXPECT_EQ(c.train.batch_size, 32u);
  EXPECT_EQ(c.train.lambda_mode, LambdaMode::fixed);
  EXPECT_EQ(c.crm.clip, 50.0);
  EXPECT_EQ(c.algorithms.size(), 2u);
  const auto again = parse_config(config_to_json(c));
  EXPECT_EQ(config_to_json(again), config_to_json(c));

  EXPECT_THROW(parse_config("{not json"), DataError);
  EXPECT_THROW(parse_config(R"({"replications": 0})"), std::invalid_argument);
  EXPECT_THROW(parse_config(R"({"dataset": "mnist"})"), std::invalid_argument);
  EXPECT_THROW(parse_config(R"({"algorithms": ["svm"]})"), std::invalid_argument);
  EXPECT_THROW(parse_config(R"({"sigma": "high"})"), DataError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), DataError);
}

TEST(Seeds, ReplicationSeedsAreDistinctAndStable) {
  EXPECT_EQ(replication_seed(7, 3), replication_seed(7, 3));
  EXPECT_NE(replication_seed(7, 3), replication_seed(7, 4));
  EXPECT_NE(replication_seed(7, 3), replication_seed(8, 3));
}

TEST(ParallelFor, RunsEveryJobOnce) {
  std::vector<int> hits(100);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(3, 2, [](std::size_t i) {
                 if (i == 1) throw std::runtime_error("boom");
               }),
               std::runtime_error);
}

ExperimentConfig tiny_medical() {
  ExperimentConfig c;
  c.medical.n = 400;
  c.medical.relevant_features = 5;
  c.medical.num_actions = 3;
  c.replications = 2;
  c.seed = 3;
  c.lambda_grid = {0.0, 0.5};
  c.variance_grid = {0.0, 1.0};
  c.train = tiny_train();
  c.crm.iterations = 20;
  c.threads = 2;
  return c;
}

TEST(Benchmark, OneSummaryRowPerAlgorithmAndDeterministic) {
  const auto c = tiny_medical();
  const auto a = run_benchmark(c);
  for (const auto& algo : c.algorithms) {
    const auto* row = a.find(algo, 0.0);
    ASSERT_NE(row, nullptr) << algo;
    EXPECT_EQ(row->replications, 2);
    EXPECT_TRUE(row->complete);
    EXPECT_GE(row->mean, 0.0);
    EXPECT_LE(row->mean, 1.0);
  }
  int test_rows = 0;
  for (const auto& s : a.summary) test_rows += s.metric == "test_loss";
  EXPECT_EQ(test_rows, 4);

  auto serial = c;
  serial.threads = 1;
  const auto b = run_benchmark(serial);
  std::ostringstream ra, rb;
  write_raw_csv(ra, a.raw);
  write_raw_csv(rb, b.raw);
  EXPECT_EQ(ra.str(), rb.str());
}

TEST(Benchmark, SingleReplicationHasNoCi) {
  auto c = tiny_medical();
  c.replications = 1;
  c.algorithms = {"ips"};
  const auto r = run_benchmark(c);
  const auto* row = r.find("ips", 0.0);
  ASSERT_NE(row, nullptr);
  EXPECT_TRUE(std::isnan(row->ci));
  std::ostringstream csv;
  write_summary_csv(csv, r.summary);
  EXPECT_NE(csv.str().find(",no_ci"), std::string::npos);
}

TEST(SweepSigma, SingleElementMatchesBenchmark) {
  auto c = tiny_medical();
  c.algorithms = {"dacpol0", "poem"};
  c.sigma = 0.25;
  c.sigma_list = {0.25};
  const auto bench = run_benchmark(c);
  const auto sweep = sweep_sigma(c);
  for (const auto& algo : c.algorithms) {
    const auto* a = bench.find(algo, 0.0);
    const auto* b = sweep.find(algo, 0.25);
    ASSERT_NE(a, nullptr);
    ASSERT_NE(b, nullptr);
    EXPECT_EQ(a->mean, b->mean) << algo;
  }
}

TEST(SweepIrrelevant, RequiresMedicalData) {
  auto c = tiny_medical();
  c.dataset = DatasetKind::statlog;
  EXPECT_THROW(sweep_irrelevant(c), std::invalid_argument);
}

TEST(GradientChecks, AllObjectivesPass) {
  const auto checks = run_gradient_checks(5, 3);
  ASSERT_EQ(checks.size(), 5u);
  for (const auto& c : checks) {
    EXPECT_LT(c.max_relative_error, 1e-4) << c.objective;
    EXPECT_GT(c.checked, 0u) << c.objective;
  }
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DACPOL_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("bench"), 1);
  EXPECT_EQ(run_cli("no-such-command"), 1);
  EXPECT_EQ(run_cli("bench --config /nonexistent/config.json"), 2);
  EXPECT_EQ(run_cli("gradcheck --instances 2"), 0);
}

}  // namespace
}  // namespace dacpol::harness
