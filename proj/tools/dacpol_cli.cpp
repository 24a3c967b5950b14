#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dacpol/baselines.hpp"
#include "dacpol/dacpol.hpp"
#include "dacpol/errors.hpp"
#include "dacpol/estimators.hpp"
#include "dacpol/harness.hpp"
#include "dacpol/rng.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace dacpol;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> reps;
  std::string out;
  std::vector<std::string> algos;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool config_required = true) {
  auto* opt = cmd->add_option("--config", f.config, "experiment config (JSON)");
  if (config_required) opt->required();
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--reps", f.reps, "replication count");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--algo", f.algos, "algorithms (dacpol, dacpol0, poem, ips)")->delimiter(',');
  cmd->add_option("--threads", f.threads, "worker threads");
}

harness::ExperimentConfig resolve(const CommonFlags& f) {
  harness::ExperimentConfig c = harness::load_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.reps) c.replications = *f.reps;
  if (!f.out.empty()) c.output = f.out;
  if (!f.algos.empty()) c.algorithms = f.algos;
  if (f.threads) c.threads = *f.threads;
  c.validate();
  return c;
}

void print_summary(const harness::ExperimentReport& report) {
  std::printf("%-10s %-6s %10s %-16s %10s %10s %4s\n", "algorithm", "axis", "value", "metric", "mean", "ci", "R");
  for (const auto& r : report.summary)
    std::printf("%-10s %-6s %10.4g %-16s %10.4f %10.4f %4d%s\n", r.algorithm.c_str(), r.axis.c_str(),
                r.axis_value, r.metric.c_str(), r.mean, r.ci, r.replications, r.complete ? "" : "  (incomplete)");
}

std::ofstream open_file(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

int run_experiment(const std::string& kind, const CommonFlags& flags) {
  const auto config = resolve(flags);
  harness::ExperimentReport report;
  if (kind == "bench") report = harness::run_benchmark(config);
  else if (kind == "sweep-sigma") report = harness::sweep_sigma(config);
  else if (kind == "sweep-lambda") report = harness::sweep_lambda(config);
  else report = harness::sweep_irrelevant(config);
  harness::report_emit(report, config.output);
  print_summary(report);
  std::printf("wrote %s\n", config.output.string().c_str());
  return 0;
}

int run_prepare(const CommonFlags& flags) {
  const auto config = resolve(flags);
  const auto rep = harness::make_replication(config, config.sigma, harness::replication_seed(config.seed, 0));
  fs::create_directories(config.output);
  write_dataset(config.output / "dataset.bin", rep.data);
  nlohmann::ordered_json split{{"train", rep.split.train},
                               {"validation", rep.split.validation},
                               {"test", rep.split.test}};
  open_file(config.output / "split.json") << split.dump() << '\n';
  std::printf("wrote %zu rows (s=%zu, k=%d) to %s\n", rep.data.size(), rep.data.dims(), rep.data.num_actions(),
              (config.output / "dataset.bin").string().c_str());
  return 0;
}

int run_train(const CommonFlags& flags) {
  auto config = resolve(flags);
  const std::string algo = flags.algos.empty() ? "dacpol" : flags.algos.front();
  const auto seed = harness::replication_seed(config.seed, 0);
  const auto rep = harness::make_replication(config, config.sigma, seed);
  fs::create_directories(config.output);
  double test_loss = 0.0;
  if (algo == "dacpol" || algo == "dacpol0") {
    TrainConfig tc = config.train;
    tc.seed = mix_seed(seed, 20);
    if (algo == "dacpol0") {
      tc.lambda = 0.0;
      tc.ablate_domain = true;
    }
    const auto result = train(rep.data, rep.split, tc);
    auto ckpt = open_file(config.output / "model.ckpt");
    save_model(ckpt, result.model);
    auto trace = open_file(config.output / "trace.csv");
    write_trace_csv(trace, result.trace);
    test_loss = harness::loss_metric(recommend(result.model, rep.data.subset(rep.split.test).features),
                                     rep.data.subset(rep.split.test));
  } else if (algo == "poem" || algo == "ips") {
    const auto train_rows = rep.data.subset(rep.split.train);
    const auto props = estimators::estimate_propensities(train_rows, config.propensity_reg).probabilities;
    baselines::CrmConfig crm = config.crm;
    crm.seed = mix_seed(seed, 21);
    const auto result = algo == "ips" ? baselines::train_ips(train_rows, props, crm)
                                      : baselines::train_poem(train_rows, props, crm);
    auto ckpt = open_file(config.output / "model.ckpt");
    baselines::save_policy(ckpt, result.policy);
    auto trace = open_file(config.output / "trace.csv");
    baselines::write_trace_csv(trace, result.trace);
    const auto test = rep.data.subset(rep.split.test);
    test_loss = harness::loss_metric(result.policy.recommend(test.features), test);
  } else {
    throw std::invalid_argument("unknown algorithm '" + algo + "'");
  }
  std::printf("%s test loss %.6f\n", algo.c_str(), test_loss);
  return 0;
}

int run_bound(const CommonFlags& flags, double delta) {
  const auto config = resolve(flags);
  const auto rows = harness::bound_report(config, delta);
  fs::create_directories(config.output);
  auto out = open_file(config.output / "bound.csv");
  out << "policy,v_hat_source,d_hat,beta,bound,true_value\n";
  auto records = nlohmann::ordered_json::array();
  std::printf("%-12s %10s %8s %8s %10s %10s\n", "policy", "v_hat_S", "d_hat", "beta", "bound", "true_V");
  for (const auto& r : rows) {
    out << r.policy << ',' << harness::format_double(r.v_hat_source) << ',' << harness::format_double(r.d_hat)
        << ',' << harness::format_double(r.beta) << ',' << harness::format_double(r.bound) << ','
        << harness::format_double(r.true_value) << '\n';
    records.push_back({{"policy", r.policy}, {"v_hat_source", r.v_hat_source}, {"d_hat", r.d_hat},
                       {"beta", r.beta}, {"delta", delta}, {"bound", r.bound}, {"true_value", r.true_value}});
    std::printf("%-12s %10.4f %8.4f %8.4f %10.4f %10.4f\n", r.policy.c_str(), r.v_hat_source, r.d_hat, r.beta,
                r.bound, r.true_value);
  }
  open_file(config.output / "bound.json") << records.dump(2) << '\n';
  return 0;
}

int run_gradcheck(int instances, std::uint64_t seed, double tolerance) {
  bool ok = true;
  std::printf("%-8s %9s %12s %9s %9s\n", "objective", "instances", "max_rel_err", "checked", "skipped");
  for (const auto& c : harness::run_gradient_checks(instances, seed)) {
    std::printf("%-9s %9d %12.3e %9zu %9zu\n", c.objective.c_str(), c.instances, c.max_relative_error, c.checked,
                c.skipped);
    ok = ok && c.max_relative_error < tolerance;
  }
  return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-adversarial counterfactual policy learning"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::vector<std::pair<std::string, CLI::App*>> experiments;
  for (const char* name : {"bench", "sweep-sigma", "sweep-lambda", "sweep-irrelevant"})
    experiments.emplace_back(name, app.add_subcommand(name, std::string("run the ") + name + " experiment"));
  for (auto& [name, cmd] : experiments) add_common(cmd, flags);

  auto* prepare = app.add_subcommand("prepare-data", "build and serialize replication 0 of a config");
  add_common(prepare, flags);
  auto* train_cmd = app.add_subcommand("train", "train one model on replication 0");
  add_common(train_cmd, flags);
  auto* bound = app.add_subcommand("bound", "lower-bound report for a finite class on a trained representation");
  add_common(bound, flags);
  double delta = 0.1;
  bound->add_option("--delta", delta, "confidence parameter");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every objective");
  int instances = 50;
  std::uint64_t gc_seed = 1;
  double tolerance = 1e-4;
  gradcheck->add_option("--instances", instances, "random instances per objective");
  gradcheck->add_option("--seed", gc_seed, "instance seed");
  gradcheck->add_option("--tolerance", tolerance, "maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    for (auto& [name, cmd] : experiments)
      if (cmd->parsed()) return run_experiment(name, flags);
    if (prepare->parsed()) return run_prepare(flags);
    if (train_cmd->parsed()) return run_train(flags);
    if (bound->parsed()) return run_bound(flags, delta);
    if (gradcheck->parsed()) return run_gradcheck(instances, gc_seed, tolerance);
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const TrainingError& e) {
    std::fprintf(stderr, "training failure: %s\n", e.what());
    return 3;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
