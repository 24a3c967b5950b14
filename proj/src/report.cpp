#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <iterator>
#include <limits>
#include <ostream>
#include <sstream>

#include "dacpol/errors.hpp"
#include "dacpol/harness.hpp"
#include "dacpol/rng.hpp"
#include "json.hpp"

namespace dacpol::harness {
namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ParseError(0, "bad number '" + s + "'");
  return v;
}

// Status text goes in the last column; commas would break the row.
std::string csv_safe(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double ci_half_width(std::span<const double> values) {
  if (values.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return 1.96 * sd / std::sqrt(static_cast<double>(values.size()));
}

std::vector<SummaryRow> summarize(std::span<const RawRow> raw) {
  struct Group {
    SummaryRow row;
    std::vector<double> values;
  };
  std::vector<Group> groups;
  for (const auto& r : raw) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) {
      return g.row.algorithm == r.algorithm && g.row.axis == r.axis && g.row.axis_value == r.axis_value &&
             g.row.metric == r.metric;
    });
    if (it == groups.end()) {
      Group g;
      g.row.algorithm = r.algorithm;
      g.row.axis = r.axis;
      g.row.axis_value = r.axis_value;
      g.row.metric = r.metric;
      groups.push_back(std::move(g));
      it = std::prev(groups.end());
    }
    if (r.status == "ok" && std::isfinite(r.loss)) it->values.push_back(r.loss);
    else it->row.complete = false;
  }
  std::vector<SummaryRow> out;
  for (auto& g : groups) {
    double mean = std::numeric_limits<double>::quiet_NaN();
    if (!g.values.empty()) {
      mean = 0.0;
      for (double v : g.values) mean += v;
      mean /= static_cast<double>(g.values.size());
    }
    g.row.mean = mean;
    g.row.ci = ci_half_width(g.values);
    g.row.replications = static_cast<int>(g.values.size());
    out.push_back(g.row);
  }
  return out;
}

const SummaryRow* ExperimentReport::find(std::string_view algorithm, double axis_value,
                                         std::string_view metric) const {
  for (const auto& row : summary)
    if (row.algorithm == algorithm && row.axis_value == axis_value && row.metric == metric) return &row;
  return nullptr;
}

void write_summary_csv(std::ostream& out, std::span<const SummaryRow> rows) {
  out << "algorithm,axis,value,metric,mean,ci,R,flag\n";
  for (const auto& r : rows) {
    std::string flag;
    if (!r.complete) flag = "incomplete";
    else if (r.replications < 2) flag = "no_ci";
    out << r.algorithm << ',' << r.axis << ',' << format_double(r.axis_value) << ',' << r.metric << ','
        << format_double(r.mean) << ',' << format_double(r.ci) << ',' << r.replications << ',' << flag << '\n';
  }
}

void write_raw_csv(std::ostream& out, std::span<const RawRow> rows) {
  out << "replication,seed,algorithm,axis,value,metric,loss,selected,status\n";
  for (const auto& r : rows)
    out << r.replication << ',' << r.seed << ',' << r.algorithm << ',' << r.axis << ','
        << format_double(r.axis_value) << ',' << r.metric << ',' << format_double(r.loss) << ','
        << format_double(r.selected) << ',' << csv_safe(r.status) << '\n';
}

std::vector<SummaryRow> read_summary_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "algorithm,axis,value,metric,mean,ci,R,flag")
    throw ParseError(1, "summary.csv header mismatch");
  std::vector<SummaryRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 8) throw ParseError(line_no, "summary.csv row needs 8 fields");
    SummaryRow r;
    r.algorithm = f[0];
    r.axis = f[1];
    r.axis_value = parse_double(f[2]);
    r.metric = f[3];
    r.mean = parse_double(f[4]);
    r.ci = parse_double(f[5]);
    r.replications = std::stoi(f[6]);
    r.complete = f[7] != "incomplete";
    rows.push_back(r);
  }
  return rows;
}

void report_emit(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  {
    auto out = open_output(dir / "summary.csv");
    write_summary_csv(out, report.summary);
  }
  {
    auto out = open_output(dir / "raw.csv");
    write_raw_csv(out, report.raw);
  }
  {
    auto out = open_output(dir / "config.json");
    out << config_to_json(report.config);
  }
  nlohmann::ordered_json meta;
  meta["kind"] = report.kind;
  meta["version"] = kVersion;
  meta["rng"] = std::string(kRngName);
  meta["master_seed"] = report.config.seed;
  meta["seed_derivation"] = "replication r uses mix_seed(master_seed, r)";
  std::vector<std::uint64_t> seeds;
  for (int r = 0; r < report.config.replications; ++r) seeds.push_back(replication_seed(report.config.seed, r));
  meta["replication_seeds"] = seeds;
  meta["dataset"] = report.config.dataset == DatasetKind::statlog ? "statlog" : "synthetic-medical";
  auto out = open_output(dir / "metadata.json");
  out << meta.dump(2) << '\n';
  if (!out) throw DataError("failed writing reports under " + dir.string());
}

}  // namespace dacpol::harness
