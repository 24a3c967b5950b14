#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "dacpol/dataset.hpp"
#include "dacpol/errors.hpp"
#include "dacpol/wire.hpp"

namespace dacpol {
namespace {

constexpr char kMagic[8] = {'D', 'C', 'P', 'L', 'D', 'A', 'T', 'A'};
constexpr std::uint32_t kSchemaVersion = 1;
constexpr std::uint32_t kHasPropensities = 1u;

}  // namespace

void write_dataset(std::ostream& out, const BanditDataset& ds) {
  ds.validate();
  const std::uint64_t n = ds.size();
  const std::uint64_t s = ds.dims();
  const std::uint64_t k = static_cast<std::uint64_t>(ds.num_actions());
  out.write(kMagic, sizeof kMagic);
  wire::put_u32(out, kSchemaVersion);
  wire::put_u64(out, n);
  wire::put_u64(out, s);
  wire::put_u64(out, k);
  wire::put_u32(out, ds.true_propensities ? kHasPropensities : 0u);
  wire::put_doubles(out, ds.features.data(), n * s);
  for (int a : ds.actions) wire::put_u32(out, static_cast<std::uint32_t>(a));
  wire::put_doubles(out, ds.outcomes.data(), n);
  wire::put_doubles(out, ds.potential_outcomes.data(), n * k);
  if (ds.true_propensities) wire::put_doubles(out, ds.true_propensities->data(), n * k);
  if (!out) throw DataError("failed writing dataset");
}

BanditDataset read_dataset(std::istream& in) {
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw DataError("not a dataset file (bad magic)");
  const std::uint32_t version = wire::get_u32(in);
  if (version != kSchemaVersion) throw DataError("unsupported dataset schema version " + std::to_string(version));
  const std::uint64_t n = wire::get_u64(in);
  const std::uint64_t s = wire::get_u64(in);
  const std::uint64_t k = wire::get_u64(in);
  const std::uint32_t flags = wire::get_u32(in);
  if (n == 0 || k < 2 || n > (1ull << 32) || s > (1ull << 20) || k > (1ull << 16))
    throw DataError("implausible dataset header");

  BanditDataset ds;
  const auto rows = static_cast<Eigen::Index>(n);
  ds.features.resize(rows, static_cast<Eigen::Index>(s));
  wire::get_doubles(in, ds.features.data(), n * s);
  ds.actions.resize(n);
  for (auto& a : ds.actions) a = static_cast<int>(wire::get_u32(in));
  ds.outcomes.resize(n);
  wire::get_doubles(in, ds.outcomes.data(), n);
  ds.potential_outcomes.resize(rows, static_cast<Eigen::Index>(k));
  wire::get_doubles(in, ds.potential_outcomes.data(), n * k);
  if (flags & kHasPropensities) {
    Matrix props(rows, static_cast<Eigen::Index>(k));
    wire::get_doubles(in, props.data(), n * k);
    ds.true_propensities = std::move(props);
  }
  if (!in) throw DataError("truncated dataset file");
  ds.validate();
  return ds;
}

void write_dataset(const std::filesystem::path& path, const BanditDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_dataset(out, ds);
}

BanditDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_dataset(in);
}

}  // namespace dacpol
