#include <cstring>
#include <istream>
#include <ostream>

#include "dacpol/errors.hpp"
#include "dacpol/nnet.hpp"
#include "dacpol/wire.hpp"

namespace dacpol::nnet {
namespace {

constexpr char kMagic[8] = {'D', 'C', 'P', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void write_checkpoint(std::ostream& out, std::span<const NamedBlock> blocks) {
  out.write(kMagic, sizeof kMagic);
  wire::put_u32(out, kVersion);
  wire::put_u32(out, static_cast<std::uint32_t>(blocks.size()));
  for (const auto& block : blocks) {
    wire::put_u32(out, static_cast<std::uint32_t>(block.name.size()));
    out.write(block.name.data(), static_cast<std::streamsize>(block.name.size()));
    wire::put_u32(out, static_cast<std::uint32_t>(block.network.layers.size()));
    for (const auto& layer : block.network.layers) {
      wire::put_u32(out, static_cast<std::uint32_t>(layer.in()));
      wire::put_u32(out, static_cast<std::uint32_t>(layer.out()));
      wire::put_u32(out, static_cast<std::uint32_t>(layer.activation));
      wire::put_doubles(out, layer.weights.data(), static_cast<std::size_t>(layer.weights.size()));
      wire::put_doubles(out, layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
    }
  }
  if (!out) throw DataError("failed writing checkpoint");
}

std::vector<NamedBlock> read_checkpoint(std::istream& in) {
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw DataError("not a checkpoint (bad magic)");
  if (const auto v = wire::get_u32(in); v != kVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(v));
  const std::uint32_t count = wire::get_u32(in);
  if (!in || count > 1024) throw DataError("implausible checkpoint block count");
  std::vector<NamedBlock> blocks(count);
  for (auto& block : blocks) {
    const std::uint32_t name_len = wire::get_u32(in);
    if (!in || name_len > 4096) throw DataError("implausible checkpoint block name");
    block.name.resize(name_len);
    in.read(block.name.data(), name_len);
    const std::uint32_t depth = wire::get_u32(in);
    if (!in || depth > 1024) throw DataError("implausible checkpoint depth");
    block.network.layers.resize(depth);
    for (auto& layer : block.network.layers) {
      const std::uint32_t rows = wire::get_u32(in);
      const std::uint32_t cols = wire::get_u32(in);
      const std::uint32_t act = wire::get_u32(in);
      if (!in || rows == 0 || cols == 0 || rows > (1u << 20) || cols > (1u << 20) || act > 1)
        throw DataError("corrupt checkpoint layer header in block " + block.name);
      layer.activation = static_cast<Activation>(act);
      layer.weights.resize(rows, cols);
      layer.bias.resize(cols);
      wire::get_doubles(in, layer.weights.data(), static_cast<std::size_t>(layer.weights.size()));
      wire::get_doubles(in, layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
    }
    for (std::size_t l = 1; l < block.network.layers.size(); ++l)
      if (block.network.layers[l].in() != block.network.layers[l - 1].out())
        throw ShapeError("checkpoint block " + block.name + " has inconsistent layer widths");
  }
  if (!in) throw DataError("truncated checkpoint");
  return blocks;
}

}  // namespace dacpol::nnet
