#pragma once

// Little-endian primitives shared by the dataset and checkpoint formats.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>

namespace dacpol::wire {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_doubles(std::ostream& out, const double* data, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) put_u64(out, std::bit_cast<std::uint64_t>(data[i]));
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4] = {};
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8] = {};
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void get_doubles(std::istream& in, double* data, std::size_t count) {
  for (std::size_t i = 0; i < count && in; ++i) data[i] = std::bit_cast<double>(get_u64(in));
}

}  // namespace dacpol::wire
