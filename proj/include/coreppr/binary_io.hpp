#pragma once

// Little-endian scalar encoding shared by the row cache, feature and
// checkpoint formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string_view>

#include "coreppr/error.hpp"

namespace coreppr::io {

inline void write_u64(std::ostream& out, std::uint64_t value) {
  std::array<char, 8> bytes{};
  for (std::size_t i = 0; i < 8; ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xffu);
  }
  out.write(bytes.data(), bytes.size());
}

inline void write_u32(std::ostream& out, std::uint32_t value) {
  std::array<char, 4> bytes{};
  for (std::size_t i = 0; i < 4; ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xffu);
  }
  out.write(bytes.data(), bytes.size());
}

inline void write_f64(std::ostream& out, double value) {
  write_u64(out, std::bit_cast<std::uint64_t>(value));
}

inline void write_f32(std::ostream& out, float value) {
  write_u32(out, std::bit_cast<std::uint32_t>(value));
}

// Returns false on a clean EOF before the first byte; throws on a truncated value.
inline bool try_read_u64(std::istream& in, std::uint64_t& value) {
  std::array<unsigned char, 8> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (in.gcount() == 0) return false;
  if (in.gcount() != 8) throw Error("truncated binary input");
  value = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    value |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  }
  return true;
}

inline std::uint64_t read_u64(std::istream& in) {
  std::uint64_t value = 0;
  if (!try_read_u64(in, value)) throw Error("truncated binary input");
  return value;
}

inline std::uint32_t read_u32(std::istream& in) {
  std::array<unsigned char, 4> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (in.gcount() != 4) throw Error("truncated binary input");
  std::uint32_t value = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    value |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
  }
  return value;
}

inline double read_f64(std::istream& in) { return std::bit_cast<double>(read_u64(in)); }

inline float read_f32(std::istream& in) { return std::bit_cast<float>(read_u32(in)); }

inline void write_magic(std::ostream& out, std::string_view magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline bool check_magic(std::istream& in, std::string_view magic) {
  std::string buffer(magic.size(), '\0');
  in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
  return in.gcount() == static_cast<std::streamsize>(magic.size()) && buffer == magic;
}

}  // namespace coreppr::io
