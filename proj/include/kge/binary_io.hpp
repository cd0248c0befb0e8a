#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "kge/error.hpp"

namespace kge::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts are not supported");

template <typename T>
  requires std::is_trivially_copyable_v<T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
  requires std::is_trivially_copyable_v<T>
void write_array(std::ostream& out, std::span<const T> values) {
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size_bytes()));
}

inline void write_magic(std::ostream& out, std::string_view magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void write_string(std::ostream& out, std::string_view s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
  requires std::is_trivially_copyable_v<T>
T read_pod(std::istream& in, std::string_view what) {
  T value;
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw FormatError("truncated file while reading " + std::string(what));
  }
  return value;
}

template <typename T>
  requires std::is_trivially_copyable_v<T>
void read_array(std::istream& in, std::span<T> values, std::string_view what) {
  if (!in.read(reinterpret_cast<char*>(values.data()),
               static_cast<std::streamsize>(values.size_bytes()))) {
    throw FormatError("truncated file while reading " + std::string(what));
  }
}

inline void expect_magic(std::istream& in, std::string_view magic) {
  std::array<char, 8> buf{};
  if (magic.size() > buf.size() || !in.read(buf.data(), static_cast<std::streamsize>(magic.size()))) {
    throw FormatError("truncated file while reading magic");
  }
  if (std::string_view(buf.data(), magic.size()) != magic) {
    throw FormatError("bad magic: expected '" + std::string(magic) + "'");
  }
}

inline std::string read_string(std::istream& in, std::string_view what) {
  const auto n = read_pod<std::uint32_t>(in, what);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) {
    throw FormatError("truncated file while reading " + std::string(what));
  }
  return s;
}

// FNV-1a, used for config fingerprints.
inline std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

}  // namespace kge::io
