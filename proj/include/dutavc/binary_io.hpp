#pragma once

// Little-endian binary helpers shared by every on-disk artifact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "dutavc/error.hpp"

namespace dutavc::bin {

static_assert(sizeof(float) == 4 && sizeof(double) == 8);

template <typename T>
void put(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw FormatError("unexpected end of file");
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  auto n = get<std::uint32_t>(is);
  if (n > (1u << 28)) throw FormatError("string length out of range");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw FormatError("unexpected end of file");
  return s;
}

inline void put_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char (&magic)[5], const std::string& what) {
  char m[4];
  if (!is.read(m, 4) || std::memcmp(m, magic, 4) != 0)
    throw FormatError(what + ": bad magic, expected \"" + std::string(magic, 4) + "\"");
}

}  // namespace dutavc::bin
