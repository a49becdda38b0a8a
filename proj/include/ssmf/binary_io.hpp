#pragma once

// Little-endian primitive readers/writers shared by the dataset and checkpoint
// formats.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "ssmf/errors.hpp"

namespace ssmf::binio {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("unexpected end of file");
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, std::uint32_t max_len = 1u << 20) {
  const auto n = get<std::uint32_t>(is);
  if (n > max_len) throw IoError("string field too long");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw IoError("unexpected end of file");
  return s;
}

inline void put_doubles(std::ostream& os, const double* data, std::size_t n) {
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

inline void get_doubles(std::istream& is, double* data, std::size_t n) {
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw IoError("unexpected end of file");
}

}  // namespace ssmf::binio
