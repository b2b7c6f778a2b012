#pragma once

// Little-endian primitive I/O shared by the binary file formats
// (scan .bin, range images, weight sets, descriptor bundles).

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "recnet/errors.hpp"

namespace recnet::detail {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void get_bytes(std::istream& is, void* p, std::size_t n,
                      const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw FormatError(std::string("unexpected end of data while reading ") +
                      what);
  }
}

template <typename T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
    std::swap(buf[i], buf[sizeof(T) - 1 - i]);
#endif
  put_bytes(os, buf, sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const char* what) {
  unsigned char buf[sizeof(T)];
  get_bytes(is, buf, sizeof(T), what);
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
    std::swap(buf[i], buf[sizeof(T) - 1 - i]);
#endif
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline void write_f32_array(std::ostream& os, const float* data,
                            std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) write_le<float>(os, data[i]);
}

inline void read_f32_array(std::istream& is, float* data, std::size_t n,
                           const char* what) {
  for (std::size_t i = 0; i < n; ++i) data[i] = read_le<float>(is, what);
}

inline void write_magic(std::ostream& os, const char magic[4]) {
  put_bytes(os, magic, 4);
}

inline void expect_magic(std::istream& is, const char magic[4],
                         const char* format_name) {
  char got[4];
  get_bytes(is, got, 4, format_name);
  if (std::memcmp(got, magic, 4) != 0) {
    throw FormatError(std::string("bad magic for ") + format_name +
                      ": expected \"" + std::string(magic, 4) + "\", got \"" +
                      std::string(got, 4) + "\"");
  }
}

}  // namespace recnet::detail
