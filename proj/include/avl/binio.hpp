#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "avl/errors.hpp"

// Little-endian primitive encoding shared by every binary file format.
namespace avl::binio {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

template <typename T>
void put(std::ostream& out, T v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("binary read: unexpected end of stream");
  return to_little(v);
}

inline void put_u32(std::ostream& out, std::uint32_t v) { put(out, v); }
inline void put_u64(std::ostream& out, std::uint64_t v) { put(out, v); }
inline void put_f64(std::ostream& out, double v) { put(out, v); }
inline void put_f32(std::ostream& out, float v) { put(out, v); }
inline std::uint32_t get_u32(std::istream& in) { return get<std::uint32_t>(in); }
inline std::uint64_t get_u64(std::istream& in) { return get<std::uint64_t>(in); }
inline double get_f64(std::istream& in) { return get<double>(in); }
inline float get_f32(std::istream& in) { return get<float>(in); }

inline void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in) {
  const std::uint32_t n = get_u32(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw IoError("binary read: truncated string");
  return s;
}

inline void put_magic(std::ostream& out, const char (&magic)[9]) { out.write(magic, 8); }

inline void expect_magic(std::istream& in, const char (&magic)[9]) {
  char buf[8];
  in.read(buf, 8);
  if (!in || std::memcmp(buf, magic, 8) != 0) {
    throw IoError(std::string("binary read: bad magic, expected ") + magic);
  }
}

}  // namespace avl::binio
