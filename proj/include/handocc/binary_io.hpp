#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "handocc/error.hpp"

namespace handocc::binary {

// Explicit little-endian encoding, independent of host byte order.

inline void write_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }

inline void write_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void write_f32(std::ostream& os, float v) { write_u32(os, std::bit_cast<std::uint32_t>(v)); }

inline void write_tag(std::ostream& os, const char (&tag)[5]) { os.write(tag, 4); }

inline void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint8_t read_u8(std::istream& is) {
  const int c = is.get();
  if (c == std::char_traits<char>::eof()) throw Error(ErrorCode::Format, "unexpected end of binary data");
  return static_cast<std::uint8_t>(c);
}

inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(read_u8(is)) << (8 * i);
  return v;
}

inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(read_u8(is)) << (8 * i);
  return v;
}

inline float read_f32(std::istream& is) { return std::bit_cast<float>(read_u32(is)); }

inline void expect_tag(std::istream& is, const char (&tag)[5]) {
  char buf[4] = {};
  is.read(buf, 4);
  if (!is || std::memcmp(buf, tag, 4) != 0) {
    throw Error(ErrorCode::Format, std::string("bad magic, expected ") + tag);
  }
}

inline std::string read_string(std::istream& is, std::size_t max_len = 1 << 16) {
  const std::uint32_t n = read_u32(is);
  if (n > max_len) throw Error(ErrorCode::Format, "string field too long");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw Error(ErrorCode::Format, "unexpected end of binary data");
  return s;
}

}  // namespace handocc::binary
