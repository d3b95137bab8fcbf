// Little-endian binary record helpers shared by the dataset and checkpoint
// containers.

#pragma once

#include <cstdint>
#include <cstring>
#include <string>

#include "dcr/tensor.hpp"

namespace dcr::detail {

struct ByteWriter {
  std::string buf;
  void raw(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
  void u8(uint8_t v) { raw(&v, 1); }
  void i32(int32_t v) { raw(&v, 4); }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
};

struct ByteReader {
  const std::string& buf;
  size_t pos = 0;
  void need(size_t n, const char* field) {
    if (pos + n > buf.size())
      throw ParseError("truncated while reading field '" + std::string(field) +
                       "' at byte offset " + std::to_string(pos));
  }
  void raw(void* p, size_t n, const char* field) {
    need(n, field);
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  uint8_t u8(const char* f) { uint8_t v; raw(&v, 1, f); return v; }
  int32_t i32(const char* f) { int32_t v; raw(&v, 4, f); return v; }
  uint32_t u32(const char* f) { uint32_t v; raw(&v, 4, f); return v; }
  uint64_t u64(const char* f) { uint64_t v; raw(&v, 8, f); return v; }
  double f64(const char* f) { double v; raw(&v, 8, f); return v; }
  std::string str(const char* f) {
    uint32_t n = u32(f);
    need(n, f);
    std::string s(buf.data() + pos, n);
    pos += n;
    return s;
  }
};

}  // namespace dcr::detail
