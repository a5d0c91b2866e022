#pragma once

// Little-endian binary file plumbing shared by the bundle, checkpoint, and
// report writers. Not installed; formats define their own framing on top.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "tiacam/error.hpp"

namespace tiacam::binio {

constexpr uint64_t kFnvSeed = 14695981039346656037ull;

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = kFnvSeed) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

struct Writer {
  std::string buf;

  void raw(const void* p, size_t n) {
    buf.append(static_cast<const char*>(p), n);
  }
  void u8(uint8_t v) { buf.push_back(char(v)); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
  }
  void f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void str(const std::string& s) {
    u32(uint32_t(s.size()));
    raw(s.data(), s.size());
  }
};

struct Reader {
  std::vector<unsigned char> bytes;
  size_t off = 0;
  std::string origin;

  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(origin + " truncated at byte " + std::to_string(off) +
                    " reading " + what);
  }
  void need(size_t n, const char* what) const {
    if (bytes.size() - off < n) fail(what);
  }
  bool done() const { return off >= bytes.size(); }

  uint8_t u8(const char* what) {
    need(1, what);
    return bytes[off++];
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(bytes[off + i]) << (8 * i);
    off += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(bytes[off + i]) << (8 * i);
    off += 8;
    return v;
  }
  float f32(const char* what) {
    uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64(const char* what) {
    uint64_t bits = u64(what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str(const char* what) {
    uint32_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes.data() + off), n);
    off += n;
    return s;
  }
};

inline void write_file(const std::string& path, const std::string& buf) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  os.write(buf.data(), std::streamsize(buf.size()));
  if (!os.flush()) throw DataError("failed writing " + path);
}

inline Reader read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  Reader r;
  r.bytes.assign(std::istreambuf_iterator<char>(is),
                 std::istreambuf_iterator<char>());
  r.origin = path;
  return r;
}

}  // namespace tiacam::binio
