#pragma once

// Little-endian binary container helpers shared by the .aeds/.aemodel/.aeab
// file formats: a 4-byte magic, a length-prefixed JSON header, then raw typed
// sections. Writers are deterministic so artifact files are byte-stable.

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "aelab/common.hpp"

namespace aelab::binio {

class Writer {
 public:
  void magic(const char m[4]) { buf_.insert(buf_.end(), m, m + 4); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { raw(&v, sizeof(v)); }
  void u64(std::uint64_t v) { raw(&v, sizeof(v)); }
  void i32(std::int32_t v) { raw(&v, sizeof(v)); }
  void f64(double v) { raw(&v, sizeof(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void i32_array(std::span<const int> v) {
    u64(v.size());
    for (int x : v) i32(x);
  }
  void f64_array(std::span<const double> v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(double));
  }
  void u8_array(std::span<const unsigned char> v) {
    u64(v.size());
    raw(v.data(), v.size());
  }
  const std::string& bytes() const { return buf_; }
  void save(const std::string& path) const { write_file(path, buf_); }

 private:
  void raw(const void* p, std::size_t n) {
    buf_.append(static_cast<const char*>(p), n);
  }
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string bytes, std::string origin)
      : buf_(std::move(bytes)), origin_(std::move(origin)) {}

  void expect_magic(const char m[4]) {
    if (buf_.size() < pos_ + 4 || std::memcmp(buf_.data() + pos_, m, 4) != 0) {
      throw IoError(origin_ + ": bad magic (expected " + std::string(m, 4) + ")");
    }
    pos_ += 4;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32() { return scalar<std::uint32_t>(); }
  std::uint64_t u64() { return scalar<std::uint64_t>(); }
  std::int32_t i32() { return scalar<std::int32_t>(); }
  double f64() { return scalar<double>(); }
  std::string str() {
    std::uint32_t n = u32();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<int> i32_array() {
    std::uint64_t n = u64();
    std::vector<int> v(n);
    for (auto& x : v) x = i32();
    return v;
  }
  std::vector<double> f64_array() {
    std::uint64_t n = u64();
    need(n * sizeof(double));
    std::vector<double> v(n);
    std::memcpy(v.data(), buf_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  std::vector<unsigned char> u8_array() {
    std::uint64_t n = u64();
    need(n);
    std::vector<unsigned char> v(buf_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return v;
  }
  bool at_end() const { return pos_ == buf_.size(); }
  void expect_end() const {
    if (!at_end()) throw IoError(origin_ + ": trailing bytes at offset " + std::to_string(pos_));
  }

 private:
  template <typename T>
  T scalar() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void need(std::size_t n) {
    if (pos_ + n > buf_.size()) {
      throw IoError(origin_ + ": truncated at byte offset " + std::to_string(pos_));
    }
  }
  std::string buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline Reader open(const std::string& path) { return Reader(read_file(path), path); }

}  // namespace aelab::binio
