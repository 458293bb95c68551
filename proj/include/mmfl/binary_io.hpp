#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mmfl/error.hpp"

namespace mmfl {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written by reinterpreting little-endian memory");

class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void magic(const char (&tag)[5]) { bytes(tag, 4); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) { bytes(&v, 2); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void f64s(std::span<const double> v) { bytes(v.data(), v.size() * sizeof(double)); }

  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  void expect_magic(const char (&tag)[5], const char* what) {
    need(4, what);
    if (std::memcmp(data_.data() + pos_, tag, 4) != 0) {
      throw FormatError(std::string("bad magic, expected ") + what, pos_);
    }
    pos_ += 4;
  }
  std::uint8_t u8(const char* what) { return scalar<std::uint8_t>(what); }
  std::uint16_t u16(const char* what) { return scalar<std::uint16_t>(what); }
  std::uint32_t u32(const char* what) { return scalar<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return scalar<std::uint64_t>(what); }
  double f64(const char* what) { return scalar<double>(what); }
  void f64s(std::span<double> out, const char* what) {
    need(out.size() * sizeof(double), what);
    std::memcpy(out.data(), data_.data() + pos_, out.size() * sizeof(double));
    pos_ += out.size() * sizeof(double);
  }
  void expect_end(const char* what) {
    if (pos_ != data_.size()) throw FormatError(std::string("trailing bytes after ") + what, pos_);
  }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) throw FormatError(std::string("truncated while reading ") + what, pos_);
  }
  template <typename T>
  T scalar(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace mmfl
