#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dasgil/error.hpp"

namespace dasgil::binio {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

// Little-endian byte buffer writer.
class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u16(std::uint16_t v) { bytes(&v, 2); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void i32(std::int32_t v) { bytes(&v, 4); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void f32(const float* p, std::size_t n) { bytes(p, n * sizeof(float)); }

  const std::vector<std::uint8_t>& buffer() const { return buf_; }

  void save(const std::filesystem::path& path) const {
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      require(out.good(), ErrorCode::IoError, "cannot write " + tmp);
      out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
      require(out.good(), ErrorCode::IoError, "write failed for " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    require(!ec, ErrorCode::IoError, "cannot move " + tmp + " into place: " + ec.message());
  }

 private:
  std::vector<std::uint8_t> buf_;
};

// Bounds-checked reader; running off the end raises IoError.
class Reader {
 public:
  explicit Reader(std::vector<std::uint8_t> data) : data_(std::move(data)) {}

  static Reader open(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::MissingFile, "cannot open " + path.string());
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), {});
    return Reader(std::move(data));
  }

  void bytes(void* p, std::size_t n) {
    require(n <= data_.size() - pos_, ErrorCode::IoError, "unexpected end of file");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T scalar() {
    T v;
    bytes(&v, sizeof v);
    return v;
  }
  std::uint16_t u16() { return scalar<std::uint16_t>(); }
  std::uint32_t u32() { return scalar<std::uint32_t>(); }
  std::uint64_t u64() { return scalar<std::uint64_t>(); }
  std::int32_t i32() { return scalar<std::int32_t>(); }
  std::string str() {
    const auto n = u32();
    require(n <= data_.size() - pos_, ErrorCode::IoError, "unexpected end of file");
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void f32(float* p, std::size_t n) {
    require(n <= (data_.size() - pos_) / sizeof(float), ErrorCode::IoError, "unexpected end of file");
    bytes(p, n * sizeof(float));
  }
  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::vector<std::uint8_t> data_;
  std::size_t pos_ = 0;
};

}  // namespace dasgil::binio
