#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctmr/errors.hpp"

// Little-endian byte encoding shared by the stack and checkpoint formats.
namespace ctmr::detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void tag(std::string_view magic) { bytes(magic.data(), magic.size()); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { uint_le(v, 2); }
  void u32(std::uint32_t v) { uint_le(v, 4); }
  void u64(std::uint64_t v) { uint_le(v, 8); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void f32_array(std::span<const float> values) {
    out_.reserve(out_.size() + values.size() * 4);
    for (float v : values) f32(v);
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  void uint_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string context) : in_(bytes), context_(std::move(context)) {}

  std::size_t remaining() const { return in_.size() - pos_; }
  bool at_end() const { return pos_ == in_.size(); }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw TruncatedError(context_ + ": truncated while reading " + what + " (need " + std::to_string(n) +
                           " bytes, " + std::to_string(remaining()) + " left)");
    }
  }
  bool peek_tag(std::string_view magic) const {
    return remaining() >= magic.size() && std::memcmp(in_.data() + pos_, magic.data(), magic.size()) == 0;
  }
  void expect_tag(std::string_view magic) {
    need(magic.size(), "magic");
    if (!peek_tag(magic)) throw BadMagicError(context_ + ": bad magic, expected '" + std::string(magic) + "'");
    pos_ += magic.size();
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return in_[pos_++];
  }
  std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(uint_le(2, what)); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(uint_le(4, what)); }
  std::uint64_t u64(const char* what) { return uint_le(8, what); }
  float f32(const char* what) {
    const auto bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void f32_array(std::span<float> out, const char* what) {
    need(out.size() * 4, what);
    for (auto& v : out) v = f32(what);
  }
  void u8_array(std::span<std::uint8_t> out, const char* what) {
    need(out.size(), what);
    std::memcpy(out.data(), in_.data() + pos_, out.size());
    pos_ += out.size();
  }
  const std::string& context() const { return context_; }

 private:
  std::uint64_t uint_le(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  std::string context_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace ctmr::detail
