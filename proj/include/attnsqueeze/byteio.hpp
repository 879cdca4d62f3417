#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string_view>
#include <vector>

#include "attnsqueeze/error.hpp"

// Little-endian primitive encoding shared by the ATTN and SPQA formats.
namespace attnsqueeze::byteio {

class Writer {
 public:
  void bytes(std::span<const std::uint8_t> data) { out_.insert(out_.end(), data.begin(), data.end()); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  void f32_array(std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
      const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
      out_.insert(out_.end(), p, p + values.size_bytes());
    } else {
      for (float v : values) f32(v);
    }
  }

  void reserve(std::size_t n) { out_.reserve(n); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  std::vector<std::uint8_t> out_;
};

// Bounds-checked reader; running past the end throws Errc::truncated with
// the offset at which the missing field starts.
class Reader {
 public:
  Reader(std::span<const std::uint8_t> data, std::string_view what) : data_(data), what_(what) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

  std::span<const std::uint8_t> bytes(std::size_t n, std::string_view field) {
    need(n, field);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8(std::string_view field) { return static_cast<std::uint8_t>(get(1, field)); }
  std::uint16_t u16(std::string_view field) { return static_cast<std::uint16_t>(get(2, field)); }
  std::uint32_t u32(std::string_view field) { return static_cast<std::uint32_t>(get(4, field)); }
  std::uint64_t u64(std::string_view field) { return get(8, field); }
  float f32(std::string_view field) { return std::bit_cast<float>(u32(field)); }
  double f64(std::string_view field) { return std::bit_cast<double>(u64(field)); }

  void f32_array(std::span<float> out, std::string_view field) {
    const auto raw = bytes(out.size_bytes(), field);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), raw.data(), raw.size());
    } else {
      for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t v = 0;
        for (int b = 0; b < 4; ++b) v |= std::uint32_t{raw[4 * i + b]} << (8 * b);
        out[i] = std::bit_cast<float>(v);
      }
    }
  }

  void need(std::size_t n, std::string_view field) const;

 private:
  std::uint64_t get(int width, std::string_view field) {
    const auto raw = bytes(static_cast<std::size_t>(width), field);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t{raw[static_cast<std::size_t>(i)]} << (8 * i);
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::string_view what_;
  std::size_t pos_ = 0;
};

}  // namespace attnsqueeze::byteio
