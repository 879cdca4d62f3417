#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace attnsqueeze {

enum class Errc {
  invalid_argument,
  non_finite,
  out_of_range,
  io,
  bad_magic,
  version_mismatch,
  truncated,
  dimension_overflow,
  trailing_data,
  stray_value,
  bitmap_code_mismatch,
  code_out_of_range,
  shape_mismatch,
  checksum_mismatch,
  malformed,
};

std::string_view to_string(Errc code) noexcept;

// Every library failure is reported through this type. `offset` is set for
// errors found while parsing a byte stream (position of the problem).
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message, std::optional<std::uint64_t> offset = std::nullopt)
      : std::runtime_error(message), code_(code), offset_(offset) {}

  Errc code() const noexcept { return code_; }
  std::optional<std::uint64_t> offset() const noexcept { return offset_; }

 private:
  Errc code_;
  std::optional<std::uint64_t> offset_;
};

}  // namespace attnsqueeze
