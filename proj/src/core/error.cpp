#include "attnsqueeze/error.hpp"

namespace attnsqueeze {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::non_finite: return "non_finite";
    case Errc::out_of_range: return "out_of_range";
    case Errc::io: return "io";
    case Errc::bad_magic: return "bad_magic";
    case Errc::version_mismatch: return "version_mismatch";
    case Errc::truncated: return "truncated";
    case Errc::dimension_overflow: return "dimension_overflow";
    case Errc::trailing_data: return "trailing_data";
    case Errc::stray_value: return "stray_value";
    case Errc::bitmap_code_mismatch: return "bitmap_code_mismatch";
    case Errc::code_out_of_range: return "code_out_of_range";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::checksum_mismatch: return "checksum_mismatch";
    case Errc::malformed: return "malformed";
  }
  return "unknown";
}

}  // namespace attnsqueeze
