#include "attnsqueeze/codec.hpp"

#include <fmt/format.h>

#include <bit>
#include <cmath>

#include "attnsqueeze/attn_io.hpp"
#include "attnsqueeze/byteio.hpp"
#include "attnsqueeze/error.hpp"
#include "attnsqueeze/kernels.hpp"
#include "attnsqueeze/parallel.hpp"

namespace attnsqueeze {
namespace {

class BitWriter {
 public:
  BitWriter(std::vector<std::uint8_t>& out, int width) : out_(out), width_(width) {}

  void put(std::uint32_t code) {
    for (int b = 0; b < width_; ++b, ++pos_) {
      if (pos_ % 8 == 0) out_.push_back(0);
      if ((code >> b) & 1u) out_.back() |= static_cast<std::uint8_t>(1u << (pos_ % 8));
    }
  }

 private:
  std::vector<std::uint8_t>& out_;
  int width_;
  std::size_t pos_ = 0;
};

std::uint32_t read_code(std::span<const std::uint8_t> bytes, std::size_t index, int width) {
  std::uint32_t code = 0;
  const std::size_t start = index * static_cast<std::size_t>(width);
  for (int b = 0; b < width; ++b) {
    const std::size_t pos = start + static_cast<std::size_t>(b);
    code |= static_cast<std::uint32_t>((bytes[pos / 8] >> (pos % 8)) & 1u) << b;
  }
  return code;
}

std::string row_name(const SpqaHeader& h, std::size_t r) {
  const std::size_t query = r % h.tokens;
  const std::size_t head = (r / h.tokens) % h.heads;
  const std::size_t layer = r / (std::size_t{h.tokens} * h.heads);
  return fmt::format("layer {}, head {}, row {}", layer, head, query);
}

std::size_t popcount_bitmap(std::span<const std::uint8_t> bitmap) {
  std::size_t n = 0;
  for (std::uint8_t b : bitmap) n += static_cast<std::size_t>(std::popcount(b));
  return n;
}

void validate_header(const SpqaHeader& h, std::optional<std::uint64_t> offset) {
  if (h.layers == 0 || h.heads == 0 || h.tokens == 0) {
    throw Error(Errc::dimension_overflow, fmt::format("SPQA dimensions {}x{}x{} must be >= 1", h.layers, h.heads,
                                                      h.tokens), offset);
  }
  std::uint64_t rows = 0;
  if (__builtin_mul_overflow(std::uint64_t{h.layers} * h.heads, std::uint64_t{h.tokens}, &rows) ||
      __builtin_mul_overflow(rows, std::uint64_t{h.tokens}, &rows)) {
    throw Error(Errc::dimension_overflow, "SPQA dimensions overflow", offset);
  }
  if (h.spec.bits < 1 || h.spec.bits > 8) {
    throw Error(Errc::malformed, fmt::format("SPQA code width {} outside [1, 8]", h.spec.bits), offset);
  }
  if (h.levels.size() >= (std::size_t{1} << h.spec.bits)) {
    throw Error(Errc::malformed,
                fmt::format("{} levels do not fit {}-bit codes", h.levels.size(), h.spec.bits), offset);
  }
}

}  // namespace

std::size_t packed_code_bytes(std::size_t count, int bits) noexcept {
  return (count * static_cast<std::size_t>(bits) + 7) / 8;
}

std::uint64_t SparseQuantizedAttention::stored_row_bits() const {
  std::uint64_t bits = 0;
  for (const EncodedRow& row : rows) bits += 8 * (row.bitmap.size() + row.codes.size());
  return bits;
}

SparseQuantizedAttention encode(const AttentionTensor& quantized, const Codebook& codebook) {
  SparseQuantizedAttention s;
  s.header.layers = quantized.layers();
  s.header.heads = quantized.heads();
  s.header.tokens = quantized.tokens();
  s.header.spec = codebook.spec();
  s.header.levels = codebook.levels_f32();
  validate_header(s.header, std::nullopt);

  const std::uint32_t n = quantized.tokens();
  const std::size_t rows = quantized.row_count();
  const int width = codebook.bits;
  const auto& levels = s.header.levels;
  s.rows.resize(rows);
  parallel_for(quantized.head_count(), [&](std::size_t h) {
    const auto& k = kernels::active();
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::size_t r = h * n + i;
      const auto values = quantized.values().subspan(r * n, n);
      EncodedRow& row = s.rows[r];
      row.bitmap.assign(s.header.bitmap_bytes(), 0);
      k.nonzero_mask(values, row.bitmap);
      BitWriter writer(row.codes, width);
      for (std::uint32_t j = 0; j < n; ++j) {
        if (values[j] == 0.0f) continue;
        try {
          writer.put(code_of(values[j], levels));
        } catch (const Error& e) {
          throw Error(e.code(), fmt::format("{} at {}, column {}", e.what(), row_name(s.header, r), j));
        }
      }
    }
  });
  return s;
}

AttentionTensor decode(const SparseQuantizedAttention& stream) {
  const SpqaHeader& h = stream.header;
  validate_header(h, std::nullopt);
  if (stream.rows.size() != h.row_count()) {
    throw Error(Errc::truncated, fmt::format("SPQA stream holds {} rows, header declares {}", stream.rows.size(),
                                             h.row_count()));
  }
  AttentionTensor out(h.layers, h.heads, h.tokens);
  const std::uint32_t n = h.tokens;
  const int width = h.spec.bits;
  const std::uint32_t max_code = static_cast<std::uint32_t>(h.levels.size());
  const std::uint8_t tail_mask = n % 8 == 0 ? 0 : static_cast<std::uint8_t>(0xFFu << (n % 8));

  parallel_for(stream.rows.size(), [&](std::size_t r) {
    const EncodedRow& row = stream.rows[r];
    if (row.bitmap.size() != h.bitmap_bytes()) {
      throw Error(Errc::truncated, fmt::format("bitmap of {} has {} bytes, expected {}", row_name(h, r),
                                               row.bitmap.size(), h.bitmap_bytes()));
    }
    if (tail_mask != 0 && (row.bitmap.back() & tail_mask) != 0) {
      throw Error(Errc::bitmap_code_mismatch, fmt::format("bitmap of {} marks columns past N", row_name(h, r)));
    }
    const std::size_t occupied = popcount_bitmap(row.bitmap);
    const std::size_t capacity = row.codes.size() * 8 / static_cast<std::size_t>(width);
    // Codes are never 0, so a zero field inside the occupied range or any set
    // bit after it means the code count and the bitmap disagree.
    std::size_t stored = 0;
    while (stored < capacity && read_code(row.codes, stored, width) != 0) ++stored;
    bool trailing = false;
    for (std::size_t pos = stored * static_cast<std::size_t>(width); pos < row.codes.size() * 8; ++pos) {
      if ((row.codes[pos / 8] >> (pos % 8)) & 1u) trailing = true;
    }
    if (stored != occupied || trailing || row.codes.size() != packed_code_bytes(occupied, width)) {
      throw Error(Errc::bitmap_code_mismatch,
                  fmt::format("{}: bitmap marks {} values but the code stream holds {}", row_name(h, r), occupied,
                              trailing ? std::string("extra data") : std::to_string(stored)));
    }
    auto values = out.values().subspan(r * n, n);
    std::size_t next = 0;
    for (std::uint32_t j = 0; j < n; ++j) {
      if (((row.bitmap[j / 8] >> (j % 8)) & 1u) == 0) continue;
      const std::uint32_t code = read_code(row.codes, next++, width);
      if (code > max_code) {
        throw Error(Errc::code_out_of_range,
                    fmt::format("{}, column {}: code {} exceeds {} levels", row_name(h, r), j, code, max_code));
      }
      values[j] = h.levels[code - 1];
    }
  });
  return out;
}

std::vector<std::uint8_t> serialize_spqa(const SparseQuantizedAttention& stream) {
  const SpqaHeader& h = stream.header;
  validate_header(h, std::nullopt);
  byteio::Writer w;
  w.bytes(kSpqaMagic);
  w.u32(kSpqaVersion);
  w.u32(h.layers);
  w.u32(h.heads);
  w.u32(h.tokens);
  w.u8(static_cast<std::uint8_t>(h.spec.method));
  w.u8(static_cast<std::uint8_t>(h.spec.bits));
  w.f64(h.spec.prune_threshold);
  w.u16(static_cast<std::uint16_t>(h.levels.size()));
  for (float level : h.levels) w.f32(level);
  for (const EncodedRow& row : stream.rows) {
    w.bytes(row.bitmap);
    w.bytes(row.codes);
  }
  return w.take();
}

SparseQuantizedAttention parse_spqa(std::span<const std::uint8_t> bytes) {
  byteio::Reader r(bytes, "SPQA stream");
  const auto magic = r.bytes(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kSpqaMagic.begin())) {
    throw Error(Errc::bad_magic, "not an SPQA stream (bad magic)", 0);
  }
  const std::uint32_t version = r.u32("version");
  if (version != kSpqaVersion) {
    throw Error(Errc::version_mismatch, fmt::format("unsupported SPQA version {} (expected {})", version, kSpqaVersion),
                4);
  }
  SparseQuantizedAttention s;
  SpqaHeader& h = s.header;
  h.layers = r.u32("layer count");
  h.heads = r.u32("head count");
  h.tokens = r.u32("token count");
  const std::uint64_t method_offset = r.offset();
  const std::uint8_t method = r.u8("method");
  if (method > 2) throw Error(Errc::malformed, fmt::format("unknown SPQA method {}", method), method_offset);
  h.spec.method = static_cast<QuantMethod>(method);
  h.spec.bits = r.u8("code width");
  h.spec.prune_threshold = r.f64("prune threshold");
  const std::uint16_t level_count = r.u16("level count");
  h.levels.resize(level_count);
  for (float& level : h.levels) level = r.f32("level");
  validate_header(h, 8);

  const std::size_t rows = h.row_count();
  s.rows.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    EncodedRow& row = s.rows[i];
    const auto bitmap = r.bytes(h.bitmap_bytes(), "row bitmap");
    row.bitmap.assign(bitmap.begin(), bitmap.end());
    const auto codes = r.bytes(packed_code_bytes(popcount_bitmap(row.bitmap), h.spec.bits), "row codes");
    row.codes.assign(codes.begin(), codes.end());
  }
  if (r.remaining() != 0) {
    throw Error(Errc::trailing_data,
                fmt::format("{} unexpected bytes after SPQA rows at byte offset {}", r.remaining(), r.offset()),
                r.offset());
  }
  return s;
}

SparseQuantizedAttention load_spqa(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  try {
    return parse_spqa(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), fmt::format("{}: {}", path.string(), e.what()), e.offset());
  }
}

void store_spqa(const SparseQuantizedAttention& stream, const std::filesystem::path& path) {
  write_file(path, serialize_spqa(stream));
}

Footprint footprint_bits(const FootprintModel& model) {
  if (!(model.sparsity >= 0.0 && model.sparsity <= 1.0)) {
    throw Error(Errc::invalid_argument, fmt::format("sparsity must be in [0, 1] (got {})", model.sparsity));
  }
  if (model.tokens == 0) throw Error(Errc::invalid_argument, "footprint needs N >= 1");
  const std::uint64_t dense = 32 * model.tokens;
  Footprint f;
  if (model.scheme == FootprintScheme::dense_float32) {
    f.bits = dense;
  } else {
    if (model.bits == 0) throw Error(Errc::invalid_argument, "footprint needs k >= 1");
    // Tolerance absorbs decimal sparsities not being exact in binary:
    // (1 - 0.7) * 1000 evaluates to 300.00000000000006.
    const double survivors = std::ceil((1.0 - model.sparsity) * static_cast<double>(model.tokens) - 1e-9);
    f.bits = model.tokens + static_cast<std::uint64_t>(std::max(0.0, survivors)) * model.bits;
  }
  f.reduction = 1.0 - static_cast<double>(f.bits) / static_cast<double>(dense);
  return f;
}

}  // namespace attnsqueeze
