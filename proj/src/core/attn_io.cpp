#include "attnsqueeze/attn_io.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <limits>

#include "attnsqueeze/byteio.hpp"
#include "attnsqueeze/error.hpp"

namespace attnsqueeze {

namespace byteio {
void Reader::need(std::size_t n, std::string_view field) const {
  if (n > remaining()) {
    throw Error(Errc::truncated,
                fmt::format("{} truncated at byte offset {}: {} needs {} bytes, {} available", what_, data_.size(),
                            field, n, remaining()),
                data_.size());
  }
}
}  // namespace byteio

namespace {

std::uint64_t checked_payload_bytes(std::uint32_t layers, std::uint32_t heads, std::uint32_t tokens) {
  std::uint64_t count = 0;
  const bool overflow = __builtin_mul_overflow(std::uint64_t{tokens}, std::uint64_t{tokens}, &count) ||
                        __builtin_mul_overflow(count, std::uint64_t{heads}, &count) ||
                        __builtin_mul_overflow(count, std::uint64_t{layers}, &count) ||
                        __builtin_mul_overflow(count, std::uint64_t{4}, &count);
  if (overflow || layers == 0 || heads == 0 || tokens == 0 ||
      count > static_cast<std::uint64_t>(std::numeric_limits<std::ptrdiff_t>::max())) {
    throw Error(Errc::dimension_overflow,
                fmt::format("ATTN dimensions {}x{}x{} are zero or too large", layers, heads, tokens), 8);
  }
  return count;
}

}  // namespace

std::vector<std::uint8_t> serialize_attn(const AttentionTensor& tensor) {
  byteio::Writer w;
  w.reserve(kAttnHeaderBytes + tensor.size() * 4);
  w.bytes(kAttnMagic);
  w.u32(kAttnVersion);
  w.u32(tensor.layers());
  w.u32(tensor.heads());
  w.u32(tensor.tokens());
  w.f32_array(tensor.values());
  return w.take();
}

AttentionTensor parse_attn(std::span<const std::uint8_t> bytes) {
  byteio::Reader r(bytes, "ATTN stream");
  const auto magic = r.bytes(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kAttnMagic.begin())) {
    throw Error(Errc::bad_magic, "not an ATTN stream (bad magic)", 0);
  }
  const std::uint32_t version = r.u32("version");
  if (version != kAttnVersion) {
    throw Error(Errc::version_mismatch, fmt::format("unsupported ATTN version {} (expected {})", version, kAttnVersion),
                4);
  }
  const std::uint32_t layers = r.u32("layer count");
  const std::uint32_t heads = r.u32("head count");
  const std::uint32_t tokens = r.u32("token count");
  const std::uint64_t payload = checked_payload_bytes(layers, heads, tokens);
  r.need(static_cast<std::size_t>(payload), "payload");
  std::vector<float> values(static_cast<std::size_t>(payload / 4));
  r.f32_array(values, "payload");
  if (r.remaining() != 0) {
    throw Error(Errc::trailing_data,
                fmt::format("{} unexpected bytes after ATTN payload at byte offset {}", r.remaining(), r.offset()),
                r.offset());
  }
  return AttentionTensor(layers, heads, tokens, std::move(values));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, fmt::format("cannot open {}", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(Errc::io, fmt::format("read error on {}", path.string()));
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  // Write-then-rename so readers never observe a partial file.
  std::filesystem::path tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, fmt::format("cannot create {}", tmp.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::io, fmt::format("write error on {}", tmp.string()));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(Errc::io, fmt::format("cannot rename {} to {}: {}", tmp.string(), path.string(), ec.message()));
}

AttentionTensor load_attn(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  try {
    return parse_attn(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), fmt::format("{}: {}", path.string(), e.what()), e.offset());
  }
}

void store_attn(const AttentionTensor& tensor, const std::filesystem::path& path) {
  write_file(path, serialize_attn(tensor));
}

std::filesystem::path sidecar_path(const std::filesystem::path& attn_path) {
  std::filesystem::path p = attn_path;
  p.replace_extension(".meta.json");
  return p;
}

std::optional<AttnMetadata> load_sidecar(const std::filesystem::path& attn_path) {
  const auto path = sidecar_path(attn_path);
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::ifstream in(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::malformed, fmt::format("{}: {}", path.string(), e.what()));
  }
  AttnMetadata meta;
  meta.model = j.value("model", "");
  meta.instance_id = j.value("instance_id", "");
  if (j.contains("tokens") && j["tokens"].is_array()) {
    for (const auto& t : j["tokens"]) meta.tokens.push_back(t.is_string() ? t.get<std::string>() : t.dump());
  }
  return meta;
}

}  // namespace attnsqueeze
