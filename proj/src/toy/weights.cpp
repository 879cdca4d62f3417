#include <fmt/format.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <fstream>
#include <memory>
#include <sstream>

#include "attnsqueeze/attn_io.hpp"
#include "attnsqueeze/byteio.hpp"
#include "attnsqueeze/error.hpp"
#include "attnsqueeze/toy.hpp"

namespace attnsqueeze::toy {

void ToyConfig::validate() const {
  if (layers == 0 || heads == 0 || width == 0 || vocab == 0 || seq_len == 0 || ff_width == 0) {
    throw Error(Errc::invalid_argument, "toy config counts must all be >= 1");
  }
  if (width % heads != 0) {
    throw Error(Errc::invalid_argument, fmt::format("model width {} not divisible by {} heads", width, heads));
  }
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &length) != 1) {
    throw Error(Errc::io, "SHA-256 computation failed");
  }
  std::string hex;
  for (unsigned int i = 0; i < length; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

WeightBundle WeightBundle::load(const std::filesystem::path& manifest_path) {
  nlohmann::json manifest;
  try {
    std::ifstream in(manifest_path);
    if (!in) throw Error(Errc::io, fmt::format("cannot open {}", manifest_path.string()));
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::malformed, fmt::format("{}: {}", manifest_path.string(), e.what()));
  }

  WeightBundle bundle;
  try {
    const auto& c = manifest.at("config");
    bundle.config_.layers = c.at("layers").get<std::uint32_t>();
    bundle.config_.heads = c.at("heads").get<std::uint32_t>();
    bundle.config_.width = c.at("width").get<std::uint32_t>();
    bundle.config_.vocab = c.at("vocab").get<std::uint32_t>();
    bundle.config_.seq_len = c.at("seq_len").get<std::uint32_t>();
    bundle.config_.ff_width = c.at("ff_width").get<std::uint32_t>();
    bundle.config_.validate();

    const auto data_path = manifest_path.parent_path() / manifest.at("data_file").get<std::string>();
    const std::vector<std::uint8_t> blob = read_file(data_path);
    bundle.sha256_ = sha256_hex(blob);
    const auto expected = manifest.at("sha256").get<std::string>();
    if (bundle.sha256_ != expected) {
      throw Error(Errc::checksum_mismatch, fmt::format("{}: SHA-256 {} does not match manifest {}",
                                                       data_path.string(), bundle.sha256_, expected));
    }

    for (const auto& entry : manifest.at("tensors")) {
      WeightTensor t;
      t.shape = entry.at("shape").get<std::vector<std::uint32_t>>();
      std::size_t count = 1;
      for (std::uint32_t dim : t.shape) count *= dim;
      const auto offset = entry.at("offset").get<std::size_t>();
      if (offset > blob.size() || count * 4 > blob.size() - offset) {
        throw Error(Errc::truncated, fmt::format("tensor {} runs past the end of {}",
                                                 entry.at("name").get<std::string>(), data_path.string()),
                    blob.size());
      }
      t.values.resize(count);
      byteio::Reader r(std::span<const std::uint8_t>(blob).subspan(offset, count * 4), "weight tensor");
      r.f32_array(t.values, "values");
      bundle.tensors_.emplace(entry.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::malformed, fmt::format("{}: {}", manifest_path.string(), e.what()));
  }
  return bundle;
}

std::span<const float> WeightBundle::tensor(const std::string& name,
                                            std::initializer_list<std::uint32_t> shape) const {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error(Errc::shape_mismatch, fmt::format("weight bundle lacks tensor {}", name));
  if (!std::equal(it->second.shape.begin(), it->second.shape.end(), shape.begin(), shape.end())) {
    throw Error(Errc::shape_mismatch, fmt::format("tensor {} has shape [{}], expected [{}]", name,
                                                  fmt::join(it->second.shape, ","), fmt::join(shape, ",")));
  }
  return it->second.values;
}

}  // namespace attnsqueeze::toy
