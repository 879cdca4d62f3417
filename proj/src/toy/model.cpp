#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "attnsqueeze/error.hpp"
#include "attnsqueeze/toy.hpp"

namespace attnsqueeze::toy {
namespace {

using Matrix = std::vector<double>;  // row-major

constexpr double kNormEpsilon = 1e-5;

Matrix matmul(const Matrix& a, std::size_t rows, std::size_t inner, std::span<const float> w, std::size_t cols) {
  Matrix out(rows * cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = a[i * inner + k];
      const float* wrow = w.data() + k * cols;
      double* orow = out.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) orow[j] += aik * static_cast<double>(wrow[j]);
    }
  }
  return out;
}

Matrix layer_norm(const Matrix& x, std::size_t rows, std::size_t width, std::span<const float> gamma,
                  std::span<const float> beta) {
  Matrix out(x.size());
  for (std::size_t i = 0; i < rows; ++i) {
    const double* r = x.data() + i * width;
    double mean = 0.0;
    for (std::size_t c = 0; c < width; ++c) mean += r[c];
    mean /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t c = 0; c < width; ++c) var += (r[c] - mean) * (r[c] - mean);
    var /= static_cast<double>(width);
    const double inv = 1.0 / std::sqrt(var + kNormEpsilon);
    for (std::size_t c = 0; c < width; ++c) {
      out[i * width + c] = (r[c] - mean) * inv * static_cast<double>(gamma[c]) + static_cast<double>(beta[c]);
    }
  }
  return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

std::string layer_name(std::uint32_t layer, const char* suffix) { return fmt::format("layer{}.{}", layer, suffix); }

}  // namespace

ForwardResult forward(std::span<const std::uint32_t> tokens, const WeightBundle& weights,
                      const AttentionTransform& transform) {
  const ToyConfig& cfg = weights.config();
  const std::size_t n = tokens.size();
  if (n == 0 || n > cfg.seq_len) {
    throw Error(Errc::shape_mismatch, fmt::format("sequence length {} outside [1, {}]", n, cfg.seq_len));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (tokens[i] >= cfg.vocab) {
      throw Error(Errc::out_of_range,
                  fmt::format("token id {} at position {} exceeds vocabulary size {}", tokens[i], i, cfg.vocab));
    }
  }
  if (transform.prune) transform.prune->validate();
  std::optional<Codebook> codebook;
  if (transform.quant) codebook = build_codebook(*transform.quant);

  const std::size_t d = cfg.width;
  const std::size_t dh = cfg.head_width();
  const std::size_t ff = cfg.ff_width;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto n32 = static_cast<std::uint32_t>(n);

  const auto tok_emb = weights.tensor("tok_emb", {cfg.vocab, cfg.width});
  const auto pos_emb = weights.tensor("pos_emb", {cfg.seq_len, cfg.width});

  ForwardResult result;
  result.positions = n32;
  result.attention = AttentionTensor(cfg.layers, cfg.heads, n32);
  result.transformed = AttentionTensor(cfg.layers, cfg.heads, n32);

  Matrix x(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      x[i * d + c] = static_cast<double>(tok_emb[tokens[i] * d + c]) + static_cast<double>(pos_emb[i * d + c]);
    }
  }

  std::vector<double> scores(n);
  for (std::uint32_t l = 0; l < cfg.layers; ++l) {
    const Matrix h = layer_norm(x, n, d, weights.tensor(layer_name(l, "ln1.gamma"), {cfg.width}),
                                weights.tensor(layer_name(l, "ln1.beta"), {cfg.width}));
    const Matrix q = matmul(h, n, d, weights.tensor(layer_name(l, "wq"), {cfg.width, cfg.width}), d);
    const Matrix k = matmul(h, n, d, weights.tensor(layer_name(l, "wk"), {cfg.width, cfg.width}), d);
    const Matrix v = matmul(h, n, d, weights.tensor(layer_name(l, "wv"), {cfg.width, cfg.width}), d);
    Matrix context(n * d, 0.0);

    for (std::uint32_t hd = 0; hd < cfg.heads; ++hd) {
      const std::size_t base = hd * dh;
      for (std::uint32_t i = 0; i < n32; ++i) {
        double peak = -INFINITY;
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += q[i * d + base + c] * k[j * d + base + c];
          scores[j] = s * scale;
          peak = std::max(peak, scores[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          scores[j] = std::exp(scores[j] - peak);
          total += scores[j];
        }
        auto row = result.attention.row(l, hd, i);
        for (std::size_t j = 0; j < n; ++j) row[j] = static_cast<float>(scores[j] / total);
      }

      auto mixed = result.transformed.head_values(l, hd);
      const auto captured = result.attention.head_values(l, hd);
      std::copy(captured.begin(), captured.end(), mixed.begin());
      if (transform.prune) prune_in_place(mixed, *transform.prune);
      if (codebook) {
        if (transform.quant->pruned()) prune_in_place(mixed, PruneSpec{transform.quant->prune_threshold});
        quantize_values(mixed, mixed, *codebook);
      }

      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double a = static_cast<double>(mixed[i * n + j]);
          if (a == 0.0) continue;
          for (std::size_t c = 0; c < dh; ++c) context[i * d + base + c] += a * v[j * d + base + c];
        }
      }
    }

    const Matrix attn_out = matmul(context, n, d, weights.tensor(layer_name(l, "wo"), {cfg.width, cfg.width}), d);
    for (std::size_t e = 0; e < x.size(); ++e) x[e] += attn_out[e];

    const Matrix h2 = layer_norm(x, n, d, weights.tensor(layer_name(l, "ln2.gamma"), {cfg.width}),
                                 weights.tensor(layer_name(l, "ln2.beta"), {cfg.width}));
    Matrix hidden = matmul(h2, n, d, weights.tensor(layer_name(l, "ff1.w"), {cfg.width, cfg.ff_width}), ff);
    const auto b1 = weights.tensor(layer_name(l, "ff1.b"), {cfg.ff_width});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < ff; ++c) hidden[i * ff + c] = gelu(hidden[i * ff + c] + static_cast<double>(b1[c]));
    }
    const Matrix ff_out = matmul(hidden, n, ff, weights.tensor(layer_name(l, "ff2.w"), {cfg.ff_width, cfg.width}), d);
    const auto b2 = weights.tensor(layer_name(l, "ff2.b"), {cfg.width});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < d; ++c) x[i * d + c] += ff_out[i * d + c] + static_cast<double>(b2[c]);
    }
  }

  result.hidden = layer_norm(x, n, d, weights.tensor("lnf.gamma", {cfg.width}), weights.tensor("lnf.beta", {cfg.width}));
  result.logits = matmul(result.hidden, n, d, weights.tensor("out.w", {cfg.width, cfg.vocab}), cfg.vocab);
  return result;
}

Corpus parse_corpus(const std::string& text) {
  Corpus corpus;
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<std::uint32_t> seq;
    std::string field;
    while (fields >> field) {
      std::size_t used = 0;
      unsigned long id = 0;
      try {
        id = std::stoul(field, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != field.size() || field.front() == '-' || id > 0xFFFFFFFFul) {
        throw Error(Errc::malformed, fmt::format("corpus line {}: '{}' is not a token id", line_no, field));
      }
      seq.push_back(static_cast<std::uint32_t>(id));
    }
    if (!seq.empty()) corpus.push_back(std::move(seq));
  }
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, fmt::format("cannot open {}", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_corpus(buffer.str());
  } catch (const Error& e) {
    throw Error(e.code(), fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace attnsqueeze::toy
