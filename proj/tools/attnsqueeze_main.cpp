#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "attnsqueeze/attn_io.hpp"
#include "attnsqueeze/codec.hpp"
#include "attnsqueeze/error.hpp"
#include "attnsqueeze/parallel.hpp"
#include "attnsqueeze/profiler.hpp"
#include "attnsqueeze/quantizer.hpp"
#include "attnsqueeze/report.hpp"
#include "attnsqueeze/toy.hpp"

#ifndef ATTNSQUEEZE_ASSET_DIR
#define ATTNSQUEEZE_ASSET_DIR "assets"
#endif

namespace fs = std::filesystem;
using namespace attnsqueeze;

namespace {

constexpr int kExitData = 2;
constexpr int kExitUsage = 64;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

double parse_number(const std::string& text) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (!text.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || !std::isfinite(value)) {
    throw UsageError(fmt::format("'{}' is not a decimal number", text));
  }
  return value;
}

std::vector<std::string> split(const std::string& text) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = text.find(',', start);
    parts.push_back(text.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return parts;
}

std::vector<double> parse_grid(const std::string& text, const char* flag) {
  std::vector<double> out;
  try {
    for (const std::string& item : split(text)) out.push_back(parse_number(item));
  } catch (const UsageError& e) {
    throw UsageError(fmt::format("{}: {}", flag, e.what()));
  }
  return out;
}

std::vector<std::uint64_t> parse_int_grid(const std::string& text, const char* flag) {
  std::vector<std::uint64_t> out;
  for (const std::string& item : split(text)) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size()) {
      throw UsageError(fmt::format("{}: '{}' is not a non-negative integer", flag, item));
    }
    out.push_back(v);
  }
  return out;
}

const std::string kDefaultGrid = "1e-8,1e-7,1e-6,1e-5,1e-4,1e-3,1e-2,1e-1";

QuantMethod method_or_usage(const std::string& name) {
  const auto m = parse_quant_method(name);
  if (!m) throw UsageError(fmt::format("unknown quantization method '{}' (linear, log, boolean)", name));
  return *m;
}

template <typename Spec>
void validate_usage(const Spec& spec) {
  try {
    spec.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

bool has_extension(const fs::path& p, std::string_view ext) { return p.extension() == ext; }

// Files named on the command line, with directories expanded to their .attn
// entries in name order.
std::vector<fs::path> collect_inputs(const std::vector<std::string>& args) {
  std::vector<fs::path> out;
  for (const std::string& a : args) {
    const fs::path p(a);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& entry : fs::directory_iterator(p)) {
        if (entry.is_regular_file() && has_extension(entry.path(), ".attn")) found.push_back(entry.path());
      }
      std::sort(found.begin(), found.end());
      if (found.empty()) throw Error(Errc::io, fmt::format("{}: no .attn files", p.string()));
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(p);
    }
  }
  return out;
}

AttentionTensor load_checked(const fs::path& path) {
  AttentionTensor t = has_extension(path, ".spqa") ? decode(load_spqa(path)) : load_attn(path);
  try {
    validate_values(t);
  } catch (const Error& e) {
    throw Error(e.code(), fmt::format("{}: {}", path.string(), e.what()), e.offset());
  }
  return t;
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void emit(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-") {
    std::fwrite(text.data(), 1, text.size(), stdout);
  } else {
    write_text(out, text);
  }
}

// --- profile ---------------------------------------------------------------

struct ProfileArgs {
  std::vector<std::string> inputs;
  std::string out;
  bool pooled = false;
  double epsilon = kDefaultSparsityEpsilon;
  double lower_bound = 1e-8;
  int bins_per_decade = 10;
  bool no_underflow = false;
  std::uint32_t outlier_bins = kDefaultOutlierDeviationBins;
  bool row_histograms = false;
};

struct ReportFiles {
  fs::path dir;
  std::string json;
  std::vector<std::pair<std::string, std::string>> csvs;
};

ReportFiles render(const ProfileReport& report, const std::vector<std::string>& tokens, const fs::path& dir) {
  ReportFiles files{dir, to_json(report, tokens).dump(2) + "\n", {}};
  for (const HeadProfile& h : report.heads) {
    files.csvs.emplace_back(fmt::format("L{}_H{}_hist.csv", h.layer, h.head),
                            head_histogram_csv(h, report.options.histogram));
  }
  files.csvs.emplace_back("sparsity_distribution.csv", sparsity_distribution_csv(report));
  return files;
}

int run_profile(const ProfileArgs& a) {
  ProfileOptions opts;
  opts.histogram.lower_bound = a.lower_bound;
  opts.histogram.bins_per_decade = a.bins_per_decade;
  opts.histogram.underflow_bucket = !a.no_underflow;
  opts.epsilon = a.epsilon;
  opts.outlier_deviation_bins = a.outlier_bins;
  opts.keep_row_histograms = a.row_histograms;
  validate_usage(opts.histogram);
  if (!(a.epsilon > 0.0 && a.epsilon < 1.0)) throw UsageError("--epsilon must lie in (0, 1)");

  const std::vector<fs::path> paths = collect_inputs(a.inputs);
  std::vector<AttentionTensor> tensors;
  std::vector<std::optional<AttnMetadata>> meta;
  for (const fs::path& p : paths) {
    tensors.push_back(load_checked(p));
    meta.push_back(load_sidecar(p));
  }

  // Everything is computed before the first file is written.
  std::vector<ReportFiles> outputs;
  const fs::path root(a.out);
  if (a.pooled || tensors.size() == 1) {
    ProfileReport report = a.pooled ? profile_pooled(tensors, opts) : profile_tensor(tensors[0], opts);
    std::vector<std::string> tokens;
    if (meta[0]) {
      report.model = meta[0]->model;
      if (!a.pooled) {
        report.instance_id = meta[0]->instance_id;
        tokens = meta[0]->tokens;
      }
    }
    if (!a.pooled && report.instance_id.empty()) report.instance_id = paths[0].stem().string();
    outputs.push_back(render(report, tokens, root));
  } else {
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      ProfileReport report = profile_tensor(tensors[i], opts);
      std::vector<std::string> tokens;
      report.instance_id = paths[i].stem().string();
      if (meta[i]) {
        report.model = meta[i]->model;
        if (!meta[i]->instance_id.empty()) report.instance_id = meta[i]->instance_id;
        tokens = meta[i]->tokens;
      }
      outputs.push_back(render(report, tokens, root / paths[i].stem()));
    }
  }

  for (const ReportFiles& f : outputs) {
    fs::create_directories(f.dir);
    write_text(f.dir / "report.json", f.json);
    for (const auto& [name, text] : f.csvs) write_text(f.dir / name, text);
  }
  return 0;
}

// --- transform -------------------------------------------------------------

struct TransformArgs {
  std::string input;
  std::string out;
  std::optional<double> prune;
  std::optional<std::string> method;
  std::optional<int> bits;
};

int run_transform(const TransformArgs& a) {
  const fs::path out(a.out);
  const bool to_spqa = has_extension(out, ".spqa");
  if (!to_spqa && !has_extension(out, ".attn")) throw UsageError("--out must end in .attn or .spqa");
  if (to_spqa && !a.method) throw UsageError(".spqa output needs --quantize");
  if (a.prune) validate_usage(PruneSpec{*a.prune});

  std::optional<QuantSpec> spec;
  if (a.method) {
    QuantSpec q;
    q.method = method_or_usage(*a.method);
    q.bits = a.bits.value_or(q.method == QuantMethod::boolean ? 1 : 3);
    q.prune_threshold = a.prune.value_or(0.0);
    validate_usage(q);
    spec = q;
  }

  const AttentionTensor input = load_checked(a.input);
  if (fs::exists(out) && fs::equivalent(out, a.input)) throw UsageError("--out must differ from the input");

  if (!spec) {
    const AttentionTensor pruned = a.prune ? prune(input, PruneSpec{*a.prune}) : input;
    store_attn(pruned, out);
    return 0;
  }
  const auto [quantized, codebook] = quantize_tensor(input, *spec);
  if (to_spqa) {
    store_spqa(encode(quantized, codebook), out);
  } else {
    store_attn(quantized, out);
  }
  return 0;
}

// --- sweep -----------------------------------------------------------------

struct SweepArgs {
  std::vector<std::string> inputs;
  std::string method = "log";
  std::string bits = "3";
  std::string prune = kDefaultGrid;
  double epsilon = kDefaultSparsityEpsilon;
  std::string out;
};

int run_sweep_cmd(const SweepArgs& a) {
  const bool prune_only = a.method == "none";
  const QuantMethod method = prune_only ? QuantMethod::log : method_or_usage(a.method);
  const std::vector<double> thresholds = parse_grid(a.prune, "--prune");
  const std::vector<std::uint64_t> bit_list = prune_only ? std::vector<std::uint64_t>{0} : parse_int_grid(a.bits, "--bits");
  if (!(a.epsilon > 0.0 && a.epsilon < 1.0)) throw UsageError("--epsilon must lie in (0, 1)");
  for (double t : thresholds) validate_usage(PruneSpec{t});
  if (!prune_only) {
    for (std::uint64_t k : bit_list) {
      QuantSpec q{method, static_cast<int>(std::min<std::uint64_t>(k, 64)), 0.0};
      validate_usage(q);
    }
  }

  std::vector<AttentionTensor> tensors;
  for (const fs::path& p : collect_inputs(a.inputs)) tensors.push_back(load_checked(p));
  const HistogramSpec hist;

  std::string csv = "method,bits,threshold,epsilon,sparsity,divergence\n";
  for (std::uint64_t k : bit_list) {
    for (double t : thresholds) {
      std::uint64_t below = 0;
      std::uint64_t total = 0;
      double divergence = 0.0;
      std::uint64_t rows = 0;
      for (const AttentionTensor& tensor : tensors) {
        AttentionTensor transformed;
        if (prune_only) {
          transformed = prune(tensor, PruneSpec{t});
        } else {
          transformed = quantize_tensor(tensor, QuantSpec{method, static_cast<int>(k), t}).first;
        }
        const SparsityLevel s = measure_sparsity(transformed, a.epsilon);
        below += s.below;
        total += s.total;
        divergence += histogram_divergence(tensor, transformed, hist) * static_cast<double>(tensor.row_count());
        rows += tensor.row_count();
      }
      csv += fmt::format("{},{},{},{},{},{}\n", prune_only ? "none" : to_string(method), k, format_number(t),
                         format_number(a.epsilon),
                         format_number(static_cast<double>(below) / static_cast<double>(total)),
                         format_number(divergence / static_cast<double>(rows)));
    }
  }
  emit(a.out, csv);
  return 0;
}

// --- footprint -------------------------------------------------------------

struct FootprintArgs {
  std::string n;
  std::string sparsity;
  std::string bits = "3";
  std::string out;
};

int run_footprint(const FootprintArgs& a) {
  const auto ns = parse_int_grid(a.n, "--n");
  const auto ss = parse_grid(a.sparsity, "--sparsity");
  const auto ks = parse_int_grid(a.bits, "--bits");
  for (auto n : ns) {
    if (n == 0) throw UsageError("--n values must be positive");
  }
  for (double s : ss) {
    if (s < 0.0 || s > 1.0) throw UsageError(fmt::format("--sparsity {} is outside [0, 1]", s));
  }
  for (auto k : ks) {
    if (k < 1 || k > 32) throw UsageError(fmt::format("--bits {} is outside [1, 32]", k));
  }
  std::string csv = "n,sparsity,bits,packed_bits_per_row,dense_bits_per_row,reduction_pct\n";
  for (auto n : ns) {
    for (double s : ss) {
      for (auto k : ks) {
        const Footprint packed =
            footprint_bits({FootprintScheme::bitmap_packed, n, s, static_cast<std::uint32_t>(k)});
        const Footprint dense = footprint_bits({FootprintScheme::dense_float32, n, s, static_cast<std::uint32_t>(k)});
        csv += fmt::format("{},{},{},{},{},{:.2f}\n", n, format_number(s), k, packed.bits, dense.bits,
                           packed.reduction * 100.0);
      }
    }
  }
  emit(a.out, csv);
  return 0;
}

// --- toy -------------------------------------------------------------------

struct ToyArgs {
  std::string weights = std::string(ATTNSQUEEZE_ASSET_DIR) + "/toy/toy_weights.json";
  std::string corpus = std::string(ATTNSQUEEZE_ASSET_DIR) + "/toy/corpus.txt";
  std::string thresholds = kDefaultGrid;
  std::optional<std::string> method;
  std::optional<int> bits;
  double epsilon = kDefaultSparsityEpsilon;
  std::string out;
};

int run_toy(const ToyArgs& a) {
  const std::vector<double> thresholds = parse_grid(a.thresholds, "--thresholds");
  for (double t : thresholds) validate_usage(PruneSpec{t});
  if (!(a.epsilon > 0.0 && a.epsilon < 1.0)) throw UsageError("--epsilon must lie in (0, 1)");
  std::optional<QuantMethod> method;
  int bits = 0;
  if (a.method) {
    method = method_or_usage(*a.method);
    bits = a.bits.value_or(*method == QuantMethod::boolean ? 1 : 3);
    validate_usage(QuantSpec{*method, bits, 0.0});
  }

  const toy::WeightBundle weights = toy::WeightBundle::load(a.weights);
  const toy::Corpus corpus = toy::load_corpus(a.corpus);

  std::vector<toy::SweepPoint> points{toy::SweepPoint{}};
  for (double t : thresholds) points.push_back(toy::SweepPoint{t, method, bits});
  const toy::DegradationTable table = toy::run_sweep(corpus, weights, points, {a.epsilon});
  emit(a.out, table.to_csv());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* env = std::getenv("ATTNSQUEEZE_THREADS")) {
    std::uint64_t n = 0;
    const std::string_view s(env);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      std::cerr << "attnsqueeze: ATTNSQUEEZE_THREADS must be a non-negative integer\n";
      return kExitUsage;
    }
    set_max_threads(n);
  }

  CLI::App app{"Profile, prune, quantize and encode post-softmax attention."};
  app.require_subcommand(1);

  ProfileArgs pa;
  auto* profile = app.add_subcommand("profile", "Histogram, sparsity and dispersion report for ATTN dumps");
  profile->add_option("input", pa.inputs, "ATTN file(s) or directory")->required();
  profile->add_option("--out", pa.out, "Output directory")->required();
  profile->add_flag("--pooled", pa.pooled, "Pool every instance into one report");
  profile->add_option("--epsilon", pa.epsilon, "Sparsity threshold");
  profile->add_option("--lower-bound", pa.lower_bound, "Smallest histogram edge");
  profile->add_option("--bins-per-decade", pa.bins_per_decade);
  profile->add_flag("--no-underflow", pa.no_underflow, "Drop values below the lower bound");
  profile->add_option("--outlier-bins", pa.outlier_bins, "c50 deviation (bins) that marks an outlier token");
  profile->add_flag("--row-histograms", pa.row_histograms, "Include per-row counts in report.json");

  TransformArgs ta;
  auto* transform = app.add_subcommand("transform", "Prune and/or quantize a tensor");
  transform->add_option("input", ta.input, ".attn or .spqa file")->required();
  transform->add_option("--out", ta.out, ".attn or .spqa output")->required();
  transform->add_option("--prune", ta.prune, "Zero values below this threshold");
  auto* quant_opt = transform->add_option("--quantize", ta.method, "linear, log or boolean");
  transform->add_option("--bits", ta.bits, "Code width")->needs(quant_opt);

  SweepArgs sa;
  auto* sweep = app.add_subcommand("sweep", "Sparsity and histogram divergence over a threshold/bit grid");
  sweep->add_option("input", sa.inputs, "ATTN file(s) or directory")->required();
  sweep->add_option("--method", sa.method, "linear, log, boolean or none (prune only)");
  sweep->add_option("--bits", sa.bits, "Comma-separated code widths");
  sweep->add_option("--prune", sa.prune, "Comma-separated thresholds");
  sweep->add_option("--epsilon", sa.epsilon, "Sparsity threshold");
  sweep->add_option("--out", sa.out, "CSV path (default stdout)");

  FootprintArgs fa;
  auto* footprint = app.add_subcommand("footprint", "Bits per row of the bitmap + packed-code layout");
  footprint->add_option("--n", fa.n, "Comma-separated row lengths")->required();
  footprint->add_option("--sparsity", fa.sparsity, "Comma-separated sparsities")->required();
  footprint->add_option("--bits", fa.bits, "Comma-separated code widths");
  footprint->add_option("--out", fa.out, "CSV path (default stdout)");

  ToyArgs ya;
  auto* toy_cmd = app.add_subcommand("toy", "Toy transformer degradation sweep");
  toy_cmd->add_option("--weights", ya.weights, "Weight manifest (JSON)");
  toy_cmd->add_option("--corpus", ya.corpus, "Token corpus");
  toy_cmd->add_option("--thresholds", ya.thresholds, "Comma-separated thresholds");
  auto* toy_quant = toy_cmd->add_option("--quantize", ya.method, "linear, log or boolean");
  toy_cmd->add_option("--bits", ya.bits, "Code width")->needs(toy_quant);
  toy_cmd->add_option("--epsilon", ya.epsilon, "Sparsity threshold");
  toy_cmd->add_option("--out", ya.out, "CSV path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*profile) return run_profile(pa);
    if (*transform) return run_transform(ta);
    if (*sweep) return run_sweep_cmd(sa);
    if (*footprint) return run_footprint(fa);
    if (*toy_cmd) return run_toy(ya);
  } catch (const UsageError& e) {
    std::cerr << "attnsqueeze: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "attnsqueeze: " << to_string(e.code()) << ": " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "attnsqueeze: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
