// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails.

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "attnsqueeze/codec.hpp"
#include "attnsqueeze/profiler.hpp"
#include "attnsqueeze/quantizer.hpp"
#include "attnsqueeze/tensor.hpp"
#include "attnsqueeze/toy.hpp"
#include "support/oracles.hpp"
#include "support/synth.hpp"

using namespace attnsqueeze;
namespace ts = attnsqueeze::testing;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_seconds = 0.0;  // 0 = none
  std::function<Outcome()> run;
};

void require(Outcome& o, bool ok, const std::string& what) {
  if (!ok) {
    o.pass = false;
    o.detail += (o.detail.empty() ? "" : "; ") + std::string("FAILED ") + what;
  }
}

void note(Outcome& o, const std::string& what) { o.detail += (o.detail.empty() ? "" : "; ") + what; }

std::vector<double> oracle_inputs() {
  ts::Rng rng(20210601);
  auto xs = ts::uniform_inputs(rng, 50000);
  const auto lg = ts::lognormal_inputs(rng, 50000);
  xs.insert(xs.end(), lg.begin(), lg.end());
  return xs;
}

Outcome quantizer_oracle() {
  Outcome o;
  const auto xs = oracle_inputs();
  std::uint64_t worst_ulp = 0;
  std::size_t configs = 0;
  std::size_t max_distinct_excess = 0;
  std::size_t kernel_mismatch = 0;
  std::vector<float> xf(xs.begin(), xs.end());
  std::vector<float> out(xs.size());
  for (QuantMethod m : {QuantMethod::linear, QuantMethod::log}) {
    for (int k = 1; k <= 8; ++k) {
      for (double t : {0.0, 1e-3}) {
        const Codebook cb = build_codebook({m, k, t});
        std::set<double> distinct;
        for (double x : xs) {
          const double got = quantize(x, cb);
          const double want = m == QuantMethod::linear ? oracle::linear_quantize(x, k, t) : oracle::log_quantize(x, k, t);
          worst_ulp = std::max(worst_ulp, oracle::ulp_distance(got, want));
          distinct.insert(got);
        }
        if (distinct.size() > (std::size_t{1} << k)) {
          max_distinct_excess = std::max(max_distinct_excess, distinct.size() - (std::size_t{1} << k));
        }
        // Tensor path: binary32 outputs must be the rounded scalar results.
        quantize_values(xf, out, cb);
        for (std::size_t i = 0; i < xs.size(); ++i) {
          if (out[i] != static_cast<float>(quantize(static_cast<double>(xf[i]), cb))) ++kernel_mismatch;
        }
        ++configs;
      }
    }
  }
  require(o, worst_ulp <= 1, fmt::format("max ulp distance {} > 1", worst_ulp));
  require(o, max_distinct_excess == 0, "distinct outputs exceed 2^k");
  require(o, kernel_mismatch == 0, fmt::format("{} tensor-path mismatches", kernel_mismatch));
  note(o, fmt::format("{} inputs x {} configs, max ulp {}, distinct <= 2^k everywhere", xs.size(), configs, worst_ulp));
  return o;
}

Outcome worked_values() {
  Outcome o;
  const Codebook lin = build_codebook({QuantMethod::linear, 2, 0.0});
  const double a = quantize_linear(0.6, lin);
  const double b = quantize_linear(0.2, lin);
  const Codebook lg = build_codebook({QuantMethod::log, 3, 1e-3});
  const double c = quantize_log(0.1, lg);
  require(o, a == 0.625, fmt::format("linear 0.6 -> {}", a));
  require(o, b == 0.0, fmt::format("linear 0.2 -> {}", b));
  require(o, std::abs(c - 0.08486) <= 1e-5,
          fmt::format("log 0.1 -> {:.7f} = 2^({:.6f}), target 0.08486 +- 1e-5", c, std::log2(c)));
  require(o, a == oracle::linear_quantize(0.6, 2, 0.0) && c == oracle::log_quantize(0.1, 3, 1e-3),
          "disagrees with direct transcription");
  note(o, fmt::format("linear k=2: 0.6 -> {}, 0.2 -> {}; log k=3 t=1e-3: 0.1 -> {:.7f}", a, b, c));
  return o;
}

double mean_row_jsd(const std::vector<std::vector<float>>& rows, const QuantSpec& spec) {
  const Codebook cb = build_codebook(spec);
  const HistogramBinner binner{HistogramSpec{}};
  double total = 0.0;
  for (const auto& row : rows) {
    std::vector<float> q(row.size());
    quantize_values(row, q, cb);
    total += js_divergence(row_histogram(row, binner).density, row_histogram(q, binner).density);
  }
  return total / static_cast<double>(rows.size());
}

Outcome log_beats_linear() {
  Outcome o;
  ts::Rng rng(1001);
  std::vector<std::vector<float>> rows;
  for (int i = 0; i < 100; ++i) rows.push_back(ts::lognormal_softmax_row(rng, 128));
  const double lin = mean_row_jsd(rows, {QuantMethod::linear, 3, 0.0});
  const double log_unpruned = mean_row_jsd(rows, {QuantMethod::log, 3, 0.0});
  const double log_pruned = mean_row_jsd(rows, {QuantMethod::log, 3, 1e-3});
  require(o, log_unpruned < lin, "log (unpruned) not below linear");
  require(o, log_pruned < lin, "log (t=1e-3) not below linear");
  note(o, fmt::format("mean JSD linear {:.4f}, log {:.4f}, log t=1e-3 {:.4f}", lin, log_unpruned, log_pruned));
  return o;
}

Outcome linear_pruning_insensitive() {
  Outcome o;
  const Codebook c0 = build_codebook({QuantMethod::linear, 3, 0.0});
  const Codebook ct = build_codebook({QuantMethod::linear, 3, 1e-3});
  double shift = 0.0;
  double per_level = 0.0;
  for (std::size_t i = 0; i < c0.levels.size(); ++i) {
    shift = std::max(shift, std::abs(ct.levels[i] - c0.levels[i]));
    per_level = std::max(per_level, std::abs(ct.levels[i] - c0.levels[i]) / c0.levels[i]);
  }
  // Level shift relative to the quantized range [0, 1].
  require(o, shift <= 1e-3, fmt::format("level shift {} exceeds 0.1% of the range", shift));

  const auto xs = oracle_inputs();
  std::size_t differ = 0;
  for (double x : xs) {
    const double pruned = x < 1e-3 ? 0.0 : x;
    differ += c0.encode_value(x) != ct.encode_value(pruned) ? 1 : 0;
  }
  const double frac = static_cast<double>(differ) / static_cast<double>(xs.size());
  require(o, frac < 0.01, fmt::format("{:.3f}% of elements change bin", 100 * frac));
  note(o, fmt::format("max level shift {:.3g} ({:.4f}% of range, {:.3f}% of the smallest level); {:.3f}% of {} "
                      "elements change bin",
                      shift, 100 * shift, 100 * per_level, 100 * frac, xs.size()));
  return o;
}

Outcome codec() {
  Outcome o;
  ts::Rng rng(4242);
  std::uniform_int_distribution<int> bits(1, 8);
  std::uniform_int_distribution<int> method(0, 2);
  const std::uint32_t sizes[] = {16, 32, 64, 128};
  const double thresholds[] = {0.0, 1e-4, 1e-3, 1e-2};
  std::size_t exact = 0;
  std::uint64_t worst_gap = 0;
  bool under = false;
  for (int i = 0; i < 100; ++i) {
    const QuantMethod m = static_cast<QuantMethod>(method(rng));
    const int k = m == QuantMethod::boolean ? 1 : bits(rng);
    const std::uint32_t n = sizes[i % 4];
    const auto t = ts::lognormal_tensor(50000 + i, 1 + i % 2, 2, n);
    const auto [q, cb] = quantize_tensor(t, {m, k, thresholds[(i / 4) % 4]});
    const auto stream = encode(q, cb);
    const auto back = decode(parse_spqa(serialize_spqa(stream)));
    if (back.size() == q.size() && std::memcmp(back.values().data(), q.values().data(), q.size() * 4) == 0) ++exact;
    for (std::size_t r = 0; r < stream.rows.size(); ++r) {
      const auto row = q.values().subspan(r * n, n);
      const auto zeros = static_cast<double>(std::count(row.begin(), row.end(), 0.0f));
      const Footprint f =
          footprint_bits({FootprintScheme::bitmap_packed, n, zeros / n, static_cast<std::uint32_t>(k)});
      const std::uint64_t stored = (stream.rows[r].bitmap.size() + stream.rows[r].codes.size()) * 8;
      if (stored < f.bits) under = true;
      worst_gap = std::max(worst_gap, stored - std::min(stored, f.bits));
    }
  }
  require(o, exact == 100, fmt::format("{} of 100 round trips bit-exact", exact));
  require(o, !under && worst_gap <= 7, fmt::format("stored size off the model by {} bits", worst_gap));

  const Footprint a = footprint_bits({FootprintScheme::bitmap_packed, 1000, 0.80, 3});
  const Footprint b = footprint_bits({FootprintScheme::bitmap_packed, 1000, 0.87, 3});
  const double pa = std::round(a.reduction * 1e4) / 100;
  const double pb = std::round(b.reduction * 1e4) / 100;
  require(o, a.bits == 1600 && pa == 95.0, fmt::format("s=0.80 gives {} bits, {}%", a.bits, pa));
  require(o, b.bits == 1390 && pb == 95.66, fmt::format("s=0.87 gives {} bits, {}%", b.bits, pb));
  require(o, std::abs(pb - 96.0) <= 0.5, "s=0.87 reduction not within 0.5 points of 96%");
  note(o, fmt::format("100/100 bit-exact, max stored-vs-model gap {} bits/row; N=1000 k=3: s=0.80 {} bits {:.2f}%, "
                      "s=0.87 {} bits {:.2f}%",
                      worst_gap, a.bits, pa, b.bits, pb));
  return o;
}

Outcome toy_harness() {
  Outcome o;
  const std::filesystem::path dir = std::filesystem::path(ATTNSQUEEZE_TEST_ASSET_DIR) / "toy";
  const auto weights = toy::WeightBundle::load(dir / "toy_weights.json");
  const auto corpus = toy::load_corpus(dir / "corpus.txt");

  bool identical = true;
  double worst = 0.0;
  for (const auto& seq : corpus) {
    const auto base = toy::forward(seq, weights);
    toy::AttentionTransform zero;
    zero.prune = PruneSpec{0.0};
    const auto z = toy::forward(seq, weights, zero);
    identical = identical && std::memcmp(base.logits.data(), z.logits.data(), base.logits.size() * 8) == 0;
    toy::AttentionTransform tiny;
    tiny.prune = PruneSpec{1e-8};
    worst = std::max(worst, toy::max_relative_deviation(base.logits, toy::forward(seq, weights, tiny).logits));
  }
  require(o, identical, "t=0 changed logits");
  require(o, worst < 1e-6, fmt::format("t=1e-8 relative logit deviation {}", worst));

  std::vector<toy::SweepPoint> grid;
  for (int e = -8; e <= -1; ++e) grid.push_back({std::pow(10.0, e), std::nullopt, 0});
  const auto first = toy::run_sweep(corpus, weights, grid);
  const auto second = toy::run_sweep(corpus, weights, grid);
  bool monotone = true;
  for (std::size_t i = 1; i < first.rows.size(); ++i) {
    monotone = monotone && first.rows[i].induced_sparsity >= first.rows[i - 1].induced_sparsity;
  }
  require(o, monotone, "induced sparsity decreases along the grid");
  require(o, first.to_csv() == second.to_csv(), "repeated sweeps differ");
  note(o, fmt::format("t=0 bitwise identical; t=1e-8 max rel deviation {:.3g}; sparsity {:.4f} -> {:.4f} over "
                      "1e-8..1e-1; CSVs identical",
                      worst, first.rows.front().induced_sparsity, first.rows.back().induced_sparsity));
  return o;
}

Outcome profiler_oracles() {
  Outcome o;
  const std::vector<float> example{0.4f, 0.3f, 0.2f, 0.1f};
  require(o, major_token_count(example).count == 2, "[0.4, 0.3, 0.2, 0.1] major tokens != 2");

  ts::Rng rng(777);
  const HistogramSpec spec;
  const auto edges = spec.edges();
  std::size_t heads = 0;
  std::size_t mismatches = 0;
  for (std::uint32_t n = 1; n <= 64; n += (n < 8 ? 1 : 7)) {
    for (int trial = 0; trial < 4; ++trial) {
      AttentionTensor t(1, 1, n);
      std::uniform_int_distribution<std::size_t> below(0, n - 1);
      for (std::uint32_t i = 0; i < n; ++i) {
        const auto row = trial % 2 ? ts::lognormal_softmax_row(rng, n, 2.0 + trial) : ts::row_with_sparsity(rng, n, below(rng));
        std::copy(row.begin(), row.end(), t.row(0, 0, i).begin());
      }
      // One planted outlier row far below the rest.
      if (trial == 3 && n >= 4) std::fill(t.row(0, 0, 1).begin(), t.row(0, 0, 1).end(), 1e-7f);
      ProfileOptions opts;
      opts.keep_row_histograms = true;
      opts.outlier_deviation_bins = 4;
      const HeadView view = t.head(0, 0);
      const HeadProfile p = profile_head(std::span(&view, 1), 0, 0, opts);

      std::vector<std::uint64_t> pooled(edges.size(), 0);
      std::vector<std::uint32_t> c50s;
      std::vector<std::uint32_t> majors;
      std::array<std::uint64_t, 10> bars{};
      bool rows_ok = true;
      for (std::uint32_t i = 0; i < n; ++i) {
        const auto row = t.row(0, 0, i);
        const auto counts = oracle::histogram_counts(row, edges);
        for (std::size_t b = 0; b < counts.size(); ++b) {
          pooled[b] += counts[b];
          rows_ok = rows_ok && p.row_counts[i * counts.size() + b] == counts[b];
        }
        c50s.push_back(static_cast<std::uint32_t>(oracle::c50(counts)));
        majors.push_back(oracle::major_tokens(row));
        bars[std::min<std::size_t>(9, oracle::count_below(row, 1e-8) * 10 / n)] += 1;
      }
      bool ok = rows_ok && p.histogram.counts == pooled && p.c50_indices == c50s &&
                p.outlier_token_ids == oracle::outliers(c50s, 4);
      for (std::size_t b = 0; b < 10; ++b) {
        ok = ok && p.sparsity_distribution[b] == static_cast<double>(bars[b]) / n;
      }
      std::vector<std::uint32_t> lib_majors;
      for (std::uint32_t i = 0; i < n; ++i) lib_majors.push_back(major_token_count(t.row(0, 0, i)).count);
      ok = ok && lib_majors == majors;
      auto close = [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)); };
      ok = ok && close(p.major_token_mean, oracle::mean(majors)) &&
           close(p.major_token_std, oracle::population_std(majors)) &&
           close(p.dispersion, oracle::population_std(c50s));
      mismatches += ok ? 0 : 1;
      ++heads;
    }
  }
  require(o, mismatches == 0, fmt::format("{} of {} heads disagree with the oracles", mismatches, heads));

  // Head where every row has 96% of its values below epsilon.
  AttentionTensor planted(1, 1, 50);
  for (std::uint32_t i = 0; i < 50; ++i) {
    const auto row = ts::row_with_sparsity(rng, 50, 48);
    std::copy(row.begin(), row.end(), planted.row(0, 0, i).begin());
  }
  const auto dist = sparsity_distribution(planted.head(0, 0));
  require(o, dist[9] == 1.0, fmt::format("planted head puts {} in [0.9, 1.0]", dist[9]));
  note(o, fmt::format("{} synthetic heads (N <= 64) match exactly on counts, bars, major tokens, c50, outliers; "
                      "planted head mass in [0.9, 1.0] = {}",
                      heads, dist[9]));
  return o;
}

Outcome prune_contract() {
  Outcome o;
  std::size_t checks = 0;
  bool sums_ok = true;
  bool idempotent = true;
  bool counts_ok = true;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto t = ts::lognormal_tensor(9000 + seed, 2, 2, 8 + static_cast<std::uint32_t>(seed) * 6);
    const auto before = row_sums(t);
    const double n = t.tokens();
    for (double thr : {1e-8, 1e-6, 1e-4, 1e-3, 1e-2, 5e-2}) {
      const auto p = prune(t, {thr});
      const auto after = row_sums(p);
      for (std::size_t r = 0; r < after.size(); ++r) {
        sums_ok = sums_ok && after[r] > 1.0 - n * thr && after[r] <= before[r];
      }
      idempotent = idempotent && prune(p, {thr}) == p;
      for (double eps : {1e-8, thr, 0.5}) {
        counts_ok = counts_ok && measure_sparsity(p, eps).below == oracle::count_below(p.values(), eps);
      }
      counts_ok = counts_ok && oracle::count_below(p.values(), thr) == oracle::count_below(t.values(), thr);
      ++checks;
    }
  }
  require(o, sums_ok, "row sum outside (1 - N t, original]");
  require(o, idempotent, "prune not idempotent");
  require(o, counts_ok, "sparsity disagrees with counting oracle");
  note(o, fmt::format("{} (tensor, threshold) pairs: sums bounded, idempotent, counts exact", checks));
  return o;
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"quantizer oracle equivalence", 30.0, quantizer_oracle},
      {"worked quantizer values", 0.0, worked_values},
      {"log beats linear on histogram JSD", 10.0, log_beats_linear},
      {"linear quantization is insensitive to pruning", 0.0, linear_pruning_insensitive},
      {"codec round trip and footprint", 0.0, codec},
      {"toy transformer harness", 120.0, toy_harness},
      {"profiler matches brute-force oracles", 0.0, profiler_oracles},
      {"prune contract", 0.0, prune_contract},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("threw: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_seconds > 0.0) {
      if (secs >= c.budget_seconds) {
        o.pass = false;
        o.detail += fmt::format("; FAILED runtime {:.2f}s over {:.0f}s budget", secs, c.budget_seconds);
      } else {
        o.detail += fmt::format("; {:.2f}s of {:.0f}s budget", secs, c.budget_seconds);
      }
    }
    fmt::print("{} {}: {}\n", o.pass ? "PASS" : "FAIL", c.name, o.detail);
    failures += o.pass ? 0 : 1;
  }
  fmt::print("{} of {} criteria passed\n", criteria.size() - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
