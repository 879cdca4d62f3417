#include <doctest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "attnsqueeze/attn_io.hpp"
#include "attnsqueeze/codec.hpp"
#include "support/synth.hpp"
#include "support/tempdir.hpp"

using namespace attnsqueeze;
namespace ts = attnsqueeze::testing;
namespace fs = std::filesystem;

namespace {

struct Run {
  int status = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Run cli(const ts::TempDir& dir, const std::string& args) {
  const fs::path out = dir.path() / "stdout.txt";
  const fs::path err = dir.path() / "stderr.txt";
  const std::string cmd = "'" + std::string(ATTNSQUEEZE_TEST_CLI) + "' " + args + " >'" + out.string() + "' 2>'" +
                          err.string() + "'";
  const int raw = std::system(cmd.c_str());
  Run r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_CASE("footprint") {
  ts::TempDir dir;
  const Run r = cli(dir, "footprint --n 1000 --sparsity 0.80,0.87 --bits 3");
  CHECK(r.status == 0);
  CHECK(r.out ==
        "n,sparsity,bits,packed_bits_per_row,dense_bits_per_row,reduction_pct\n"
        "1000,0.8,3,1600,32000,95.00\n"
        "1000,0.87,3,1390,32000,95.66\n");
  CHECK(cli(dir, "footprint --n 1000 --sparsity 0.8,,0.9").status == 64);
  CHECK(cli(dir, "footprint --n 1000 --sparsity 8e-1x").status == 64);
  CHECK(cli(dir, "footprint --n 1000").status == 64);
  CHECK(cli(dir, "").status == 64);
  CHECK(cli(dir, "frobnicate").status == 64);
}

TEST_CASE("profile") {
  ts::TempDir dir;
  const AttentionTensor t = ts::lognormal_tensor(1, 2, 3, 10);
  const fs::path in = dir.path() / "one.attn";
  store_attn(t, in);
  const std::string before = slurp(in);

  Run r = cli(dir, "profile " + q(in) + " --out " + q(dir.path() / "rep"));
  CHECK(r.status == 0);
  const auto j = nlohmann::json::parse(slurp(dir.path() / "rep" / "report.json"));
  CHECK(j.at("head_profiles").size() == 6);
  CHECK(j.at("mode") == "single");
  CHECK(fs::exists(dir.path() / "rep" / "L1_H2_hist.csv"));
  CHECK(fs::exists(dir.path() / "rep" / "sparsity_distribution.csv"));
  CHECK(slurp(in) == before);
  const std::string first = slurp(dir.path() / "rep" / "report.json");
  CHECK(cli(dir, "profile " + q(in) + " --out " + q(dir.path() / "rep2")).status == 0);
  CHECK(slurp(dir.path() / "rep2" / "report.json") == first);

  const fs::path set = dir.path() / "set";
  fs::create_directories(set);
  for (int i = 0; i < 3; ++i) store_attn(ts::lognormal_tensor(10 + i, 2, 3, 8 + i), set / ("inst" + std::to_string(i) + ".attn"));
  r = cli(dir, "profile " + q(set) + " --pooled --out " + q(dir.path() / "pooled"));
  CHECK(r.status == 0);
  const auto p = nlohmann::json::parse(slurp(dir.path() / "pooled" / "report.json"));
  CHECK(p.at("instances") == 3);
  CHECK(p.at("mode") == "pooled");

  r = cli(dir, "profile " + q(set) + " --out " + q(dir.path() / "each"));
  CHECK(r.status == 0);
  for (int i = 0; i < 3; ++i) CHECK(fs::exists(dir.path() / "each" / ("inst" + std::to_string(i)) / "report.json"));
}

TEST_CASE("malformed input exits 2 and writes nothing") {
  ts::TempDir dir;
  const fs::path set = dir.path() / "set";
  fs::create_directories(set);
  store_attn(ts::lognormal_tensor(1, 1, 2, 8), set / "a.attn");
  auto bytes = serialize_attn(ts::lognormal_tensor(2, 1, 2, 8));
  bytes.resize(100);
  write_file(set / "b.attn", bytes);

  Run r = cli(dir, "profile " + q(set / "b.attn") + " --out " + q(dir.path() / "out"));
  CHECK(r.status == 2);
  CHECK(r.err.find("b.attn") != std::string::npos);
  CHECK(r.err.find("offset 100") != std::string::npos);
  CHECK_FALSE(fs::exists(dir.path() / "out"));

  r = cli(dir, "profile " + q(set) + " --out " + q(dir.path() / "out"));
  CHECK(r.status == 2);
  CHECK_FALSE(fs::exists(dir.path() / "out"));

  AttentionTensor bad = ts::lognormal_tensor(3, 1, 1, 4);
  bad.values()[5] = 2.0f;
  store_attn(bad, dir.path() / "range.attn");
  r = cli(dir, "profile " + q(dir.path() / "range.attn") + " --out " + q(dir.path() / "out"));
  CHECK(r.status == 2);
  CHECK(r.err.find("range.attn") != std::string::npos);
}

TEST_CASE("transform") {
  ts::TempDir dir;
  const AttentionTensor t = ts::lognormal_tensor(5, 2, 2, 24);
  const fs::path in = dir.path() / "in.attn";
  store_attn(t, in);
  const std::string before = slurp(in);

  Run r = cli(dir, "transform " + q(in) + " --prune 1e-3 --out " + q(dir.path() / "p.attn"));
  CHECK(r.status == 0);
  const AttentionTensor p = load_attn(dir.path() / "p.attn");
  CHECK(measure_sparsity(p, 1e-3).fraction >= measure_sparsity(t, 1e-3).fraction);
  CHECK(p == prune(t, {1e-3}));

  r = cli(dir, "transform " + q(in) + " --prune 1e-3 --quantize log --bits 3 --out " + q(dir.path() / "x.spqa"));
  CHECK(r.status == 0);
  const AttentionTensor d = decode(load_spqa(dir.path() / "x.spqa"));
  const std::set<float> distinct(d.values().begin(), d.values().end());
  CHECK(distinct.size() <= 8);
  CHECK(d == quantize_tensor(t, {QuantMethod::log, 3, 1e-3}).first);

  r = cli(dir, "transform " + q(dir.path() / "x.spqa") + " --prune 1e-3 --quantize log --bits 3 --out " +
                   q(dir.path() / "y.spqa"));
  CHECK(r.status == 0);
  CHECK(slurp(dir.path() / "y.spqa") == slurp(dir.path() / "x.spqa"));

  r = cli(dir, "transform " + q(dir.path() / "x.spqa") + " --out " + q(dir.path() / "x.attn"));
  CHECK(r.status == 0);
  CHECK(load_attn(dir.path() / "x.attn") == d);

  CHECK(cli(dir, "transform " + q(in) + " --bits 3 --out " + q(dir.path() / "z.attn")).status == 64);
  CHECK(cli(dir, "transform " + q(in) + " --prune 1.5 --out " + q(dir.path() / "z.attn")).status == 64);
  CHECK(cli(dir, "transform " + q(in) + " --quantize cubic --out " + q(dir.path() / "z.attn")).status == 64);
  CHECK(cli(dir, "transform " + q(in) + " --prune 1e-3 --out " + q(dir.path() / "z.spqa")).status == 64);
  CHECK(cli(dir, "transform " + q(in) + " --quantize log --bits 9 --out " + q(dir.path() / "z.attn")).status == 64);
  CHECK_FALSE(fs::exists(dir.path() / "z.attn"));
  CHECK(slurp(in) == before);
}

TEST_CASE("sweep") {
  ts::TempDir dir;
  const fs::path in = dir.path() / "in.attn";
  store_attn(ts::lognormal_tensor(21, 1, 2, 64), in);
  Run r = cli(dir, "sweep " + q(in) + " --bits 2,3,4 --method log --prune 1e-3");
  CHECK(r.status == 0);
  const auto rows = csv_rows(r.out);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == std::vector<std::string>{"method", "bits", "threshold", "epsilon", "sparsity", "divergence"});
  CHECK(rows[1][1] == "2");
  CHECK(rows[3][1] == "4");
  CHECK(std::stod(rows[3][5]) <= std::stod(rows[1][5]));

  r = cli(dir, "sweep " + q(in) + " --method none");
  CHECK(r.status == 0);
  CHECK(lines(r.out) == 9);
  CHECK(cli(dir, "sweep " + q(in) + " --prune '1e-3;1e-2'").status == 64);
  CHECK(cli(dir, "sweep " + q(dir.path() / "missing.attn")).status == 2);
}

TEST_CASE("toy") {
  ts::TempDir dir;
  Run a = cli(dir, "toy --thresholds 0,1e-8,1e-4,1e-2");
  CHECK(a.status == 0);
  CHECK(lines(a.out) == 1 + 1 + 4);
  Run b = cli(dir, "toy --thresholds 0,1e-8,1e-4,1e-2");
  CHECK(a.out == b.out);
  const auto rows = csv_rows(a.out);
  CHECK(rows[1][0] == "identity");
  CHECK(rows[1][5] == "1");
  CHECK(cli(dir, "toy --thresholds 0,abc").status == 64);
  CHECK(cli(dir, "toy --bits 3").status == 64);
  Run q3 = cli(dir, "toy --thresholds 0,1e-3 --quantize log --bits 3 --out " + q(dir.path() / "t.csv"));
  CHECK(q3.status == 0);
  CHECK(lines(slurp(dir.path() / "t.csv")) == 4);
}
