#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pnet/pnet.hpp"

namespace fs = std::filesystem;
using namespace pnet;

namespace {

struct RunResult {
  int code = -1;
  std::string out;  // stdout and stderr interleaved
};

const fs::path& base_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "pnet_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

const std::string& cli() {
  static const std::string path = [] {
    const char* env = std::getenv("PERSONNET_CLI");
    REQUIRE_MESSAGE(env != nullptr, "set PERSONNET_CLI to the CLI binary path");
    return std::string(env);
  }();
  return path;
}

RunResult run(const std::string& args) {
  static int counter = 0;
  const fs::path capture = base_dir() / ("out" + std::to_string(counter++) + ".txt");
  const std::string cmd = cli() + " " + args + " > \"" + capture.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  REQUIRE(status != -1);
  r.code = WEXITSTATUS(status);
  std::ifstream in(capture);
  std::stringstream buf;
  buf << in.rdbuf();
  r.out = buf.str();
  return r;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// corpus and config shared by the training and eval cases, built on first use
const fs::path& corpus_manifest() {
  static const fs::path manifest = [] {
    const fs::path dir = base_dir() / "corpus";
    const RunResult r =
        run("synth --out \"" + dir.string() + "\" --identities 8 --per-view 3 --seed 42");
    REQUIRE(r.code == 0);
    return dir / "manifest.txt";
  }();
  return manifest;
}

const fs::path& tiny_conf() {
  static const fs::path conf = [] {
    const fs::path path = base_dir() / "tiny.conf";
    std::ofstream out(path);
    out << "network.input_height = 40\n"
           "network.input_width = 20\n"
           "network.input_channels = 3\n"
           "network.trunk_channels = 8\n"
           "network.trunk_filters = 3\n"
           "network.trunk_pools = floor\n"
           "network.neighborhood = 3\n"
           "network.summary_channels = 8\n"
           "network.tail_channels = 8\n"
           "network.tail_filters = 3\n"
           "network.tail_pools = floor\n"
           "network.fc_sizes = 32, 32, 16\n"
           "optimizer.learning_rate = 0.003\n"
           "optimizer.weight_decay = 0\n"
           "training.iterations = 300\n"
           "training.batch_pairs = 8\n"
           "training.log_every = 100\n"
           "training.validation_fraction = 0\n"
           "training.seed = 3\n";
    return path;
  }();
  return conf;
}

const fs::path& trained_checkpoint() {
  static const fs::path ckpt = [] {
    const fs::path path = base_dir() / "model.ckpt";
    const RunResult r = run("train --config \"" + tiny_conf().string() + "\" --data \"" +
                            corpus_manifest().string() + "\" --out \"" + path.string() + "\"");
    REQUIRE(r.code == 0);
    return path;
  }();
  return ckpt;
}

// k -> rate rows of a curve file
std::vector<double> curve_rates(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  REQUIRE(line == "k,rate");
  std::vector<double> rates;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::size_t k = 0;
    double rate = -1.0;
    REQUIRE(std::sscanf(line.c_str(), "%zu,%lf", &k, &rate) == 2);
    REQUIRE(k == rates.size() + 1);
    rates.push_back(rate);
  }
  return rates;
}

}  // namespace

TEST_CASE("synth creates a reproducible corpus and refuses to overwrite") {
  const fs::path a = base_dir() / "synth_a";
  const fs::path b = base_dir() / "synth_b";

  RunResult r = run("synth --out \"" + a.string() + "\" --identities 3 --per-view 1 --seed 5");
  CHECK(r.code == 0);
  CHECK(r.out.find("wrote 6 images") != std::string::npos);
  CHECK(fs::exists(a / "manifest.txt"));

  r = run("synth --out \"" + b.string() + "\" --identities 3 --per-view 1 --seed 5");
  CHECK(r.code == 0);
  CHECK(read_file(a / "manifest.txt") == read_file(b / "manifest.txt"));
  // same seed, same pixels
  const DatasetManifest ma = load_manifest((a / "manifest.txt").string());
  CHECK(read_file(a / ma.records[0].path) == read_file(b / ma.records[0].path));

  const auto count_entries = [&] {
    return std::distance(fs::directory_iterator(a), fs::directory_iterator{});
  };
  const auto before = count_entries();
  r = run("synth --out \"" + a.string() + "\" --identities 3 --per-view 1 --seed 6");
  CHECK(r.code != 0);
  CHECK(r.out.find("--force") != std::string::npos);
  CHECK(count_entries() == before);

  r = run("synth --out \"" + a.string() + "\" --identities 3 --per-view 1 --seed 6 --force");
  CHECK(r.code == 0);
}

TEST_CASE("train writes a checkpoint and metrics deterministically") {
  const fs::path ckpt2 = base_dir() / "model2.ckpt";
  const fs::path metrics2 = base_dir() / "metrics2.csv";
  const fs::path metrics3 = base_dir() / "metrics3.csv";

  RunResult r = run("train --config \"" + tiny_conf().string() + "\" --data \"" +
                    corpus_manifest().string() + "\" --out \"" + ckpt2.string() +
                    "\" --metrics \"" + metrics2.string() + "\"");
  CHECK(r.code == 0);
  CHECK(r.out.find("iter 100") != std::string::npos);
  CHECK(r.out.find("trained 300 iterations") != std::string::npos);

  const fs::path ckpt3 = base_dir() / "model3.ckpt";
  r = run("train --config \"" + tiny_conf().string() + "\" --data \"" +
          corpus_manifest().string() + "\" --out \"" + ckpt3.string() + "\" --metrics \"" +
          metrics3.string() + "\"");
  CHECK(r.code == 0);

  CHECK(read_file(ckpt2) == read_file(ckpt3));
  CHECK(read_file(metrics2) == read_file(metrics3));
  CHECK(read_file(metrics2).find("iteration,loss,learning_rate") == 0);
}

TEST_CASE("a trained model ranks its own identities near perfectly") {
  const fs::path curve = base_dir() / "trained_curve.csv";
  const RunResult r = run("eval \"" + trained_checkpoint().string() + "\" --data \"" +
                          corpus_manifest().string() + "\" --trials 5 --seed 9 --out \"" +
                          curve.string() + "\"");
  CHECK(r.code == 0);
  CHECK(r.out.find("rank-1") != std::string::npos);
  CHECK(r.out.find("mAP") != std::string::npos);
  CHECK(r.out.find("probes 24, gallery identities 8, trials 5") != std::string::npos);

  const std::vector<double> rates = curve_rates(curve);
  REQUIRE(rates.size() == 8);
  CHECK(rates[0] >= 0.9);
  CHECK(rates.back() == doctest::Approx(1.0));
}

TEST_CASE("eval output is byte-identical for one seed") {
  const fs::path c1 = base_dir() / "det1.csv";
  const fs::path c2 = base_dir() / "det2.csv";
  const std::string common = "eval \"" + trained_checkpoint().string() + "\" --data \"" +
                             corpus_manifest().string() + "\" --trials 5 --seed 9";
  const RunResult r1 = run(common + " --out \"" + c1.string() + "\"");
  const RunResult r2 = run(common + " --out \"" + c2.string() + "\"");
  CHECK(r1.code == 0);
  CHECK(r2.code == 0);
  CHECK(read_file(c1) == read_file(c2));
  // the stdout reports differ only in the curve path
  CHECK(r1.out.substr(0, r1.out.find("curve written")) ==
        r2.out.substr(0, r2.out.find("curve written")));
}

TEST_CASE("an untrained model ranks near chance") {
  double rank1_sum = 0.0;
  std::vector<std::string> curves;
  for (const std::uint64_t seed : {21u, 22u, 23u, 24u}) {
    const fs::path ckpt = base_dir() / ("raw" + std::to_string(seed) + ".ckpt");
    const NetworkConfig cfg = NetworkConfig::tiny();
    Rng rng(seed);
    const ParameterStore params = init_parameters<float>(cfg, rng);
    save_checkpoint(ckpt.string(), cfg, params);

    const fs::path curve = base_dir() / ("raw" + std::to_string(seed) + ".csv");
    const RunResult r = run("eval \"" + ckpt.string() + "\" --data \"" +
                            corpus_manifest().string() + "\" --trials 10 --seed 9 --out \"" +
                            curve.string() + "\"");
    REQUIRE(r.code == 0);
    const std::vector<double> rates = curve_rates(curve);
    REQUIRE(rates.size() == 8);
    rank1_sum += rates[0];
    CHECK(rates.back() == doctest::Approx(1.0));
    for (std::size_t k = 1; k < rates.size(); ++k) CHECK(rates[k] >= rates[k - 1]);
    curves.push_back(read_file(curve));
  }
  // chance rank-1 is 1/8; random features wobble around it but stay far from trained
  const double mean_rank1 = rank1_sum / 4.0;
  CHECK(mean_rank1 > 0.0);
  CHECK(mean_rank1 < 0.45);
  // different inits rank differently
  CHECK(curves[0] != curves[1]);
}

TEST_CASE("train without a usable dataset fails leaving no checkpoint") {
  const fs::path ckpt = base_dir() / "never.ckpt";

  RunResult r = run("train --config \"" + tiny_conf().string() + "\" --out \"" + ckpt.string() +
                    "\"");
  CHECK(r.code == 1);
  CHECK(r.out.find("--data") != std::string::npos);
  CHECK_FALSE(fs::exists(ckpt));

  const fs::path missing = base_dir() / "no_such" / "manifest.txt";
  r = run("train --config \"" + tiny_conf().string() + "\" --data \"" + missing.string() +
          "\" --out \"" + ckpt.string() + "\"");
  CHECK(r.code == 1);
  CHECK(r.out.find("no_such") != std::string::npos);
  CHECK_FALSE(fs::exists(ckpt));
  CHECK_FALSE(fs::exists(ckpt.string() + ".tmp"));
}

TEST_CASE("eval surfaces checkpoint corruption with a byte offset") {
  const std::string good = read_file(trained_checkpoint());
  const fs::path bad = base_dir() / "truncated.ckpt";
  std::ofstream(bad, std::ios::binary) << good.substr(0, 64);

  RunResult r = run("eval \"" + bad.string() + "\" --data \"" + corpus_manifest().string() +
                    "\"");
  CHECK(r.code == 1);
  CHECK(r.out.find("error:") != std::string::npos);
  CHECK(r.out.find("byte") != std::string::npos);

  r = run("eval \"" + (base_dir() / "absent.ckpt").string() + "\" --data \"" +
          corpus_manifest().string() + "\"");
  CHECK(r.code == 1);
}

TEST_CASE("gradcheck exit status tracks tolerance and sabotage") {
  RunResult r = run("gradcheck --seed 1");
  CHECK(r.code == 0);
  CHECK(r.out.find("PASS") != std::string::npos);
  CHECK(r.out.find("net.conv0.weights") != std::string::npos);

  // below the double-precision noise floor nothing can pass
  r = run("gradcheck --seed 1 --tolerance 1e-12");
  CHECK(r.code == 2);
  CHECK(r.out.find("FAIL") != std::string::npos);

  r = run("gradcheck --seed 1 --sabotage");
  CHECK(r.code == 2);
  CHECK(r.out.find("FAIL") != std::string::npos);
}

TEST_CASE("missing required flags and unknown subcommands fail parsing") {
  CHECK(run("train --config \"" + tiny_conf().string() + "\"").code != 0);
  CHECK(run("eval \"" + trained_checkpoint().string() + "\"").code != 0);
  CHECK(run("frobnicate").code != 0);
  CHECK(run("").code != 0);
}
