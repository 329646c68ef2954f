#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pnet/checkpoint.hpp"
#include "pnet/layers.hpp"
#include "pnet/network.hpp"
#include "pnet/rng.hpp"
#include "pnet/tensor.hpp"

using namespace pnet;

namespace {

TensorD random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// per-entry re-derivation of the difference layer straight from its
// definition, no block loops shared with the implementation
TensorD difference_naive(const TensorD& f, const TensorD& h, std::size_t n) {
  const std::ptrdiff_t hf = std::ptrdiff_t(f.shape()[0]);
  const std::ptrdiff_t wf = std::ptrdiff_t(f.shape()[1]);
  const std::size_t c = f.shape()[2];
  const std::ptrdiff_t r = std::ptrdiff_t(n / 2);
  TensorD out({std::size_t(hf) * n, std::size_t(wf) * n, c});
  for (std::size_t row = 0; row < out.shape()[0]; ++row)
    for (std::size_t col = 0; col < out.shape()[1]; ++col) {
      const std::ptrdiff_t x = std::ptrdiff_t(row / n), u = std::ptrdiff_t(row % n);
      const std::ptrdiff_t y = std::ptrdiff_t(col / n), v = std::ptrdiff_t(col % n);
      const std::ptrdiff_t nx = x + u - r, ny = y + v - r;
      for (std::size_t ch = 0; ch < c; ++ch) {
        double neighbor = 0.0;
        if (nx >= 0 && nx < hf && ny >= 0 && ny < wf)
          neighbor = h(std::size_t(nx), std::size_t(ny), ch);
        out(row, col, ch) = f(std::size_t(x), std::size_t(y), ch) - neighbor;
      }
    }
  return out;
}

std::map<std::string, Shape> plan_as_map(const ShapePlan& plan) {
  std::map<std::string, Shape> m;
  for (const auto& e : plan) m[e.name] = e.extents;
  return m;
}

ParameterStore make_params(const NetworkConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  return init_parameters<float>(cfg, rng);
}

}  // namespace

TEST_CASE("canonical shape plan resolves every published stage") {
  const auto m = plan_as_map(plan_shapes(NetworkConfig::canonical()));
  CHECK(m.at("input") == Shape{160, 60, 3});
  CHECK(m.at("conv0") == Shape{157, 57, 32});
  CHECK(m.at("pool0") == Shape{79, 29, 32});
  CHECK(m.at("conv1") == Shape{76, 26, 32});
  CHECK(m.at("pool1") == Shape{38, 13, 32});
  CHECK(m.at("conv2") == Shape{35, 10, 32});
  CHECK(m.at("conv3") == Shape{32, 7, 32});
  CHECK(m.at("difference") == Shape{96, 21, 32});
  CHECK(m.at("summary") == Shape{32, 7, 32});
  CHECK(m.at("conv4") == Shape{30, 5, 32});
  CHECK(m.at("pool4") == Shape{15, 2, 32});
  CHECK(m.at("flatten") == Shape{960});
  CHECK(m.at("fc1") == Shape{4096});
  CHECK(m.at("fc2") == Shape{4096});
  CHECK(m.at("fc3") == Shape{512});
  CHECK(m.at("head") == Shape{2});
}

TEST_CASE("tiny shape plan") {
  const auto m = plan_as_map(plan_shapes(NetworkConfig::tiny()));
  CHECK(m.at("input") == Shape{40, 20, 3});
  CHECK(m.at("conv0") == Shape{38, 18, 8});
  CHECK(m.at("pool0") == Shape{19, 9, 8});
  CHECK(m.at("conv1") == Shape{17, 7, 8});
  CHECK(m.at("difference") == Shape{51, 21, 8});
  CHECK(m.at("summary") == Shape{17, 7, 8});
  CHECK(m.at("conv2") == Shape{15, 5, 8});
  CHECK(m.at("pool2") == Shape{7, 2, 8});
  CHECK(m.at("flatten") == Shape{112});
  CHECK(m.at("head") == Shape{2});
}

TEST_CASE("impossible plans are rejected with the offending layer named") {
  NetworkConfig cfg = NetworkConfig::tiny();
  cfg.input_height = 4;  // collapses once the filters eat it
  CHECK_THROWS_AS(plan_shapes(cfg), ConfigError);

  NetworkConfig even = NetworkConfig::tiny();
  even.neighborhood = 4;
  CHECK_THROWS_AS(plan_shapes(even), ConfigError);

  NetworkConfig zero_fc = NetworkConfig::tiny();
  zero_fc.fc_sizes = {32, 0};
  CHECK_THROWS_AS(plan_shapes(zero_fc), ConfigError);

  try {
    NetworkConfig bad = NetworkConfig::tiny();
    bad.input_width = 5;
    plan_shapes(bad);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("width") != std::string::npos);
  }
}

TEST_CASE("parameter plan covers trunk, summary, tail, fc and head") {
  const auto params = plan_parameters(NetworkConfig::canonical());
  std::map<std::string, Shape> m(params.begin(), params.end());
  CHECK(m.at("conv0.weights") == Shape{32, 3, 4, 4});
  CHECK(m.at("conv0.bias") == Shape{32});
  CHECK(m.at("conv3.weights") == Shape{32, 32, 4, 4});
  CHECK(m.at("summary.weights") == Shape{32, 32, 3, 3});
  CHECK(m.at("summary.bias") == Shape{32});
  CHECK(m.at("conv4.weights") == Shape{32, 32, 3, 3});
  CHECK(m.at("fc1.weights") == Shape{4096, 960});
  CHECK(m.at("fc2.weights") == Shape{4096, 4096});
  CHECK(m.at("fc3.weights") == Shape{512, 4096});
  CHECK(m.at("head.weights") == Shape{2, 512});
  CHECK(m.at("head.bias") == Shape{2});
  CHECK(m.size() == params.size());  // no duplicate names
}

TEST_CASE("parameter store rejects duplicates and unknown names") {
  ParameterStore store;
  store.add("a", Tensor({2}));
  CHECK_THROWS_AS(store.add("a", Tensor({2})), UsageError);
  CHECK_THROWS_AS(store.value("b"), UsageError);
  CHECK(store.has("a"));
  CHECK_FALSE(store.has("b"));

  store.grad("a")[0] = 5.0f;
  store.zero_grads();
  CHECK(store.grad("a")[0] == 0.0f);
}

TEST_CASE("init draws weights inside the glorot bound and zeroes biases") {
  const NetworkConfig cfg = NetworkConfig::tiny();
  ParameterStore params = make_params(cfg, 21);
  // conv0: fan_in 3*3*3, fan_out 8*3*3
  const double limit = std::sqrt(6.0 / (27.0 + 72.0));
  const Tensor& w = params.value("conv0.weights");
  double wmax = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) wmax = std::max(wmax, std::abs(double(w[i])));
  CHECK(wmax <= limit);
  CHECK(wmax > limit * 0.8);  // the draw actually uses the range

  const Tensor& b = params.value("conv0.bias");
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(b[i] == 0.0f);

  // same seed, same initialization
  ParameterStore again = make_params(cfg, 21);
  CHECK(again.value("fc1.weights").values() == params.value("fc1.weights").values());
}

TEST_CASE("difference layer matches the per-entry oracle on random inputs") {
  Rng rng(31);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t h = 2 + rng.index(4), w = 2 + rng.index(4), c = 1 + rng.index(3);
    const std::size_t n = rng.bernoulli(0.5) ? 3 : 5;
    TensorD f = random_tensor({h, w, c}, rng);
    TensorD g = random_tensor({h, w, c}, rng);
    TensorD got = neighborhood_difference(f, g, n);
    TensorD want = difference_naive(f, g, n);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == want[i]);
  }
}

TEST_CASE("difference of a constant map with itself") {
  // interior blocks cancel exactly; border blocks keep the constant at
  // positions whose neighbor fell off the grid
  const double c = 2.75;
  TensorD f = TensorD::full({4, 5, 1}, c);
  TensorD out = neighborhood_difference(f, f, 3);
  REQUIRE(out.shape() == Shape{12, 15, 1});
  for (std::size_t x = 0; x < 4; ++x)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t u = 0; u < 3; ++u)
        for (std::size_t v = 0; v < 3; ++v) {
          const std::ptrdiff_t nx = std::ptrdiff_t(x + u) - 1;
          const std::ptrdiff_t ny = std::ptrdiff_t(y + v) - 1;
          const bool inside = nx >= 0 && nx < 4 && ny >= 0 && ny < 5;
          const double want = inside ? 0.0 : c;
          CHECK(out(x * 3 + u, y * 3 + v, 0) == want);
        }
}

TEST_CASE("difference block center is exactly zero for f against f") {
  // the zero-displacement entry compares a location with itself
  Rng rng(32);
  TensorD f = random_tensor({5, 4, 2}, rng);
  TensorD out = neighborhood_difference(f, f, 3);
  for (std::size_t x = 0; x < 5; ++x)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t ch = 0; ch < 2; ++ch)
        CHECK(out(x * 3 + 1, y * 3 + 1, ch) == 0.0);
}

TEST_CASE("difference expands 32x7x32 to 96x21x32") {
  Rng rng(33);
  TensorD f = random_tensor({32, 7, 32}, rng);
  TensorD h = random_tensor({32, 7, 32}, rng);
  CHECK(neighborhood_difference(f, h, 3).shape() == Shape{96, 21, 32});
}

TEST_CASE("difference rejects bad arguments") {
  TensorD f({3, 3, 1});
  CHECK_THROWS_AS(neighborhood_difference(f, TensorD({3, 4, 1}), 3), ShapeError);
  CHECK_THROWS_AS(neighborhood_difference(f, f, 2), ArgumentError);
  CHECK_THROWS_AS(neighborhood_difference(f, f, 0), ArgumentError);
  CHECK_THROWS_AS(neighborhood_difference(f.reshaped({9}), f.reshaped({9}), 3), ShapeError);
}

TEST_CASE("difference backward: all-ones gradient counts block membership") {
  const std::size_t h = 5, w = 4, n = 3;
  TensorD g = TensorD::full({h * n, w * n, 1}, 1.0);
  auto [gf, gh] = neighborhood_difference_backward(g, Shape{h, w, 1}, n);

  // every block contributes each of its n^2 entries to its own f cell
  for (std::size_t i = 0; i < gf.size(); ++i) CHECK(gf[i] == double(n * n));

  // an interior h cell is referenced by n^2 blocks, a corner by fewer
  CHECK(gh(2, 2, 0) == -9.0);
  CHECK(gh(0, 0, 0) == -4.0);
  CHECK(gh(0, 2, 0) == -6.0);

  // total mass: f side counts all entries, h side only in-bounds ones
  double f_sum = 0.0, h_sum = 0.0;
  for (std::size_t i = 0; i < gf.size(); ++i) f_sum += gf[i];
  for (std::size_t i = 0; i < gh.size(); ++i) h_sum += gh[i];
  CHECK(f_sum == double(h * w * n * n));
  CHECK(-h_sum < f_sum);  // the border loses some neighbors
}

TEST_CASE("difference backward agrees with central finite differences") {
  Rng rng(34);
  TensorD f = random_tensor({4, 3, 2}, rng);
  TensorD h = random_tensor({4, 3, 2}, rng);
  TensorD w = random_tensor({12, 9, 2}, rng);  // fixed weights make a scalar loss

  auto loss = [&](const TensorD& ff, const TensorD& hh) {
    TensorD d = neighborhood_difference(ff, hh, 3);
    double acc = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) acc += w[i] * d[i];
    return acc;
  };

  auto [gf, gh] = neighborhood_difference_backward(w, f.shape(), 3);
  const double step = 1e-6;
  for (std::size_t i = 0; i < f.size(); i += 3) {
    TensorD fp = f, fm = f;
    fp[i] += step;
    fm[i] -= step;
    const double num = (loss(fp, h) - loss(fm, h)) / (2 * step);
    CHECK(gf[i] == doctest::Approx(num).epsilon(1e-5));

    TensorD hp = h, hm = h;
    hp[i] += step;
    hm[i] -= step;
    const double numh = (loss(f, hp) - loss(f, hm)) / (2 * step);
    CHECK(gh[i] == doctest::Approx(numh).epsilon(1e-5));
  }
}

TEST_CASE("patch summary with an averaging filter reduces blocks to means") {
  // one output channel whose 3x3 filter is 1/9 everywhere: each block
  // collapses to its mean, then the scaled tanh squashes it
  TensorD d({6, 3, 1});
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = double(i % 7) - 3.0;
  ConvParams<double> p;
  p.weights = TensorD::full({1, 1, 3, 3}, 1.0 / 9.0);
  p.bias = TensorD({1});
  p.stride = 3;

  TensorD y = patch_summary(d, p, 1.5);
  REQUIRE(y.shape() == Shape{2, 1, 1});
  for (std::size_t bx = 0; bx < 2; ++bx) {
    double mean = 0.0;
    for (std::size_t u = 0; u < 3; ++u)
      for (std::size_t v = 0; v < 3; ++v) mean += d(bx * 3 + u, v, 0) / 9.0;
    CHECK(y(bx, 0, 0) == doctest::Approx(std::tanh(1.5 * mean)).epsilon(1e-12));
  }
}

TEST_CASE("patch summary validates filter geometry") {
  TensorD d({6, 6, 1});
  ConvParams<double> p;
  p.weights = TensorD({1, 1, 3, 3});
  p.bias = TensorD({1});
  p.stride = 2;  // stride must equal the filter edge
  CHECK_THROWS_AS(patch_summary(d, p, 1.5), ArgumentError);

  p.stride = 3;
  TensorD bad({7, 6, 1});  // height not divisible by 3
  CHECK_THROWS_AS(patch_summary(bad, p, 1.5), ShapeError);
}

TEST_CASE("pair forward is deterministic and eval mode ignores the rng") {
  const NetworkConfig cfg = NetworkConfig::tiny();
  ParameterStore params = make_params(cfg, 55);
  Rng img_rng(77);
  Tensor a = random_tensor({40, 20, 3}, img_rng, 0.0, 1.0).cast<float>();
  Tensor b = random_tensor({40, 20, 3}, img_rng, 0.0, 1.0).cast<float>();

  Rng r1(1), r2(999);
  auto f1 = forward_pair(params, cfg, a, b, LayerMode::eval, r1);
  auto f2 = forward_pair(params, cfg, a, b, LayerMode::eval, r2);
  CHECK(f1.logits.values() == f2.logits.values());

  Rng r3(42), r4(42);
  auto t1 = forward_pair(params, cfg, a, b, LayerMode::train, r3);
  auto t2 = forward_pair(params, cfg, a, b, LayerMode::train, r4);
  CHECK(t1.logits.values() == t2.logits.values());
}

TEST_CASE("pair order matters: the difference layer is one-directional") {
  const NetworkConfig cfg = NetworkConfig::tiny();
  ParameterStore params = make_params(cfg, 56);
  Rng img_rng(78);
  Tensor a = random_tensor({40, 20, 3}, img_rng, 0.0, 1.0).cast<float>();
  Tensor b = random_tensor({40, 20, 3}, img_rng, 0.0, 1.0).cast<float>();

  Rng r1(1), r2(1);
  auto ab = forward_pair(params, cfg, a, b, LayerMode::eval, r1);
  auto ba = forward_pair(params, cfg, b, a, LayerMode::eval, r2);
  CHECK(ab.logits.values() != ba.logits.values());
}

TEST_CASE("trunk weights are tied: one entry drives both branches") {
  const NetworkConfig cfg = NetworkConfig::tiny();
  ParameterStore params = make_params(cfg, 57);
  Rng img_rng(79);
  Tensor a = random_tensor({40, 20, 3}, img_rng, 0.0, 1.0).cast<float>();
  Tensor b = random_tensor({40, 20, 3}, img_rng, 0.0, 1.0).cast<float>();

  Rng r(1);
  auto before = forward_pair(params, cfg, a, b, LayerMode::eval, r);
  params.value("conv0.weights")[0] += 0.5f;
  auto after = forward_pair(params, cfg, a, b, LayerMode::eval, r);

  // both branch outputs move, not just one
  CHECK(before.cache.branch_a.out.values() != after.cache.branch_a.out.values());
  CHECK(before.cache.branch_b.out.values() != after.cache.branch_b.out.values());
}

TEST_CASE("backward with zero upstream gradient leaves all grads zero") {
  const NetworkConfig cfg = NetworkConfig::tiny();
  ParameterStore params = make_params(cfg, 58);
  Rng img_rng(80);
  Tensor a = random_tensor({40, 20, 3}, img_rng, 0.0, 1.0).cast<float>();
  Tensor b = random_tensor({40, 20, 3}, img_rng, 0.0, 1.0).cast<float>();

  Rng r(2);
  auto fwd = forward_pair(params, cfg, a, b, LayerMode::train, r);
  backward_pair(params, cfg, fwd.cache, Tensor({2}));
  for (const auto& e : params.entries())
    for (std::size_t i = 0; i < e.grad.size(); ++i) CHECK(e.grad[i] == 0.0f);
}

TEST_CASE("backward accumulates: running it twice doubles every grad") {
  const NetworkConfig cfg = NetworkConfig::tiny();
  ParameterStore params = make_params(cfg, 59);
  Rng img_rng(81);
  Tensor a = random_tensor({40, 20, 3}, img_rng, 0.0, 1.0).cast<float>();
  Tensor b = random_tensor({40, 20, 3}, img_rng, 0.0, 1.0).cast<float>();

  Rng r(3);
  auto fwd = forward_pair(params, cfg, a, b, LayerMode::train, r);
  Tensor g({2}, std::vector<float>{0.3f, -0.3f});
  backward_pair(params, cfg, fwd.cache, g);
  std::vector<std::vector<float>> once;
  for (const auto& e : params.entries()) once.push_back(e.grad.values());
  backward_pair(params, cfg, fwd.cache, g);
  std::size_t k = 0;
  for (const auto& e : params.entries()) {
    const auto& twice = e.grad.values();
    for (std::size_t i = 0; i < twice.size(); ++i)
      CHECK(twice[i] == doctest::Approx(2.0f * once[k][i]).epsilon(1e-6));
    ++k;
  }
}

TEST_CASE("backward demands a train cache and a [2] gradient") {
  const NetworkConfig cfg = NetworkConfig::tiny();
  ParameterStore params = make_params(cfg, 60);
  Rng img_rng(82);
  Tensor a = random_tensor({40, 20, 3}, img_rng, 0.0, 1.0).cast<float>();

  Rng r(4);
  auto ev = forward_pair(params, cfg, a, a, LayerMode::eval, r);
  CHECK_THROWS_AS(backward_pair(params, cfg, ev.cache, Tensor({2})), UsageError);

  auto tr = forward_pair(params, cfg, a, a, LayerMode::train, r);
  CHECK_THROWS_AS(backward_pair(params, cfg, tr.cache, Tensor({3})), ShapeError);
}

TEST_CASE("forward rejects images that do not match the config") {
  const NetworkConfig cfg = NetworkConfig::tiny();
  ParameterStore params = make_params(cfg, 61);
  Rng r(5);
  Tensor wrong({20, 40, 3});
  CHECK_THROWS_AS(forward_pair(params, cfg, wrong, wrong, LayerMode::eval, r), ShapeError);
}

TEST_CASE("checkpoint round-trip is bitwise") {
  const NetworkConfig cfg = NetworkConfig::tiny();
  ParameterStore params = make_params(cfg, 62);
  const std::string bytes = encode_checkpoint(cfg, params);
  Checkpoint loaded = decode_checkpoint(bytes);

  CHECK(loaded.config == cfg);
  REQUIRE(loaded.params.size() == params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& want = params.entries()[i];
    const auto& got = loaded.params.entries()[i];
    CHECK(got.name == want.name);
    REQUIRE(got.value.shape() == want.value.shape());
    // exact float identity, not approximate
    CHECK(got.value.values() == want.value.values());
  }
}

TEST_CASE("checkpoint size is the parameter payload plus bounded framing") {
  const NetworkConfig cfg = NetworkConfig::tiny();
  ParameterStore params = make_params(cfg, 63);
  const std::string bytes = encode_checkpoint(cfg, params);
  const std::size_t payload = params.element_count() * 4;
  CHECK(bytes.size() > payload);
  CHECK(bytes.size() < payload + 4096);  // config text, names, extents
}

TEST_CASE("checkpoint corruption is rejected with a byte offset") {
  const NetworkConfig cfg = NetworkConfig::tiny();
  ParameterStore params = make_params(cfg, 64);
  std::string bytes = encode_checkpoint(cfg, params);

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), FormatError);
  try {
    decode_checkpoint(bad_magic);
  } catch (const FormatError& e) {
    CHECK(e.byte_offset == 0);
  }

  std::string bad_version = bytes;
  bad_version[4] = 99;
  try {
    decode_checkpoint(bad_version);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.byte_offset == 4);
  }

  std::string truncated = bytes.substr(0, bytes.size() / 2);
  try {
    decode_checkpoint(truncated);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.byte_offset <= truncated.size());
    CHECK(e.byte_offset > 0);
  }

  std::string trailing = bytes + "junk";
  CHECK_THROWS_AS(decode_checkpoint(trailing), FormatError);

  CHECK_THROWS_AS(decode_checkpoint(std::string_view("PN")), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(std::string_view("")), FormatError);
}

TEST_CASE("checkpoint rejects a parameter set that contradicts its config") {
  const NetworkConfig cfg = NetworkConfig::tiny();
  ParameterStore params = make_params(cfg, 65);
  // drop one parameter: the embedded config promises one more
  ParameterStore partial;
  for (std::size_t i = 0; i + 1 < params.entries().size(); ++i) {
    const auto& e = params.entries()[i];
    partial.add(e.name, e.value);
  }
  const std::string bytes = encode_checkpoint(cfg, partial);
  try {
    decode_checkpoint(bytes);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("count") != std::string::npos);
  }
}
