#include <benchmark/benchmark.h>

#include "pnet/layers.hpp"
#include "pnet/rng.hpp"
#include "pnet/tensor.hpp"

using namespace pnet;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

// direct nested-loop convolution, the baseline the im2col path replaces
Tensor conv_naive(const Tensor& x, const ConvParams<float>& p) {
  const std::size_t oh = conv_out_extent(x.shape()[0], p.weights.shape()[2], p.stride);
  const std::size_t ow = conv_out_extent(x.shape()[1], p.weights.shape()[3], p.stride);
  const std::size_t oc = p.weights.shape()[0], ic = p.weights.shape()[1];
  const std::size_t fh = p.weights.shape()[2], fw = p.weights.shape()[3];
  Tensor out({oh, ow, oc});
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x0 = 0; x0 < ow; ++x0)
      for (std::size_t o = 0; o < oc; ++o) {
        float acc = p.bias[o];
        for (std::size_t c = 0; c < ic; ++c)
          for (std::size_t u = 0; u < fh; ++u)
            for (std::size_t v = 0; v < fw; ++v)
              acc += p.weights(o, c, u, v) * x(y * p.stride + u, x0 * p.stride + v, c);
        out(y, x0, o) = acc;
      }
  return out;
}

ConvParams<float> first_conv(std::size_t out_channels, std::size_t in_channels,
                             std::size_t filter, Rng& rng) {
  ConvParams<float> p;
  p.weights = random_tensor({out_channels, in_channels, filter, filter}, rng);
  p.bias = random_tensor({out_channels}, rng);
  return p;
}

void BM_conv_im2col(benchmark::State& state) {
  Rng rng(1);
  const Tensor x = random_tensor({160, 60, 3}, rng);
  const ConvParams<float> p = first_conv(32, 3, 4, rng);
  for (auto _ : state) {
    Tensor out = conv2d_forward(x, p);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_conv_im2col);

void BM_conv_naive(benchmark::State& state) {
  Rng rng(1);
  const Tensor x = random_tensor({160, 60, 3}, rng);
  const ConvParams<float> p = first_conv(32, 3, 4, rng);
  for (auto _ : state) {
    Tensor out = conv_naive(x, p);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_conv_naive);

void BM_conv_backward(benchmark::State& state) {
  Rng rng(1);
  const Tensor x = random_tensor({160, 60, 3}, rng);
  const ConvParams<float> p = first_conv(32, 3, 4, rng);
  const Tensor grad = random_tensor(conv2d_forward(x, p).shape(), rng);
  for (auto _ : state) {
    ConvGrads<float> g = conv2d_backward(x, p, grad);
    benchmark::DoNotOptimize(g.input.data());
  }
}
BENCHMARK(BM_conv_backward);

void BM_maxpool(benchmark::State& state) {
  Rng rng(1);
  const Tensor x = random_tensor({157, 57, 32}, rng);
  const PoolSpec spec{PoolRounding::ceil};
  for (auto _ : state) {
    MaxPoolResult<float> out = maxpool_forward(x, spec);
    benchmark::DoNotOptimize(out.output.data());
  }
}
BENCHMARK(BM_maxpool);

void BM_matmul(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = random_tensor({n, n}, rng);
  const Tensor b = random_tensor({n, n}, rng);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(256)->Arg(512);

}  // namespace

BENCHMARK_MAIN();
