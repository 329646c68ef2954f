#include <benchmark/benchmark.h>

#include "pnet/network.hpp"
#include "pnet/optimizer.hpp"
#include "pnet/rng.hpp"

using namespace pnet;

namespace {

Tensor random_image(const NetworkConfig& cfg, Rng& rng) {
  Tensor t({cfg.input_height, cfg.input_width, cfg.input_channels});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform());
  return t;
}

void BM_forward_pair(benchmark::State& state, const NetworkConfig& cfg) {
  Rng rng(1);
  const ParameterStore params = init_parameters<float>(cfg, rng);
  const Tensor a = random_image(cfg, rng);
  const Tensor b = random_image(cfg, rng);
  Rng unused(0);
  for (auto _ : state) {
    PairForward<float> fwd = forward_pair(params, cfg, a, b, LayerMode::eval, unused);
    benchmark::DoNotOptimize(fwd.logits.data());
  }
}

void BM_forward_pair_tiny(benchmark::State& state) {
  BM_forward_pair(state, NetworkConfig::tiny());
}
BENCHMARK(BM_forward_pair_tiny);

void BM_forward_pair_canonical(benchmark::State& state) {
  BM_forward_pair(state, NetworkConfig::canonical());
}
BENCHMARK(BM_forward_pair_canonical);

// one full training step: forward, loss, backward, decay, rmsprop
void BM_train_step_tiny(benchmark::State& state) {
  const NetworkConfig cfg = NetworkConfig::tiny();
  Rng rng(1);
  ParameterStore params = init_parameters<float>(cfg, rng);
  RmsPropState opt;
  const Tensor a = random_image(cfg, rng);
  const Tensor b = random_image(cfg, rng);
  for (auto _ : state) {
    PairForward<float> fwd = forward_pair(params, cfg, a, b, LayerMode::train, rng);
    const LossResult<float> loss = softmax_cross_entropy(fwd.logits, 1);
    backward_pair(params, cfg, fwd.cache, loss.grad_logits);
    apply_weight_decay(params, 5e-4);
    rmsprop_step(params, opt, 0.003);
    benchmark::DoNotOptimize(params.value("head.bias").data());
  }
}
BENCHMARK(BM_train_step_tiny);

void BM_rmsprop_step_canonical(benchmark::State& state) {
  const NetworkConfig cfg = NetworkConfig::canonical();
  Rng rng(1);
  ParameterStore params = init_parameters<float>(cfg, rng);
  RmsPropState opt;
  for (auto _ : state) {
    rmsprop_step(params, opt, 0.003);
    benchmark::DoNotOptimize(params.value("head.bias").data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(params.element_count()));
}
BENCHMARK(BM_rmsprop_step_canonical);

}  // namespace

BENCHMARK_MAIN();
