#include <benchmark/benchmark.h>

#include "cotd/policy.hpp"

namespace {

using namespace cotd;

PolicyParams demo_policy(int hidden) {
  Rng rng(1);
  return PolicyParams::random({30, 16, hidden, 20}, 0.1, rng);
}

TokenSeq tokens(int n) {
  TokenSeq t(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = 2 + i % 25;
  return t;
}

void BM_Logprob(benchmark::State& state) {
  const PolicyParams p = demo_policy(static_cast<int>(state.range(0)));
  const TokenSeq prompt = tokens(12);
  const TokenSeq target = tokens(static_cast<int>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(logprob(p, prompt, target));
  state.SetItemsProcessed(state.iterations() * state.range(1));
}
BENCHMARK(BM_Logprob)->Args({32, 10})->Args({32, 40})->Args({128, 10});

void BM_GradLogprob(benchmark::State& state) {
  const PolicyParams p = demo_policy(static_cast<int>(state.range(0)));
  const TokenSeq prompt = tokens(12);
  const TokenSeq target = tokens(static_cast<int>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(grad_logprob(p, prompt, target));
  state.SetItemsProcessed(state.iterations() * state.range(1));
}
BENCHMARK(BM_GradLogprob)->Args({32, 10})->Args({32, 40})->Args({128, 10});

void BM_Sample(benchmark::State& state) {
  const PolicyParams p = demo_policy(32);
  const TokenSeq prompt = tokens(12);
  Rng rng(2);
  for (auto _ : state) benchmark::DoNotOptimize(sample(p, prompt, 1.0, 16, rng, 0));
}
BENCHMARK(BM_Sample);

}  // namespace
