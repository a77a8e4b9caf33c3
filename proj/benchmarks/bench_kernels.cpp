#include <benchmark/benchmark.h>

#include "lavit/rng.hpp"
#include "lavit/tape.hpp"

using namespace lavit;

static void BM_matmul(benchmark::State& state) {
  const int64_t m = state.range(0), k = state.range(1), n = state.range(2);
  Rng rng(1);
  Tensor a = rng.randn({m, k});
  Tensor b = rng.randn({k, n});
  Tape tp(false);
  for (auto _ : state) {
    Tensor c = tp.matmul(a, b);
    benchmark::DoNotOptimize(c.data->data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * m * k * n);
}
BENCHMARK(BM_matmul)->Args({24, 128, 128})->Args({24, 128, 512})->Args({21, 64, 64});

static void BM_softmax_bias(benchmark::State& state) {
  const int64_t rows = state.range(0), cols = state.range(1);
  Rng rng(2);
  Tensor logits = rng.randn({rows, cols});
  Tensor bias = Tensor::zeros({rows, cols});
  Tape tp(false);
  for (auto _ : state) {
    Tensor y = tp.softmax_bias(logits, bias);
    benchmark::DoNotOptimize(y.data->data());
  }
}
BENCHMARK(BM_softmax_bias)->Args({24, 24})->Args({2, 28});

static void BM_layer_norm(benchmark::State& state) {
  const int64_t rows = state.range(0), d = state.range(1);
  Rng rng(3);
  Tensor x = rng.randn({rows, d});
  Tensor g = Tensor::full({1, d}, 1.0);
  Tensor b = Tensor::zeros({1, d});
  Tape tp(false);
  for (auto _ : state) {
    Tensor y = tp.layer_norm(x, g, b);
    benchmark::DoNotOptimize(y.data->data());
  }
}
BENCHMARK(BM_layer_norm)->Args({24, 128})->Args({28, 64});

static void BM_backward_chain(benchmark::State& state) {
  const int64_t d = state.range(0);
  Rng rng(4);
  Tensor x0 = rng.randn({8, d});
  Tensor w0 = rng.randn({d, d});
  for (auto _ : state) {
    Tape tp;
    Tensor x = tp.watch(x0);
    Tensor w = tp.watch(w0);
    Tensor h = tp.gelu(tp.matmul(x, w));
    Tensor loss = tp.mean(tp.mul(h, h));
    tp.backward(loss);
    benchmark::DoNotOptimize(tp.grad(w).data());
  }
}
BENCHMARK(BM_backward_chain)->Arg(64)->Arg(128);

BENCHMARK_MAIN();
