#include <benchmark/benchmark.h>

#include "lavit/config.hpp"
#include "lavit/losses.hpp"
#include "lavit/rng.hpp"
#include "lavit/train.hpp"

using namespace lavit;

namespace {

ModelInputs random_inputs(const ModelConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  ModelInputs in;
  in.pixels = rng.randn({cfg.n_image(), cfg.patch_dim});
  for (int64_t i = 0; i < cfg.n_question; ++i)
    in.question.push_back(static_cast<int>(3 + rng.below(cfg.vocab_size - 3)));
  in.answer = {static_cast<int>(3 + rng.below(cfg.vocab_size - 3))};
  return in;
}

void run_step(Model& model, const std::vector<ModelInputs>& batch) {
  Tape tape;
  ModelParams bound = model.bind(tape);
  Tensor acc;
  for (size_t i = 0; i < batch.size(); ++i) {
    ForwardOutput out = model.forward(tape, bound, batch[i], {});
    std::vector<int> targets = batch[i].answer;
    targets.push_back(model.config().eoa_id);
    Tensor li = ntp_loss(tape, out.logits, targets);
    acc = (i == 0) ? li : tape.add(acc, li);
  }
  Tensor loss = tape.scale(acc, 1.0 / static_cast<double>(batch.size()));
  tape.backward(loss);
  benchmark::DoNotOptimize(tape.grad(bound.tok_embed).data());
}

void bench_model(benchmark::State& state, const ModelConfig& cfg) {
  Model model(cfg, 5);
  std::vector<ModelInputs> batch;
  for (uint64_t i = 0; i < 16; ++i) batch.push_back(random_inputs(cfg, i));
  for (auto _ : state) run_step(model, batch);
  state.SetLabel("fwd+bwd, batch 16");
}

}  // namespace

static void BM_teacher_step(benchmark::State& state) {
  RunConfig cfg;
  bench_model(state, cfg.teacher_model());
}
BENCHMARK(BM_teacher_step)->Unit(benchmark::kMillisecond);

static void BM_student_step(benchmark::State& state) {
  RunConfig cfg;
  bench_model(state, cfg.student_model());
}
BENCHMARK(BM_student_step)->Unit(benchmark::kMillisecond);

static void BM_generate(benchmark::State& state) {
  RunConfig cfg;
  Model model(cfg.teacher_model(), 5);
  ModelInputs in = random_inputs(model.config(), 3);
  in.answer.clear();
  for (auto _ : state) {
    GenerateResult res = model.generate(in);
    benchmark::DoNotOptimize(res.tokens.data());
  }
}
BENCHMARK(BM_generate)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
