#include <benchmark/benchmark.h>

#include "imsm/decoder.hpp"
#include "imsm/random.hpp"
#include "imsm/tokendata.hpp"
#include "imsm/harness.hpp"

using namespace imsm;

namespace {

ModelConfig bench_config() {
  ModelConfig mc;
  mc.d_model = 64;
  mc.n_layers = 4;
  mc.n_heads = 4;
  mc.d_ff = 256;
  mc.vocab_size = 43;
  mc.max_seq_len = 128;
  return mc;
}

void BM_Matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(1);
  Tensor a = Tensor::zeros({n, n}), b = Tensor::zeros({n, n});
  fill_gaussian(a, 1.0, rng);
  fill_gaussian(b, 1.0, rng);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2L * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_ForwardHidden(benchmark::State& state) {
  const int len = static_cast<int>(state.range(0));
  ModelConfig mc = bench_config();
  BaseWeights w = BaseWeights::init(mc, 1);
  Rng rng(2);
  std::vector<int> tokens = {Vocab::kBos};
  for (int i = 1; i < len; ++i) tokens.push_back(rng.uniform_int(3, 42));
  for (auto _ : state) {
    Tensor h = forward_hidden(tokens, w);
    benchmark::DoNotOptimize(h.data());
  }
  state.SetItemsProcessed(state.iterations() * len);
}
BENCHMARK(BM_ForwardHidden)->Arg(8)->Arg(32)->Arg(96);

void BM_DecodeStep(benchmark::State& state) {
  const bool imsm_mode = state.range(0) != 0;
  ModelConfig mc = bench_config();
  BaseWeights w = BaseWeights::init(mc, 3);
  AdapterSet lora = make_lora_adapters(mc, 4, 4.0, 4);
  GateParams gp = GateParams::init(mc.d_model, 8, FusionMode::query_gate, 5);
  std::vector<int> prompt = {Vocab::kBos, 5, 6, 7, 8, 9};
  DecodeConfig dc;
  dc.max_new_tokens = 16;
  int tokens = 0;
  for (auto _ : state) {
    std::vector<int> out =
        imsm_mode ? generate(prompt, dc, w, &lora, &gp,
                             FusionMode::query_gate)
                  : generate_vanilla(prompt, dc, w, &lora);
    tokens += static_cast<int>(out.size());
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(tokens);
  state.SetLabel(imsm_mode ? "imsm" : "vanilla");
}
BENCHMARK(BM_DecodeStep)->Arg(0)->Arg(1);

void BM_TrainStep(benchmark::State& state) {
  const bool imsm_mode = state.range(0) != 0;
  ModelConfig mc = bench_config();
  BaseWeights w = BaseWeights::init(mc, 6);
  AdapterSet lora = make_lora_adapters(mc, 4, 4.0, 7);
  GateParams gp = GateParams::init(mc.d_model, 8, FusionMode::query_gate, 8);
  lora.set_requires_grad(true);
  gp.set_requires_grad(true);
  Vocab v = default_task_vocab();
  Rng rng(9);
  std::vector<Example> ex;
  for (int i = 0; i < 8; ++i) {
    std::string s;
    for (int j = 0; j < 5; ++j)
      s.push_back(static_cast<char>('a' + rng.uniform_int(0, 25)));
    ex.push_back(make_example("copy:" + s + "→", s, v));
  }
  Batch batch = batchify(ex, 8)[0];
  for (auto _ : state) {
    Tape tape;
    Tensor loss =
        loss_batch(batch, w, &lora, imsm_mode ? &gp : nullptr,
                   imsm_mode ? TrainMode::imsm : TrainMode::vanilla,
                   FusionMode::query_gate, &tape);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
  state.SetLabel(imsm_mode ? "imsm" : "vanilla");
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1);

}  // namespace

BENCHMARK_MAIN();
