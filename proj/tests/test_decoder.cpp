#include <cmath>

#include "doctest.h"
#include "imsm/decoder.hpp"
#include "imsm/random.hpp"
#include "imsm/tokendata.hpp"

using namespace imsm;

namespace {

ModelConfig small_config(int vocab, int max_len = 48) {
  ModelConfig mc;
  mc.d_model = 8;
  mc.n_layers = 2;
  mc.n_heads = 2;
  mc.d_ff = 16;
  mc.vocab_size = vocab;
  mc.max_seq_len = max_len;
  return mc;
}

struct Setup {
  ModelConfig mc;
  BaseWeights w;
  AdapterSet lora;
  GateParams gp;

  explicit Setup(int vocab, std::uint64_t seed, int max_len = 48)
      : mc(small_config(vocab, max_len)),
        w(BaseWeights::init(mc, seed)),
        lora(make_lora_adapters(mc, 2, 2.0, seed + 1)),
        gp(GateParams::init(mc.d_model, 3, FusionMode::query_gate, seed + 2)) {
    Rng rng(seed + 3);
    for (Tensor t : lora.trainable_tensors()) fill_gaussian(t, 0.1, rng);
    fill_gaussian(gp.w_b, 0.1, rng);
  }
};

std::vector<int> random_prompt(int len, int vocab, Rng& rng) {
  std::vector<int> t = {Vocab::kBos};
  for (int i = 0; i < len; ++i) t.push_back(rng.uniform_int(3, vocab - 1));
  return t;
}

}  // namespace

TEST_CASE("greedy argmax ties break toward the lower token id") {
  // prefill state is irrelevant to tie-breaking; poke the distribution.
  Setup s(9, 1);
  DecodeState st = prefill({1, 3, 4}, s.w, &s.lora, &s.gp,
                           FusionMode::query_gate);
  st.next_probs = Tensor::from({1, 9}, {0.1, 0.1, 0.1, 0.2, 0.2, 0.1, 0.2,
                                        0.0, 0.0});
  DecodeConfig dc;
  dc.max_new_tokens = 1;
  const int chosen = step(st, s.w, &s.lora, &s.gp, FusionMode::query_gate, dc);
  CHECK(chosen == 3);

  DecodeState st2 = prefill({1, 3, 4}, s.w, &s.lora, &s.gp,
                            FusionMode::query_gate);
  st2.next_probs = Tensor::full({1, 9}, 1.0 / 9);
  CHECK(step(st2, s.w, &s.lora, &s.gp, FusionMode::query_gate, dc) == 0);
}

TEST_CASE("generation stops on EOS or at max_new_tokens and never exceeds it") {
  Setup s(9, 5);
  Rng rng(6);
  DecodeConfig dc;
  dc.max_new_tokens = 7;
  for (int trial = 0; trial < 8; ++trial) {
    std::vector<int> prompt = random_prompt(rng.uniform_int(1, 5), 9, rng);
    std::vector<int> out =
        generate(prompt, dc, s.w, &s.lora, &s.gp, FusionMode::query_gate);
    CHECK(out.size() <= 7);
    for (std::size_t i = 0; i + 1 < out.size(); ++i)
      CHECK(out[i] != Vocab::kEos);  // EOS can only be last
    if (out.size() < 7) CHECK(out.back() == Vocab::kEos);
  }
}

TEST_CASE("decoding is deterministic") {
  Setup s(9, 7);
  DecodeConfig dc;
  dc.max_new_tokens = 10;
  std::vector<int> prompt = {1, 3, 4, 5};
  std::vector<int> a =
      generate(prompt, dc, s.w, &s.lora, &s.gp, FusionMode::query_gate);
  std::vector<int> b =
      generate(prompt, dc, s.w, &s.lora, &s.gp, FusionMode::query_gate);
  CHECK(a == b);
}

TEST_CASE("cached decoding matches a cache-free reimplementation") {
  Setup s(9, 9);
  Rng rng(10);
  DecodeConfig dc;
  dc.max_new_tokens = 6;

  for (FusionMode mode : {FusionMode::query_gate, FusionMode::no_query_gate,
                          FusionMode::fixed_half}) {
    GateParams gp = GateParams::init(s.mc.d_model, 3,
        mode == FusionMode::fixed_half ? FusionMode::query_gate : mode, 11);
    if (mode != FusionMode::fixed_half) fill_gaussian(gp.w_b, 0.1, rng);
    const GateParams* gpp = mode == FusionMode::fixed_half ? nullptr : &gp;

    for (int trial = 0; trial < 4; ++trial) {
      std::vector<int> prompt = random_prompt(rng.uniform_int(2, 5), 9, rng);
      std::vector<int> fast =
          generate(prompt, dc, s.w, &s.lora, gpp, mode);

      // oracle: recompute both branches from scratch at every step
      std::vector<int> seq = prompt;
      Tensor hm0 = forward_hidden(seq, s.w);
      Tensor hmp0 = forward_hidden(seq, s.w, &s.lora);
      QueryMemory qm = query_means(hm0, hmp0);
      std::vector<int> slow;
      while (static_cast<int>(slow.size()) < dc.max_new_tokens) {
        Tensor hm = forward_hidden(seq, s.w);
        Tensor hmp = forward_hidden(seq, s.w, &s.lora);
        Tensor lm = slice_rows(hm, hm.rows() - 1, 1);
        Tensor lmp = slice_rows(hmp, hmp.rows() - 1, 1);
        Tensor g = mode == FusionMode::fixed_half
                       ? Tensor::full({1, s.mc.d_model}, 0.5)
                       : gate(qm, lm, lmp, gp, mode);
        Tensor logits = fused_logits(fuse(g, lm, lmp), s.w.w_out);
        int best = 0;
        for (int j = 1; j < logits.cols(); ++j)
          if (logits.at(0, j) > logits.at(0, best)) best = j;
        slow.push_back(best);
        if (best == dc.eos_id) break;
        seq.push_back(best);
      }
      CHECK(fast == slow);
    }
  }
}

TEST_CASE("query means are computed exactly once per session") {
  Setup s(9, 13);
  DecodeConfig dc;
  dc.max_new_tokens = 8;
  DecodeState st = prefill({1, 3, 4, 5}, s.w, &s.lora, &s.gp,
                           FusionMode::query_gate);
  CHECK(st.query_mean_computations == 1);
  while (!st.done) step(st, s.w, &s.lora, &s.gp, FusionMode::query_gate, dc);
  CHECK(st.query_mean_computations == 1);
  CHECK(st.cache_m.length() == st.cache_mp.length());
}

TEST_CASE("forced gate extremes reproduce the single-branch decoders") {
  Setup s(9, 15);
  Rng rng(16);
  DecodeConfig dc;
  dc.max_new_tokens = 6;
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<int> prompt = random_prompt(rng.uniform_int(2, 5), 9, rng);
    std::vector<int> g1 = generate(prompt, dc, s.w, &s.lora, &s.gp,
                                   FusionMode::query_gate, nullptr, 1.0);
    std::vector<int> frozen = generate_vanilla(prompt, dc, s.w, nullptr);
    CHECK(g1 == frozen);

    std::vector<int> g0 = generate(prompt, dc, s.w, &s.lora, &s.gp,
                                   FusionMode::query_gate, nullptr, 0.0);
    std::vector<int> tuned = generate_vanilla(prompt, dc, s.w, &s.lora);
    CHECK(g0 == tuned);
  }
}

TEST_CASE("trace records one entry per token with gate stats in (0,1)") {
  Setup s(9, 17);
  DecodeConfig dc;
  dc.max_new_tokens = 6;
  std::vector<StepTrace> trace;
  std::vector<int> out = generate({1, 3, 4}, dc, s.w, &s.lora, &s.gp,
                                  FusionMode::query_gate, &trace);
  REQUIRE(trace.size() == out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(trace[i].token == out[i]);
    CHECK(trace[i].gate_min > 0.0);
    CHECK(trace[i].gate_max < 1.0);
    CHECK(trace[i].gate_min <= trace[i].gate_mean);
    CHECK(trace[i].gate_mean <= trace[i].gate_max);
  }
}

TEST_CASE("decoding stops when the context window fills up") {
  Setup s(9, 19, /*max_len=*/8);
  DecodeConfig dc;
  dc.max_new_tokens = 50;
  std::vector<int> out = generate({1, 3, 4, 5}, dc, s.w, &s.lora, &s.gp,
                                  FusionMode::query_gate);
  // 4 prompt positions leave room for 4 cached continuations plus the final
  // selection made from the full-context distribution
  CHECK(out.size() <= 5);
}

TEST_CASE("throughput measurement counts generated tokens") {
  Setup s(9, 21);
  DecodeConfig dc;
  dc.max_new_tokens = 4;
  std::vector<std::vector<int>> prompts = {{1, 3, 4}, {1, 5, 6, 7}};
  ThroughputReport rep = measure_throughput(prompts, dc, s.w, &s.lora, &s.gp,
                                            FusionMode::query_gate, true);
  CHECK(rep.generated_tokens > 0);
  CHECK(rep.seconds > 0.0);
  CHECK(rep.tokens_per_sec > 0.0);
  CHECK(!rep.flagged_zero);

  ThroughputReport vanilla = measure_throughput(
      prompts, dc, s.w, &s.lora, nullptr, FusionMode::query_gate, false);
  CHECK(vanilla.generated_tokens > 0);

  ThroughputReport empty = measure_throughput({}, dc, s.w, &s.lora, &s.gp,
                                              FusionMode::query_gate, true);
  CHECK(empty.flagged_zero);
}
