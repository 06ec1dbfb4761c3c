#pragma once

#include <cstdint>
#include <vector>

#include "imsm/ops.hpp"
#include "imsm/tensor.hpp"

namespace imsm {

// Which interweaving variant runs: the full query-aware gate, the ablation
// that drops the query means from the gate input, or a constant 1:1 blend
// with no learned gate at all.
enum class FusionMode { query_gate, no_query_gate, fixed_half };

// Low-rank gate factors. w_a is [4d x r] for query_gate, [2d x r] for
// no_query_gate; w_b is [r x d]. No bias term exists. w_b starts at zero so
// the initial gate is exactly 0.5 everywhere.
struct GateParams {
  Tensor w_a;
  Tensor w_b;
  int rank = 0;

  static GateParams init(int d, int rank, FusionMode mode,
                         std::uint64_t seed);

  std::vector<Tensor> trainable_tensors() const { return {w_a, w_b}; }
  std::vector<std::pair<std::string, Tensor>> named_tensors() const {
    return {{"gate.w_a", w_a}, {"gate.w_b", w_b}};
  }
  void set_requires_grad(bool v) {
    w_a.set_requires_grad(v);
    w_b.set_requires_grad(v);
  }
};

// Per-branch averages of the prompt's last-layer hidden states, computed
// once per sequence and then immutable.
struct QueryMemory {
  Tensor hbar_m;   // 1 x d, frozen branch
  Tensor hbar_mp;  // 1 x d, tuned branch
  int t_in = 0;
};

QueryMemory query_means(const Tensor& hm_prompt, const Tensor& hmp_prompt,
                        Tape* tape = nullptr);

// sigmoid((hbar_M + hM_t + hMp_t + hbar_M')·W_A·W_B) with + denoting
// concatenation along the feature dimension, in exactly that order.
// hm_t/hmp_t may carry several rows (teacher forcing computes every step's
// gate at once); the query means are broadcast over rows.
// mode must not be fixed_half (that variant has no gate computation).
Tensor gate(const QueryMemory& qm, const Tensor& hm_t, const Tensor& hmp_t,
            const GateParams& params, FusionMode mode, Tape* tape = nullptr);

// Interwoven memory: gate∘hM + (1-gate)∘hM'.
Tensor fuse(const Tensor& gate_t, const Tensor& hm_t, const Tensor& hmp_t,
            Tape* tape = nullptr);

// Vocabulary logits from the interwoven memory.
Tensor fused_logits(const Tensor& h_n, const Tensor& w_out,
                    Tape* tape = nullptr);

// softmax over the vocabulary.
Tensor next_token_probs(const Tensor& logits, Tape* tape = nullptr);

}  // namespace imsm
