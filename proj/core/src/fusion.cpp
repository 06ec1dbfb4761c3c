#include "imsm/fusion.hpp"

#include "imsm/random.hpp"

namespace imsm {

GateParams GateParams::init(int d, int rank, FusionMode mode,
                            std::uint64_t seed) {
  if (mode == FusionMode::fixed_half)
    throw UsageError("gate: fixed_half has no gate parameters");
  if (rank < 1 || rank >= d) throw UsageError("gate: rank must be in [1, d)");
  const int in_dim = mode == FusionMode::query_gate ? 4 * d : 2 * d;
  GateParams g;
  g.rank = rank;
  g.w_a = Tensor::zeros({in_dim, rank});
  g.w_b = Tensor::zeros({rank, d});  // stays zero so the first gate is 0.5
  Rng rng(seed);
  fill_gaussian(g.w_a, 0.02, rng);
  return g;
}

QueryMemory query_means(const Tensor& hm_prompt, const Tensor& hmp_prompt,
                        Tape* tape) {
  if (hm_prompt.shape() != hmp_prompt.shape())
    throw DimensionError("query_means: branch shapes disagree");
  if (hm_prompt.rows() < 1)
    throw UsageError("query_means: empty prompt span");
  QueryMemory qm;
  qm.hbar_m = mean_rows(hm_prompt, tape);
  qm.hbar_mp = mean_rows(hmp_prompt, tape);
  qm.t_in = hm_prompt.rows();
  return qm;
}

Tensor gate(const QueryMemory& qm, const Tensor& hm_t, const Tensor& hmp_t,
            const GateParams& params, FusionMode mode, Tape* tape) {
  if (mode == FusionMode::fixed_half)
    throw UsageError("gate: fixed_half mode computes no gate");
  if (hm_t.shape() != hmp_t.shape())
    throw DimensionError("gate: branch shapes disagree");
  const int rows = hm_t.rows();
  const int d = hm_t.cols();
  const int in_dim = mode == FusionMode::query_gate ? 4 * d : 2 * d;
  if (params.w_a.rows() != in_dim || params.w_a.cols() != params.rank ||
      params.w_b.rows() != params.rank || params.w_b.cols() != d)
    throw DimensionError("gate: factor shapes disagree with mode");

  std::vector<Tensor> parts;
  if (mode == FusionMode::query_gate) {
    parts = {repeat_rows(qm.hbar_m, rows, tape), hm_t, hmp_t,
             repeat_rows(qm.hbar_mp, rows, tape)};
  } else {
    parts = {hm_t, hmp_t};
  }
  Tensor cat = concat_lastdim(parts, tape);
  Tensor low = matmul(cat, params.w_a, tape);
  return sigmoid(matmul(low, params.w_b, tape), tape);
}

Tensor fuse(const Tensor& gate_t, const Tensor& hm_t, const Tensor& hmp_t,
            Tape* tape) {
  if (gate_t.shape() != hm_t.shape() || hm_t.shape() != hmp_t.shape())
    throw DimensionError("fuse: shape mismatch");
  Tensor ones = Tensor::full(gate_t.shape(), 1.0);
  Tensor inv = sub(ones, gate_t, tape);
  return add(elem_mul(gate_t, hm_t, tape), elem_mul(inv, hmp_t, tape), tape);
}

Tensor fused_logits(const Tensor& h_n, const Tensor& w_out, Tape* tape) {
  return matmul(h_n, w_out, tape);
}

Tensor next_token_probs(const Tensor& logits, Tape* tape) {
  return softmax_lastdim(logits, tape);
}

}  // namespace imsm
