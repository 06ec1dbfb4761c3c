#pragma once

#include <cstdint>
#include <vector>

#include "imsm/tensor.hpp"

namespace imsm {

// All ops treat tensors as 2-D (rows x cols). When `tape` is non-null and an
// input participates in the gradient, the op records a backward node;
// otherwise it runs in pure inference mode. Every op verifies its output is
// finite and throws NumericError otherwise.

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
// a · b^T, so attention scores avoid materializing transposes.
Tensor matmul_nt(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor elem_mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor scale(const Tensor& x, double c, Tape* tape = nullptr);

// Juxtaposes parts along the last dimension; all parts share the leading
// dimension. Backward splits the gradient back into the parts.
Tensor concat_lastdim(const std::vector<Tensor>& parts, Tape* tape = nullptr);

Tensor slice_rows(const Tensor& x, int start, int len, Tape* tape = nullptr);
Tensor slice_cols(const Tensor& x, int start, int len, Tape* tape = nullptr);

// Tiles a 1xd row n times.
Tensor repeat_rows(const Tensor& x, int n, Tape* tape = nullptr);

// Arithmetic mean over the first axis: [T x d] -> [1 x d]. T >= 1.
Tensor mean_rows(const Tensor& x, Tape* tape = nullptr);

Tensor sigmoid(const Tensor& x, Tape* tape = nullptr);
Tensor silu(const Tensor& x, Tape* tape = nullptr);

// Row-wise softmax with max-subtraction.
Tensor softmax_lastdim(const Tensor& x, Tape* tape = nullptr);

// Row-wise softmax over attention scores [T x S] where query row i may
// attend key columns 0..past+i only; masked columns get probability zero.
Tensor causal_softmax(const Tensor& scores, int past, Tape* tape = nullptr);

// Mean of -log p(target) over mask-true positions. logits is [T x V],
// targets/mask have length T. Throws UsageError when every position is
// masked out.
Tensor cross_entropy_masked(const Tensor& logits,
                            const std::vector<int>& targets,
                            const std::vector<std::uint8_t>& mask,
                            Tape* tape = nullptr);

// x * weight / sqrt(mean(x^2) + eps), row-wise. weight is [1 x d].
Tensor rmsnorm(const Tensor& x, const Tensor& weight, double eps = 1e-6,
               Tape* tape = nullptr);

// Row gather: out[i,:] = table[ids[i],:]. Backward scatter-adds.
Tensor embed(const Tensor& table, const std::vector<int>& ids,
             Tape* tape = nullptr);

// Rotary position embedding over a per-head slice [T x dh]. Row i is
// rotated for absolute position pos_offset + i; pairs are (j, j + dh/2).
Tensor rope(const Tensor& x, int pos_offset, double base,
            Tape* tape = nullptr);

// Sum of all elements as a 1x1 scalar.
Tensor sum_all(const Tensor& x, Tape* tape = nullptr);

}  // namespace imsm
