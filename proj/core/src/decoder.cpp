#include "imsm/decoder.hpp"

#include <chrono>

namespace imsm {

namespace {

int argmax_lowest(const Tensor& probs) {
  int best = 0;
  for (int j = 1; j < probs.cols(); ++j)
    if (probs.at(0, j) > probs.at(0, best)) best = j;
  return best;
}

// Gate + fuse + head at one position. hm_t/hmp_t are 1xd.
void fused_distribution(DecodeState& state, const Tensor& hm_t,
                        const Tensor& hmp_t, const BaseWeights& weights,
                        const GateParams* gate_params, FusionMode fusion) {
  Tensor g;
  if (state.forced_gate.has_value()) {
    g = Tensor::full(hm_t.shape(), *state.forced_gate);
  } else if (fusion == FusionMode::fixed_half) {
    g = Tensor::full(hm_t.shape(), 0.5);
  } else {
    if (!gate_params) throw UsageError("decode: gate params required");
    g = gate(state.qm, hm_t, hmp_t, *gate_params, fusion);
  }
  Tensor h_n = fuse(g, hm_t, hmp_t);
  state.next_probs = next_token_probs(fused_logits(h_n, weights.w_out));

  double mn = g.at(0, 0), mx = g.at(0, 0), sum = 0.0;
  for (int j = 0; j < g.cols(); ++j) {
    mn = std::min(mn, g.at(0, j));
    mx = std::max(mx, g.at(0, j));
    sum += g.at(0, j);
  }
  state.pending_trace = {0, sum / g.cols(), mn, mx};
}

}  // namespace

namespace {

DecodeState prefill_impl(const std::vector<int>& prompt,
                         const BaseWeights& weights,
                         const AdapterSet* adapters,
                         const GateParams* gate_params, FusionMode fusion,
                         std::optional<double> forced_gate) {
  if (prompt.empty()) throw UsageError("prefill: empty prompt");
  DecodeState state(weights.config);
  state.forced_gate = forced_gate;
  Tensor hm = forward_hidden(prompt, weights, nullptr, &state.cache_m);
  Tensor hmp = forward_hidden(prompt, weights, adapters, &state.cache_mp);
  state.qm = query_means(hm, hmp);
  state.query_mean_computations = 1;

  const int last = hm.rows() - 1;
  fused_distribution(state, slice_rows(hm, last, 1), slice_rows(hmp, last, 1),
                     weights, gate_params, fusion);
  return state;
}

}  // namespace

DecodeState prefill(const std::vector<int>& prompt, const BaseWeights& weights,
                    const AdapterSet* adapters, const GateParams* gate_params,
                    FusionMode fusion) {
  return prefill_impl(prompt, weights, adapters, gate_params, fusion,
                      std::nullopt);
}

int step(DecodeState& state, const BaseWeights& weights,
         const AdapterSet* adapters, const GateParams* gate_params,
         FusionMode fusion, const DecodeConfig& config) {
  if (state.done) throw UsageError("step: decode session already finished");
  const int token = argmax_lowest(state.next_probs);
  state.generated.push_back(token);
  if (token == config.eos_id ||
      static_cast<int>(state.generated.size()) >= config.max_new_tokens) {
    state.done = true;
    return token;
  }
  if (state.cache_m.length() >= weights.config.max_seq_len) {
    state.done = true;  // truncation: no room to feed the token back
    return token;
  }
  Tensor hm = forward_hidden({token}, weights, nullptr, &state.cache_m);
  Tensor hmp = forward_hidden({token}, weights, adapters, &state.cache_mp);
  fused_distribution(state, hm, hmp, weights, gate_params, fusion);
  return token;
}

std::vector<int> generate(const std::vector<int>& prompt,
                          const DecodeConfig& config,
                          const BaseWeights& weights,
                          const AdapterSet* adapters,
                          const GateParams* gate_params, FusionMode fusion,
                          std::vector<StepTrace>* trace,
                          std::optional<double> forced_gate) {
  config.validate();
  DecodeState state =
      prefill_impl(prompt, weights, adapters, gate_params, fusion, forced_gate);
  while (!state.done) {
    StepTrace tr = state.pending_trace;
    tr.token = step(state, weights, adapters, gate_params, fusion, config);
    if (trace) trace->push_back(tr);
  }
  return state.generated;
}

std::vector<int> generate_vanilla(const std::vector<int>& prompt,
                                  const DecodeConfig& config,
                                  const BaseWeights& weights,
                                  const AdapterSet* adapters) {
  config.validate();
  if (prompt.empty()) throw UsageError("generate_vanilla: empty prompt");
  AttnCache cache(weights.config);
  Tensor h = forward_hidden(prompt, weights, adapters, &cache);
  Tensor probs = next_token_probs(
      lm_head(slice_rows(h, h.rows() - 1, 1), weights.w_out));

  std::vector<int> out;
  while (true) {
    const int token = argmax_lowest(probs);
    out.push_back(token);
    if (token == config.eos_id ||
        static_cast<int>(out.size()) >= config.max_new_tokens)
      break;
    if (cache.length() >= weights.config.max_seq_len) break;
    Tensor ht = forward_hidden({token}, weights, adapters, &cache);
    probs = next_token_probs(lm_head(ht, weights.w_out));
  }
  return out;
}

ThroughputReport measure_throughput(
    const std::vector<std::vector<int>>& prompts, const DecodeConfig& config,
    const BaseWeights& weights, const AdapterSet* adapters,
    const GateParams* gate_params, FusionMode fusion, bool imsm_mode) {
  ThroughputReport report;
  if (prompts.empty()) {
    report.flagged_zero = true;
    return report;
  }
  const auto start = std::chrono::steady_clock::now();
  for (const std::vector<int>& prompt : prompts) {
    std::vector<int> out =
        imsm_mode
            ? generate(prompt, config, weights, adapters, gate_params, fusion)
            : generate_vanilla(prompt, config, weights, adapters);
    report.generated_tokens += static_cast<int>(out.size());
  }
  const auto end = std::chrono::steady_clock::now();
  report.seconds = std::chrono::duration<double>(end - start).count();
  if (report.generated_tokens == 0) {
    report.flagged_zero = true;
    report.tokens_per_sec = 0.0;
  } else {
    report.tokens_per_sec = report.generated_tokens / report.seconds;
  }
  return report;
}

}  // namespace imsm
