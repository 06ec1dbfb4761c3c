#pragma once

#include <optional>
#include <vector>

#include "imsm/fusion.hpp"
#include "imsm/model.hpp"

namespace imsm {

struct DecodeConfig {
  int max_new_tokens = 64;
  int eos_id = 2;

  void validate() const {
    if (max_new_tokens < 1)
      throw UsageError("decode config: max_new_tokens must be >= 1");
  }
};

// Per-step trace record for the optional generation trace.
struct StepTrace {
  int token;
  double gate_mean, gate_min, gate_max;
};

// One greedy decoding session. Both branch caches always hold the same
// number of positions; the query means are computed exactly once, at
// prefill time.
struct DecodeState {
  AttnCache cache_m;
  AttnCache cache_mp;
  QueryMemory qm;
  std::vector<int> generated;
  Tensor next_probs;  // distribution for the upcoming token
  StepTrace pending_trace{0, 0.0, 0.0, 0.0};
  int query_mean_computations = 0;
  bool done = false;
  // Test hook: when set, every gate component is clamped to this value.
  std::optional<double> forced_gate;

  DecodeState(const ModelConfig& config)
      : cache_m(config), cache_mp(config) {}
};

// Runs both branches over the prompt, fills the caches, caches the query
// means, and produces the fused distribution for the first output token.
DecodeState prefill(const std::vector<int>& prompt, const BaseWeights& weights,
                    const AdapterSet* adapters, const GateParams* gate_params,
                    FusionMode fusion);

// Greedy-selects from the pending distribution (ties break toward the
// lowest id), appends the token, and unless finished feeds it to both
// branches to produce the next distribution. Returns the chosen token.
int step(DecodeState& state, const BaseWeights& weights,
         const AdapterSet* adapters, const GateParams* gate_params,
         FusionMode fusion, const DecodeConfig& config);

// Algorithm-1 greedy generation; returns the completion ids (EOS included
// when hit). Deterministic. `trace` optionally collects per-step records.
std::vector<int> generate(const std::vector<int>& prompt,
                          const DecodeConfig& config,
                          const BaseWeights& weights,
                          const AdapterSet* adapters,
                          const GateParams* gate_params, FusionMode fusion,
                          std::vector<StepTrace>* trace = nullptr,
                          std::optional<double> forced_gate = std::nullopt);

// Single-branch greedy decode over the adapter-attached model (frozen base
// when adapters is null); same termination rules.
std::vector<int> generate_vanilla(const std::vector<int>& prompt,
                                  const DecodeConfig& config,
                                  const BaseWeights& weights,
                                  const AdapterSet* adapters);

struct ThroughputReport {
  double tokens_per_sec = 0.0;
  int generated_tokens = 0;
  double seconds = 0.0;
  bool flagged_zero = false;  // no tokens generated
};

// Wall-clock tokens/sec over generated tokens only.
ThroughputReport measure_throughput(
    const std::vector<std::vector<int>>& prompts, const DecodeConfig& config,
    const BaseWeights& weights, const AdapterSet* adapters,
    const GateParams* gate_params, FusionMode fusion, bool imsm_mode);

}  // namespace imsm
