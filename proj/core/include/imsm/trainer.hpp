#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "imsm/fusion.hpp"
#include "imsm/model.hpp"
#include "imsm/tokendata.hpp"

namespace imsm {

enum class TrainMode { vanilla, imsm };

struct TrainConfig {
  double lr = 3e-4;         // LoRA default; (IA)^3 runs use 3e-3
  double gate_lr = 0.0;     // learning rate for the gate factors; 0 = use lr
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int epochs = 3;
  int batch_size = 16;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::vanilla;
  FusionMode fusion = FusionMode::query_gate;

  void validate() const;
  nlohmann::json to_json() const;
};

// Adam moments keyed by parameter storage identity. Buffers exist only for
// the tensors actually passed to adamw_step.
struct OptState {
  struct Slot {
    std::vector<double> m, v;
  };
  std::unordered_map<const void*, Slot> slots;
  long step = 0;
};

// Decoupled-weight-decay Adam update over the given parameters; reads and
// clears nothing, callers zero grads between steps.
void adamw_step(const std::vector<Tensor>& params, OptState& state,
                const TrainConfig& config);

// Teacher-forced masked cross-entropy averaged over the batch rows.
// vanilla: loss on the (adapter-attached) branch's own logits.
// imsm: loss on the fused branch's logits, gates computed at every
// completion-predicting position.
Tensor loss_batch(const Batch& batch, const BaseWeights& weights,
                  const AdapterSet* adapters, const GateParams* gate,
                  TrainMode mode, FusionMode fusion, Tape* tape);

struct LossRecord {
  int step;
  int epoch;
  double loss;
};

// PEFT training: optimizes exactly the adapter tensors plus (in imsm mode)
// the gate factors. BaseWeights must be frozen and are asserted unchanged.
std::vector<LossRecord> train(const TrainConfig& config,
                              const std::vector<Example>& examples,
                              const BaseWeights& weights, AdapterSet* adapters,
                              GateParams* gate);

// Full-weight training of the backbone itself (the pretraining phase that
// plays the role of world knowledge in the forgetting protocol).
std::vector<LossRecord> pretrain(const TrainConfig& config,
                                 const std::vector<Example>& examples,
                                 BaseWeights& weights);

void write_loss_csv(const std::string& path,
                    const std::vector<LossRecord>& curve);

}  // namespace imsm
