#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "imsm/decoder.hpp"
#include "imsm/tokendata.hpp"
#include "imsm/trainer.hpp"

namespace imsm {

enum class TaskKind { copy, reverse, mod_add, sort_digits };

TaskKind task_kind_from_name(const std::string& name);
std::string task_kind_name(TaskKind kind);

// Deterministic synthetic task generator. Prompts are unique across the
// whole dataset, so the 80/10/10 splits are disjoint by prompt string.
struct TaskSpec {
  TaskKind kind = TaskKind::copy;
  int size = 256;
  int min_len = 3;
  int max_len = 6;
  std::uint64_t seed = 0;
};

using TextPair = std::pair<std::string, std::string>;

struct SynthSplits {
  std::vector<TextPair> train, dev, test;
};

SynthSplits synth(const TaskSpec& spec);

void write_jsonl(const std::string& path, const std::vector<TextPair>& rows);

// Fixed alphabet covering every synthetic task; keeps vocabularies
// identical across pretraining and fine-tuning runs.
Vocab default_task_vocab();

// One row of the experiment reports, CSV columns in this order.
struct MetricsRow {
  std::string run_id;
  std::string mode;   // vanilla-lora | imsm-lora | imsm-half | ...
  std::string task;
  std::string split;  // b_test | a_retention | a_base
  double exact_match = 0.0;
  double loss = 0.0;
  double tokens_per_sec = 0.0;
  std::int64_t trainable_params = 0;
  int gate_rank = 0;
  std::uint64_t seed = 0;
};

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

// Fraction of prompts whose greedy completion string-equals the reference.
double eval_exact_match(const std::vector<TextPair>& pairs, const Vocab& vocab,
                        const BaseWeights& weights, const AdapterSet* adapters,
                        const GateParams* gate_params, FusionMode fusion,
                        bool imsm_mode, const DecodeConfig& decode,
                        int limit = 0);

// Defaults are sized so the full forgetting protocol (pretrain + 9 runs)
// fits a single laptop core: a reduced backbone, a high-rank LoRA spanning
// every projection (close to full-rank adaptation of this small model), and
// enough mod_add data to generalize rather than memorize.
struct HarnessConfig {
  ModelConfig model = [] {
    ModelConfig m;
    m.d_model = 48;
    m.n_layers = 3;
    m.n_heads = 3;
    m.d_ff = 192;
    m.max_seq_len = 48;
    return m;
  }();
  int lora_rank = 32;
  double lora_alpha = 32.0;
  std::vector<std::string> lora_sites = {"wq", "wk",   "wv",
                                         "wo", "w_up", "w_down"};
  int gate_rank = 8;
  double lora_lr = 1e-3;
  double gate_lr = 1e-2;
  double ia3_lr = 3e-3;
  double pretrain_lr = 1e-3;
  int pretrain_epochs = 14;
  int finetune_epochs = 40;
  int batch_size = 16;
  int task_size = 3000;
  int eval_limit = 48;
  int max_new_tokens = 12;
  std::vector<std::uint64_t> seeds = {1, 2, 3};

  nlohmann::json to_json() const;
  static HarnessConfig from_json(const nlohmann::json& j);
};

// Task-A mixture (copy + reverse + sort_digits) and task B (mod_add).
struct TaskData {
  SynthSplits task_a;  // interleaved mixture
  SynthSplits task_b;
};

TaskData make_task_data(const HarnessConfig& config);

// Full-weight pretraining on the task-A mixture: the "world knowledge".
BaseWeights pretrain_base(const HarnessConfig& config, const Vocab& vocab,
                          const TaskData& data, std::uint64_t seed);

// One fine-tuning run on task B. peft is "lora" or "ia3"; imsm_mode picks
// the fused objective; fusion selects the gate variant.
struct FinetuneResult {
  AdapterSet adapters;
  GateParams gate;
  bool has_gate = false;
  std::vector<LossRecord> curve;
  std::int64_t trainable_params = 0;
};

FinetuneResult finetune_variant(const HarnessConfig& config,
                                const Vocab& vocab, const BaseWeights& base,
                                const TaskData& data, const std::string& peft,
                                bool imsm_mode, FusionMode fusion,
                                std::uint64_t seed);

// Fine-tune on B, evaluate B test accuracy, A retention, and the untouched
// base's A accuracy, for {vanilla, imsm} x {lora, ia3}, per seed.
std::vector<MetricsRow> run_forgetting_protocol(const HarnessConfig& config,
                                                const Vocab& vocab,
                                                const BaseWeights& base,
                                                const TaskData& data);

// query_gate vs no_query_gate vs fixed_half on identical data and seeds.
std::vector<MetricsRow> run_ablation(const HarnessConfig& config,
                                     const Vocab& vocab,
                                     const BaseWeights& base,
                                     const TaskData& data);

// IMSM-LoRA across gate ranks; params column follows the closed form.
std::vector<MetricsRow> run_rank_sweep(const HarnessConfig& config,
                                       const Vocab& vocab,
                                       const BaseWeights& base,
                                       const TaskData& data,
                                       const std::vector<int>& ranks);

double median(std::vector<double> values);

}  // namespace imsm
