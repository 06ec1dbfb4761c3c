#include "imsm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "imsm/random.hpp"

namespace imsm {

void TrainConfig::validate() const {
  if (lr <= 0.0) throw UsageError("train config: lr must be positive");
  if (gate_lr < 0.0)
    throw UsageError("train config: gate_lr must be non-negative");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw UsageError("train config: betas must lie in [0,1)");
  if (epochs < 1) throw UsageError("train config: epochs must be >= 1");
  if (batch_size < 1) throw UsageError("train config: batch_size must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"gate_lr", gate_lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"eps", eps},
          {"weight_decay", weight_decay},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"seed", seed},
          {"mode", mode == TrainMode::imsm ? "imsm" : "vanilla"},
          {"fusion", fusion == FusionMode::query_gate   ? "query"
                     : fusion == FusionMode::fixed_half ? "half"
                                                        : "noquery"}};
}

void adamw_step(const std::vector<Tensor>& params, OptState& state,
                const TrainConfig& config) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, state.step);
  const double bc2 = 1.0 - std::pow(config.beta2, state.step);
  for (Tensor p : params) {
    if (!p.has_grad()) continue;
    OptState::Slot& slot = state.slots[p.id()];
    if (slot.m.empty()) {
      slot.m.assign(p.size(), 0.0);
      slot.v.assign(p.size(), 0.0);
    }
    const std::vector<double>& g = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      slot.m[i] = config.beta1 * slot.m[i] + (1.0 - config.beta1) * g[i];
      slot.v[i] = config.beta2 * slot.v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      p.data()[i] -= config.lr * (mhat / (std::sqrt(vhat) + config.eps) +
                                  config.weight_decay * p.data()[i]);
    }
  }
}

namespace {

// Loss for one unpadded row. Teacher forcing: the hidden state at position
// p predicts token p+1; positions whose target falls in the completion span
// (including EOS) carry loss.
Tensor loss_row(const std::vector<int>& tokens, int t_in,
                const BaseWeights& weights, const AdapterSet* adapters,
                const GateParams* gate_params, TrainMode mode,
                FusionMode fusion, Tape* tape) {
  const int len = static_cast<int>(tokens.size());
  const int n_pred = len - t_in;  // completion length
  if (n_pred < 1) throw UsageError("loss: row has no completion tokens");

  std::vector<int> targets(tokens.begin() + t_in, tokens.end());
  std::vector<std::uint8_t> mask(n_pred, 1);

  if (mode == TrainMode::vanilla) {
    Tensor h = forward_hidden(tokens, weights, adapters, nullptr, tape);
    Tensor h_pred = slice_rows(h, t_in - 1, n_pred, tape);
    Tensor logits = lm_head(h_pred, weights.w_out, tape);
    return cross_entropy_masked(logits, targets, mask, tape);
  }

  // imsm: both branches over the same tokens, gate + fuse per position.
  Tensor hm = forward_hidden(tokens, weights, nullptr, nullptr, tape);
  Tensor hmp = forward_hidden(tokens, weights, adapters, nullptr, tape);
  QueryMemory qm = query_means(slice_rows(hm, 0, t_in, tape),
                               slice_rows(hmp, 0, t_in, tape), tape);
  Tensor hm_pred = slice_rows(hm, t_in - 1, n_pred, tape);
  Tensor hmp_pred = slice_rows(hmp, t_in - 1, n_pred, tape);

  Tensor h_n;
  if (fusion == FusionMode::fixed_half) {
    Tensor half = Tensor::full(hm_pred.shape(), 0.5);
    h_n = fuse(half, hm_pred, hmp_pred, tape);
  } else {
    if (!gate_params) throw UsageError("loss: imsm mode needs gate params");
    Tensor g = gate(qm, hm_pred, hmp_pred, *gate_params, fusion, tape);
    h_n = fuse(g, hm_pred, hmp_pred, tape);
  }
  Tensor logits = fused_logits(h_n, weights.w_out, tape);
  return cross_entropy_masked(logits, targets, mask, tape);
}

}  // namespace

Tensor loss_batch(const Batch& batch, const BaseWeights& weights,
                  const AdapterSet* adapters, const GateParams* gate,
                  TrainMode mode, FusionMode fusion, Tape* tape) {
  const int rows = static_cast<int>(batch.tokens.size());
  if (rows == 0) throw UsageError("loss_batch: empty batch");
  Tensor total;
  for (int r = 0; r < rows; ++r) {
    std::vector<int> row(batch.tokens[r].begin(),
                         batch.tokens[r].begin() + batch.row_len[r]);
    Tensor l = loss_row(row, batch.t_in[r], weights, adapters, gate, mode,
                        fusion, tape);
    total = r == 0 ? l : add(total, l, tape);
  }
  return scale(total, 1.0 / rows, tape);
}

namespace {

// Two parameter groups with independent optimizer state: the gate factors
// may use their own learning rate (gate_group may be empty).
std::vector<LossRecord> run_training(const TrainConfig& config,
                                     const std::vector<Example>& examples,
                                     const BaseWeights& weights,
                                     const AdapterSet* adapters,
                                     const GateParams* gate,
                                     const std::vector<Tensor>& trainables,
                                     const std::vector<Tensor>& gate_group) {
  config.validate();
  if (examples.empty()) throw UsageError("train: empty dataset");

  for (Tensor t : trainables) t.set_requires_grad(true);
  for (Tensor t : gate_group) t.set_requires_grad(true);

  TrainConfig gate_config = config;
  if (config.gate_lr > 0.0) gate_config.lr = config.gate_lr;

  OptState opt;
  OptState gate_opt;
  Rng rng(config.seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<LossRecord> curve;
  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    std::vector<Example> shuffled;
    shuffled.reserve(examples.size());
    for (std::size_t i : order) shuffled.push_back(examples[i]);

    for (const Batch& batch : batchify(shuffled, config.batch_size)) {
      for (Tensor t : trainables) t.zero_grad();
      for (Tensor t : gate_group) t.zero_grad();
      Tape tape;
      Tensor loss = loss_batch(batch, weights, adapters, gate, config.mode,
                               config.fusion, &tape);
      if (!std::isfinite(loss.item()))
        throw NumericError("train: non-finite loss at step " +
                           std::to_string(step));
      tape.backward(loss);
      adamw_step(trainables, opt, config);
      if (!gate_group.empty()) adamw_step(gate_group, gate_opt, gate_config);
      curve.push_back({step, epoch, loss.item()});
      ++step;
    }
  }
  return curve;
}

}  // namespace

std::vector<LossRecord> train(const TrainConfig& config,
                              const std::vector<Example>& examples,
                              const BaseWeights& weights, AdapterSet* adapters,
                              GateParams* gate) {
  if (!adapters) throw UsageError("train: adapter set required");
  for (const Tensor& t : weights.all_tensors())
    if (t.requires_grad())
      throw UsageError("train: base weights must be frozen");
  if (config.mode == TrainMode::imsm &&
      config.fusion != FusionMode::fixed_half && !gate)
    throw UsageError("train: imsm mode needs gate params");

  std::vector<Tensor> trainables = adapters->trainable_tensors();
  std::vector<Tensor> gate_group;
  if (config.mode == TrainMode::imsm && gate &&
      config.fusion != FusionMode::fixed_half)
    gate_group = gate->trainable_tensors();

  const std::uint64_t before = weights.checksum();
  auto curve = run_training(config, examples, weights, adapters, gate,
                            trainables, gate_group);
  if (weights.checksum() != before)
    throw NumericError("train: frozen base weights changed");
  return curve;
}

std::vector<LossRecord> pretrain(const TrainConfig& config,
                                 const std::vector<Example>& examples,
                                 BaseWeights& weights) {
  std::vector<Tensor> trainables = weights.all_tensors();
  auto curve = run_training(config, examples, weights, nullptr, nullptr,
                            trainables, {});
  weights.set_requires_grad(false);
  weights.zero_grads();
  return curve;
}

void write_loss_csv(const std::string& path,
                    const std::vector<LossRecord>& curve) {
  std::ofstream out(path);
  if (!out) throw UsageError("loss csv: cannot write " + path);
  out << "step,epoch,loss\n";
  for (const LossRecord& r : curve)
    out << r.step << ',' << r.epoch << ',' << r.loss << '\n';
}

}  // namespace imsm
