#include <cmath>

#include "doctest.h"
#include "imsm/random.hpp"
#include "imsm/tokendata.hpp"
#include "imsm/trainer.hpp"

using namespace imsm;

namespace {

ModelConfig small_config(int vocab) {
  ModelConfig mc;
  mc.d_model = 8;
  mc.n_layers = 2;
  mc.n_heads = 2;
  mc.d_ff = 16;
  mc.vocab_size = vocab;
  mc.max_seq_len = 32;
  return mc;
}

std::vector<Example> copy_examples(const Vocab& v, int n, Rng& rng) {
  std::vector<Example> out;
  const std::string alphabet = "abcd";
  for (int i = 0; i < n; ++i) {
    std::string s;
    const int len = rng.uniform_int(2, 4);
    for (int j = 0; j < len; ++j)
      s.push_back(alphabet[rng.uniform_int(0, 3)]);
    out.push_back(make_example(s + ":", s, v));
  }
  return out;
}

}  // namespace

TEST_CASE("adamw single step matches the hand-derived scalar update") {
  // One parameter w=1 with gradient g=0.2. After one bias-corrected step,
  // m_hat = g, v_hat = g^2, so the Adam delta is -lr * g/(|g|+eps) = -lr
  // (up to eps), and decoupled decay subtracts lr*wd*w.
  Tensor w = Tensor::from({1, 1}, {1.0}, /*requires_grad=*/true);
  w.grad()[0] = 0.2;
  TrainConfig tc;
  tc.lr = 0.1;
  tc.weight_decay = 0.01;
  OptState st;
  adamw_step({w}, st, tc);
  const double ghat = 0.2 / (std::sqrt(0.2 * 0.2) + tc.eps);
  const double expect = 1.0 - tc.lr * ghat - tc.lr * tc.weight_decay * 1.0;
  CHECK(w.data()[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(st.step == 1);

  // second step with the same gradient: moments now mix two observations
  w.grad()[0] = 0.2;
  adamw_step({w}, st, tc);
  const double m2 = (0.9 * (0.1 * 0.2) + 0.1 * 0.2) / (1 - 0.9 * 0.9);
  const double v2 =
      (0.999 * (0.001 * 0.04) + 0.001 * 0.04) / (1 - 0.999 * 0.999);
  const double prev = expect;
  const double expect2 =
      prev - tc.lr * m2 / (std::sqrt(v2) + tc.eps) -
      tc.lr * tc.weight_decay * prev;
  CHECK(w.data()[0] == doctest::Approx(expect2).epsilon(1e-10));
}

TEST_CASE("adamw with zero weight decay leaves a zero-gradient weight alone") {
  Tensor w = Tensor::from({1, 2}, {3.0, -2.0}, true);
  TrainConfig tc;
  tc.weight_decay = 0.0;
  OptState st;
  adamw_step({w}, st, tc);
  CHECK(w.data()[0] == 3.0);
  CHECK(w.data()[1] == -2.0);
}

TEST_CASE("optimizer state is kept per tensor identity") {
  Tensor a = Tensor::from({1, 1}, {1.0}, true);
  Tensor b = Tensor::from({1, 1}, {1.0}, true);
  a.grad()[0] = 0.5;
  b.grad()[0] = -0.5;
  TrainConfig tc;
  OptState st;
  adamw_step({a, b}, st, tc);
  CHECK(st.slots.size() == 2);
  CHECK(a.data()[0] != b.data()[0]);  // opposite gradients move apart
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  CHECK_NOTHROW(tc.validate());
  tc.epochs = 0;
  CHECK_THROWS_AS(tc.validate(), UsageError);
  tc = TrainConfig{};
  tc.lr = 0.0;
  CHECK_THROWS_AS(tc.validate(), UsageError);
  tc = TrainConfig{};
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), UsageError);
}

namespace {

// Adapters tune a model that already knows something, so the loss-decrease
// tests pretrain the tiny base briefly before attaching them.
BaseWeights pretrained_tiny_base(const Vocab& v,
                                 const std::vector<Example>& data,
                                 std::uint64_t seed) {
  ModelConfig mc = small_config(v.size());
  BaseWeights w = BaseWeights::init(mc, seed);
  TrainConfig pc;
  pc.lr = 3e-3;
  pc.epochs = 30;
  pc.batch_size = 16;
  pc.seed = seed + 1;
  pretrain(pc, data, w);
  return w;
}

}  // namespace

TEST_CASE("vanilla lora training reduces the loss on a copy task") {
  Vocab v = Vocab::build({"abcd:"});
  Rng rng(3);
  std::vector<Example> data = copy_examples(v, 48, rng);
  BaseWeights w = pretrained_tiny_base(v, data, 1);
  AdapterSet lora = make_lora_adapters(w.config, 4, 4.0, 2);

  TrainConfig tc;
  tc.lr = 1e-2;
  tc.epochs = 60;
  tc.batch_size = 16;
  tc.seed = 4;
  std::vector<LossRecord> curve = train(tc, data, w, &lora, nullptr);
  REQUIRE(!curve.empty());
  const double first = curve.front().loss;
  const double last = curve.back().loss;
  CHECK(last < 0.9 * first);
}

TEST_CASE("imsm training reduces the loss and trains the gate") {
  Vocab v = Vocab::build({"abcd:"});
  Rng rng(8);
  std::vector<Example> data = copy_examples(v, 48, rng);
  BaseWeights w = pretrained_tiny_base(v, data, 5);
  AdapterSet lora = make_lora_adapters(w.config, 4, 4.0, 6);
  GateParams gp =
      GateParams::init(w.config.d_model, 4, FusionMode::query_gate, 7);

  TrainConfig tc;
  tc.lr = 1e-2;
  tc.epochs = 60;
  tc.batch_size = 16;
  tc.seed = 9;
  tc.mode = TrainMode::imsm;
  tc.fusion = FusionMode::query_gate;
  std::vector<LossRecord> curve = train(tc, data, w, &lora, &gp);
  CHECK(curve.back().loss < 0.9 * curve.front().loss);

  bool wb_moved = false;
  for (double x : gp.w_b.values()) wb_moved = wb_moved || x != 0.0;
  CHECK(wb_moved);
}

TEST_CASE("the frozen base is bitwise unchanged by PEFT training") {
  Vocab v = Vocab::build({"abcd:"});
  ModelConfig mc = small_config(v.size());
  BaseWeights w = BaseWeights::init(mc, 11);
  const std::uint64_t before = w.checksum();
  AdapterSet lora = make_lora_adapters(mc, 4, 4.0, 12);
  GateParams gp = GateParams::init(mc.d_model, 4, FusionMode::query_gate, 13);
  Rng rng(14);
  std::vector<Example> data = copy_examples(v, 24, rng);

  TrainConfig tc;
  tc.epochs = 2;
  tc.seed = 15;
  tc.mode = TrainMode::imsm;
  train(tc, data, w, &lora, &gp);
  CHECK(w.checksum() == before);
}

TEST_CASE("same seed gives identical trained parameters, different seed does not") {
  Vocab v = Vocab::build({"abcd:"});
  ModelConfig mc = small_config(v.size());
  BaseWeights w = BaseWeights::init(mc, 16);
  Rng rng(17);
  std::vector<Example> data = copy_examples(v, 32, rng);

  auto run = [&](std::uint64_t train_seed) {
    AdapterSet lora = make_lora_adapters(mc, 4, 4.0, 18);
    TrainConfig tc;
    tc.epochs = 3;
    tc.seed = train_seed;
    train(tc, data, w, &lora, nullptr);
    std::vector<double> flat;
    for (const Tensor& t : lora.trainable_tensors())
      flat.insert(flat.end(), t.values().begin(), t.values().end());
    return flat;
  };

  std::vector<double> a = run(21), b = run(21), c = run(22);
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("fixed_half training rejects a gate and trains adapters only") {
  Vocab v = Vocab::build({"abcd:"});
  ModelConfig mc = small_config(v.size());
  BaseWeights w = BaseWeights::init(mc, 23);
  AdapterSet lora = make_lora_adapters(mc, 4, 4.0, 24);
  Rng rng(25);
  std::vector<Example> data = copy_examples(v, 24, rng);

  TrainConfig tc;
  tc.epochs = 2;
  tc.seed = 26;
  tc.mode = TrainMode::imsm;
  tc.fusion = FusionMode::fixed_half;
  CHECK_NOTHROW(train(tc, data, w, &lora, nullptr));
}

TEST_CASE("imsm loss at init equals the frozen model's own loss") {
  // zero-init adapters and zero W_B make the fused logits identical to the
  // frozen branch, so the initial training losses must match bitwise.
  Vocab v = Vocab::build({"abcd:"});
  ModelConfig mc = small_config(v.size());
  BaseWeights w = BaseWeights::init(mc, 27);
  AdapterSet lora = make_lora_adapters(mc, 4, 4.0, 28);
  GateParams gp = GateParams::init(mc.d_model, 4, FusionMode::query_gate, 29);
  Rng rng(30);
  Batch batch = batchify(copy_examples(v, 8, rng), 8)[0];

  Tensor imsm_loss = loss_batch(batch, w, &lora, &gp, TrainMode::imsm,
                                FusionMode::query_gate, nullptr);
  Tensor frozen_loss = loss_batch(batch, w, nullptr, nullptr,
                                  TrainMode::vanilla, FusionMode::query_gate,
                                  nullptr);
  CHECK(imsm_loss.item() == frozen_loss.item());
}

TEST_CASE("pretraining moves the base and reduces the loss") {
  Vocab v = Vocab::build({"abcd:"});
  ModelConfig mc = small_config(v.size());
  BaseWeights w = BaseWeights::init(mc, 31);
  const std::uint64_t before = w.checksum();
  Rng rng(32);
  std::vector<Example> data = copy_examples(v, 48, rng);

  TrainConfig tc;
  tc.lr = 1e-3;
  tc.epochs = 6;
  tc.seed = 33;
  std::vector<LossRecord> curve = pretrain(tc, data, w);
  CHECK(w.checksum() != before);
  CHECK(curve.back().loss < curve.front().loss);
  // pretraining leaves the weights frozen for the PEFT phase
  for (const Tensor& t : w.all_tensors()) CHECK(!t.requires_grad());
}
