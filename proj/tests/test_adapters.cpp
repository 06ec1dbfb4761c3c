#include "doctest.h"
#include "gradcheck.hpp"
#include "imsm/adapters.hpp"
#include "imsm/fusion.hpp"
#include "imsm/model.hpp"
#include "imsm/random.hpp"

using namespace imsm;
using imsm::testing::max_relative_grad_error;

namespace {

LoraAdapter random_lora(int d, int k, int rank, double alpha, Rng& rng) {
  LoraAdapter a;
  a.site = "site";
  a.rank = rank;
  a.alpha = alpha;
  a.a = Tensor::zeros({rank, k});
  a.b = Tensor::zeros({d, rank});
  fill_gaussian(a.a, 0.5, rng);
  fill_gaussian(a.b, 0.5, rng);
  return a;
}

}  // namespace

TEST_CASE("lora_apply with zero B equals the frozen projection exactly") {
  Rng rng(3);
  Tensor w0 = Tensor::zeros({4, 4});
  fill_gaussian(w0, 1.0, rng);
  Tensor x = Tensor::zeros({2, 4});
  fill_gaussian(x, 1.0, rng);

  LoraAdapter a = random_lora(4, 4, 2, 2.0, rng);
  for (double& v : a.b.values()) v = 0.0;

  Tensor with = lora_apply(x, w0, a);
  Tensor without = matmul(x, w0);
  for (std::size_t i = 0; i < with.size(); ++i)
    CHECK(with.data()[i] == without.data()[i]);
}

TEST_CASE("lora 2x2 hand arithmetic") {
  Tensor w0 = Tensor::from({2, 2}, {1, 0, 0, 1});
  LoraAdapter a;
  a.site = "site";
  a.rank = 1;
  a.alpha = 1.0;
  a.b = Tensor::from({2, 1}, {1, 0});
  a.a = Tensor::from({1, 2}, {0, 1});

  Tensor merged = lora_merge(w0, a);
  CHECK(merged.values() == std::vector<double>{1, 1, 0, 1});

  Tensor x = Tensor::from({1, 2}, {1, 1});
  CHECK(lora_apply(x, w0, a).values() == std::vector<double>{1, 2});
}

TEST_CASE("lora_apply equals merged-weight forward within 1e-10") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 6, k = 5, rank = 2;
    Tensor w0 = Tensor::zeros({d, k});
    fill_gaussian(w0, 1.0, rng);
    Tensor x = Tensor::zeros({3, d});
    fill_gaussian(x, 1.0, rng);
    LoraAdapter a = random_lora(d, k, rank, 3.0, rng);

    Tensor fast = lora_apply(x, w0, a);
    Tensor slow = matmul(x, lora_merge(w0, a));
    for (std::size_t i = 0; i < fast.size(); ++i)
      CHECK(fast.data()[i] ==
            doctest::Approx(slow.data()[i]).epsilon(1e-10));
  }
}

TEST_CASE("ia3_apply identity at ones, zero at zeros, gradcheck") {
  Rng rng(11);
  Tensor x = Tensor::zeros({3, 4});
  fill_gaussian(x, 1.0, rng);

  Ia3Adapter ones{"s", Tensor::full({1, 4}, 1.0)};
  Tensor same = ia3_apply(x, ones);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(same.data()[i] == x.data()[i]);

  Ia3Adapter zeros{"s", Tensor::zeros({1, 4})};
  Tensor z = ia3_apply(x, zeros);
  for (double v : z.values()) CHECK(v == 0.0);

  Ia3Adapter learned{"s", Tensor::zeros({1, 4})};
  fill_gaussian(learned.scale, 1.0, rng);
  learned.scale.set_requires_grad(true);
  x.set_requires_grad(true);
  Tape tape;
  tape.backward(sum_all(elem_mul(ia3_apply(x, learned, &tape),
                                 ia3_apply(x, learned, &tape), &tape),
                        &tape));
  auto forward = [&] {
    Tensor y = ia3_apply(x, learned);
    return sum_all(elem_mul(y, y)).item();
  };
  CHECK(max_relative_grad_error({x, learned.scale}, forward) < 1e-6);

  Ia3Adapter wrong{"s", Tensor::zeros({1, 3})};
  CHECK_THROWS_AS(ia3_apply(x, wrong), DimensionError);
}

TEST_CASE("trainable_param_count matches the large-model gate delta") {
  // d=4096, r=8: the gate adds 4d*r + r*d = 163,840 parameters, i.e. the
  // 4.063M - 3.899M = 0.164M published difference.
  CHECK(gate_param_count(4096, 8) == 163840);
  CHECK(gate_param_count(64, 8) == 4 * 64 * 8 + 8 * 64);

  AdapterSet empty;
  CHECK(trainable_param_count(empty, nullptr) == 0);

  GateParams g = GateParams::init(64, 8, FusionMode::query_gate, 1);
  CHECK(trainable_param_count(empty, &g) == 2560);
}

TEST_CASE("param count equals enumeration of optimizer-visible scalars") {
  ModelConfig mc;
  mc.d_model = 16;
  mc.n_layers = 3;
  mc.n_heads = 2;
  mc.d_ff = 32;
  mc.vocab_size = 10;
  AdapterSet lora = make_lora_adapters(mc, 2, 2.0, 1);
  std::int64_t by_hand = 0;
  for (const Tensor& t : lora.trainable_tensors()) by_hand += t.size();
  CHECK(trainable_param_count(lora) == by_hand);
  // 3 layers x 2 sites x (2x16 A + 16x2 B)
  CHECK(by_hand == 3 * 2 * (2 * 16 + 16 * 2));

  AdapterSet ia3 = make_ia3_adapters(mc);
  CHECK(trainable_param_count(ia3) == 3 * 3 * 16);
}

TEST_CASE("duplicate adapter sites are rejected") {
  AdapterSet set;
  Ia3Adapter a{"layer0.wk", Tensor::full({1, 4}, 1.0)};
  set.add(a);
  CHECK_THROWS_AS(set.add(a), UsageError);
}
