#include <cstdio>
#include <fstream>
#include <string>

#include "doctest.h"
#include "imsm/checkpoint.hpp"
#include "imsm/random.hpp"

using namespace imsm;

namespace {

struct TempFile {
  std::string path;
  TempFile() {
    char buf[L_tmpnam];
    REQUIRE(std::tmpnam(buf) != nullptr);
    path = buf;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

ModelConfig small_config() {
  ModelConfig mc;
  mc.d_model = 8;
  mc.n_layers = 2;
  mc.n_heads = 2;
  mc.d_ff = 16;
  mc.vocab_size = 11;
  mc.max_seq_len = 32;
  return mc;
}

}  // namespace

TEST_CASE("raw archive round trip preserves names, shapes, and bits") {
  TempFile f;
  Rng rng(1);
  Tensor a = Tensor::zeros({3, 4});
  Tensor b = Tensor::zeros({1, 7});
  fill_gaussian(a, 1.0, rng);
  fill_gaussian(b, 1.0, rng);
  // include values that stress the binary encoding
  a.data()[0] = 0.1;
  a.data()[1] = -0.0;
  a.data()[2] = 1e-308;

  nlohmann::json meta = {{"note", "x"}, {"k", 3}};
  save_archive(f.path, "blob", meta, {{"alpha", a}, {"beta", b}});
  Archive ar = load_archive(f.path);
  CHECK(ar.kind == "blob");
  CHECK(ar.meta.at("k").get<int>() == 3);
  REQUIRE(ar.tensors.size() == 2);
  CHECK(ar.tensor("alpha").shape() == std::vector<int>{3, 4});
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(ar.tensor("alpha").data()[i] == a.data()[i]);
  for (std::size_t i = 0; i < b.size(); ++i)
    CHECK(ar.tensor("beta").data()[i] == b.data()[i]);
  CHECK_THROWS_AS(ar.tensor("gamma"), UsageError);
}

TEST_CASE("corrupt and missing archives are rejected") {
  CHECK_THROWS_AS(load_archive("/nonexistent/imsm.ckpt"), UsageError);

  TempFile f;
  {
    std::ofstream out(f.path, std::ios::binary);
    out << "not json at all\n";
  }
  CHECK_THROWS_AS(load_archive(f.path), ParseError);

  // truncated payload: valid header, missing float bytes
  TempFile g;
  Tensor t = Tensor::full({2, 2}, 1.5);
  save_archive(g.path, "blob", {}, {{"t", t}});
  {
    std::ifstream in(g.path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    std::ofstream out(g.path, std::ios::binary);
    out.write(all.data(), static_cast<std::streamsize>(all.size() - 8));
  }
  CHECK_THROWS_AS(load_archive(g.path), ParseError);
}

TEST_CASE("model checkpoint round trip is bitwise and keeps the config") {
  TempFile f;
  ModelConfig mc = small_config();
  BaseWeights w = BaseWeights::init(mc, 42);
  save_model(f.path, w);
  BaseWeights back = load_model(f.path);
  CHECK(back.config.d_model == mc.d_model);
  CHECK(back.config.n_layers == mc.n_layers);
  CHECK(back.config.n_heads == mc.n_heads);
  CHECK(back.config.d_ff == mc.d_ff);
  CHECK(back.config.vocab_size == mc.vocab_size);
  CHECK(back.config.max_seq_len == mc.max_seq_len);
  CHECK(back.checksum() == w.checksum());
}

TEST_CASE("lora adapter round trip preserves sites, rank, and alpha") {
  TempFile f;
  ModelConfig mc = small_config();
  AdapterSet set = make_lora_adapters(mc, 3, 6.0, 5);
  Rng rng(6);
  for (Tensor t : set.trainable_tensors()) fill_gaussian(t, 0.1, rng);
  save_adapters(f.path, set, 3, 6.0);

  AdapterSet back = load_adapters(f.path);
  CHECK(back.kind == set.kind);
  auto orig = set.named_tensors();
  auto got = back.named_tensors();
  REQUIRE(got.size() == orig.size());
  for (std::size_t i = 0; i < orig.size(); ++i) {
    CHECK(got[i].first == orig[i].first);
    CHECK(got[i].second.shape() == orig[i].second.shape());
    for (std::size_t j = 0; j < orig[i].second.size(); ++j)
      CHECK(got[i].second.data()[j] == orig[i].second.data()[j]);
  }

  // restored adapters act identically in the forward pass
  BaseWeights w = BaseWeights::init(mc, 7);
  std::vector<int> tokens = {1, 4, 5, 6};
  Tensor h1 = forward_hidden(tokens, w, &set);
  Tensor h2 = forward_hidden(tokens, w, &back);
  for (std::size_t i = 0; i < h1.size(); ++i)
    CHECK(h1.data()[i] == h2.data()[i]);
}

TEST_CASE("ia3 adapter round trip") {
  TempFile f;
  ModelConfig mc = small_config();
  AdapterSet set = make_ia3_adapters(mc);
  Rng rng(8);
  for (Tensor t : set.trainable_tensors()) fill_gaussian(t, 0.3, rng);
  save_adapters(f.path, set);
  AdapterSet back = load_adapters(f.path);
  CHECK(back.kind == set.kind);
  auto orig = set.named_tensors();
  auto got = back.named_tensors();
  REQUIRE(got.size() == orig.size());
  for (std::size_t i = 0; i < orig.size(); ++i)
    for (std::size_t j = 0; j < orig[i].second.size(); ++j)
      CHECK(got[i].second.data()[j] == orig[i].second.data()[j]);
}

TEST_CASE("gate round trip preserves factors, rank, and fusion mode") {
  TempFile f;
  GateParams gp = GateParams::init(8, 3, FusionMode::no_query_gate, 9);
  Rng rng(10);
  fill_gaussian(gp.w_b, 0.2, rng);
  save_gate(f.path, gp, FusionMode::no_query_gate);

  FusionMode mode = FusionMode::query_gate;
  GateParams back = load_gate(f.path, mode);
  CHECK(mode == FusionMode::no_query_gate);
  CHECK(back.rank == 3);
  CHECK(back.w_a.shape() == gp.w_a.shape());
  for (std::size_t i = 0; i < gp.w_a.size(); ++i)
    CHECK(back.w_a.data()[i] == gp.w_a.data()[i]);
  for (std::size_t i = 0; i < gp.w_b.size(); ++i)
    CHECK(back.w_b.data()[i] == gp.w_b.data()[i]);
}

TEST_CASE("kind mismatch between loaders is rejected") {
  TempFile f;
  GateParams gp = GateParams::init(8, 2, FusionMode::query_gate, 11);
  save_gate(f.path, gp, FusionMode::query_gate);
  CHECK_THROWS_AS(load_model(f.path), UsageError);
  CHECK_THROWS_AS(load_adapters(f.path), UsageError);
}
