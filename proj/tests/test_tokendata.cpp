#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "imsm/harness.hpp"
#include "imsm/model.hpp"
#include "imsm/random.hpp"
#include "imsm/tokendata.hpp"
#include "imsm/trainer.hpp"

using namespace imsm;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& contents) {
    path = std::string(std::tmpnam(nullptr)) + ".jsonl";
    std::ofstream out(path);
    out << contents;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("build_vocab: specials first, characters deduplicated and sorted") {
  Vocab v = Vocab::build({"ab"});
  CHECK(v.symbols() ==
        std::vector<std::string>{"<pad>", "<bos>", "<eos>", "a", "b"});

  Vocab dup = Vocab::build({"aaab", "ba"});
  CHECK(dup.size() == 5);

  Vocab again = Vocab::build({"ab"});
  CHECK(again.symbols() == v.symbols());

  CHECK_THROWS_AS(Vocab::build({}), UsageError);
}

TEST_CASE("encode/decode bijection and error naming") {
  Vocab v = Vocab::build({"ab"});
  CHECK(v.encode("").empty());
  CHECK(v.decode({}).empty());
  CHECK(v.encode("ab") == std::vector<int>{3, 4});
  CHECK(v.decode({3, 4}) == "ab");

  CHECK_THROWS_WITH_AS(v.encode("ax"),
                       "encode: character 'x' not in vocabulary", UsageError);

  // decode drops specials
  CHECK(v.decode({1, 3, 4, 2, 0}) == "ab");
}

TEST_CASE("round trip holds on random corpus substrings") {
  const std::string corpus = "abcdefghij0123456789+=:";
  Vocab v = Vocab::build({corpus});
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const int start = rng.uniform_int(0, (int)corpus.size() - 1);
    const int len = rng.uniform_int(0, (int)corpus.size() - start);
    const std::string s = corpus.substr(start, len);
    CHECK(v.decode(v.encode(s)) == s);
  }
}

TEST_CASE("utf8 characters are single symbols") {
  Vocab v = Vocab::build({"a→b"});
  CHECK(v.size() == 6);  // 3 specials + a, b, arrow
  CHECK(v.decode(v.encode("a→")) == "a→");
}

TEST_CASE("load_jsonl attaches specials and reports bad lines") {
  Vocab v = Vocab::build({"12+5=7"});
  TempFile good(R"({"prompt":"12+5=","completion":"17"})" "\n");
  auto examples = load_examples(good.path, v);
  REQUIRE(examples.size() == 1);
  CHECK(examples[0].t_in() == 6);   // BOS + 5 chars
  CHECK(examples[0].t_out() == 3);  // 2 chars + EOS
  CHECK(examples[0].prompt_tokens[0] == Vocab::kBos);
  CHECK(examples[0].completion_tokens.back() == Vocab::kEos);

  TempFile empty("");
  CHECK(load_jsonl(empty.path).empty());

  std::string ten_rows;
  for (int i = 0; i < 4; ++i)
    ten_rows += R"({"prompt":"1","completion":"2"})" "\n";
  ten_rows += "{broken\n";
  TempFile bad(ten_rows);
  CHECK_THROWS_WITH_AS(load_jsonl(bad.path),
                       doctest::Contains("line 5"), ParseError);

  TempFile missing(R"({"prompt":"1"})" "\n");
  CHECK_THROWS_AS(load_jsonl(missing.path), ParseError);
}

TEST_CASE("batchify pads right and masks exactly the completion span") {
  Vocab v = Vocab::build({"abcd"});
  std::vector<Example> exs = {make_example("a", "bc", v),      // len 5
                              make_example("abc", "dcb", v)};  // len 8
  auto batches = batchify(exs, 2);
  REQUIRE(batches.size() == 1);
  const Batch& b = batches[0];
  CHECK(b.tokens[0].size() == 8);
  CHECK(b.tokens[1].size() == 8);

  int mask_count = 0;
  for (const auto& row : b.mask)
    for (auto m : row) mask_count += m;
  CHECK(mask_count == exs[0].t_out() + exs[1].t_out());

  // mask implies non-pad, and prompt positions are never masked
  for (std::size_t r = 0; r < b.tokens.size(); ++r)
    for (std::size_t i = 0; i < b.tokens[r].size(); ++i) {
      if (b.mask[r][i]) CHECK(b.tokens[r][i] != Vocab::kPad);
      if ((int)i < b.t_in[r]) CHECK(!b.mask[r][i]);
    }

  // batch_size 1: no padding
  for (const Batch& single : batchify(exs, 1))
    CHECK(single.tokens[0].size() == (std::size_t)single.row_len[0]);

  CHECK_THROWS_AS(batchify(exs, 0), UsageError);
}

TEST_CASE("padding never changes the masked loss") {
  Vocab v = default_task_vocab();
  ModelConfig mc;
  mc.d_model = 16;
  mc.n_layers = 2;
  mc.n_heads = 2;
  mc.d_ff = 32;
  mc.vocab_size = v.size();
  BaseWeights w = BaseWeights::init(mc, 9);

  std::vector<Example> exs = {make_example("copy:ab→", "ab", v),
                              make_example("copy:defgh→", "defgh", v),
                              make_example("1+2=", "3", v)};
  Batch padded = batchify(exs, 3)[0];
  Tensor batch_loss = loss_batch(padded, w, nullptr, nullptr,
                                 TrainMode::vanilla, FusionMode::fixed_half,
                                 nullptr);

  double mean_of_single = 0.0;
  for (const Example& ex : exs) {
    Batch one = batchify({ex}, 1)[0];
    mean_of_single += loss_batch(one, w, nullptr, nullptr, TrainMode::vanilla,
                                 FusionMode::fixed_half, nullptr)
                          .item();
  }
  mean_of_single /= exs.size();
  CHECK(batch_loss.item() == doctest::Approx(mean_of_single).epsilon(1e-10));
}
