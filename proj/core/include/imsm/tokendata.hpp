#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "imsm/errors.hpp"

namespace imsm {

// Character-level vocabulary. Symbols are single Unicode code points stored
// as UTF-8 strings; specials occupy fixed ids.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;

  // Specials first, then the corpus characters deduplicated and sorted by
  // code point. Deterministic for a given corpus.
  static Vocab build(const std::vector<std::string>& corpus_lines);

  int size() const { return static_cast<int>(symbols_.size()); }

  // Throws UsageError naming the character when it is not in the vocab.
  std::vector<int> encode(const std::string& text) const;
  // Specials (PAD/BOS/EOS) are dropped from the output.
  std::string decode(const std::vector<int>& ids) const;

  const std::vector<std::string>& symbols() const { return symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> to_id_;
};

// Splits a UTF-8 string into single code point substrings.
std::vector<std::string> utf8_chars(const std::string& text);

// One prompt/completion pair, tokenized. The prompt carries BOS in front,
// the completion carries EOS at the end; neither span contains PAD.
struct Example {
  std::vector<int> prompt_tokens;
  std::vector<int> completion_tokens;

  int t_in() const { return static_cast<int>(prompt_tokens.size()); }
  int t_out() const { return static_cast<int>(completion_tokens.size()); }
  std::vector<int> full_tokens() const;
};

Example make_example(const std::string& prompt, const std::string& completion,
                     const Vocab& vocab);

// Reads a JSONL file of {"prompt": ..., "completion": ...} objects.
// Malformed lines raise ParseError with the 1-based line number.
std::vector<std::pair<std::string, std::string>> load_jsonl(
    const std::string& path);

std::vector<Example> load_examples(const std::string& path,
                                   const Vocab& vocab);

// Right-padded token matrix with a loss mask. mask[r][i] is true exactly
// when tokens[r][i] is a completion token (including EOS).
struct Batch {
  std::vector<std::vector<int>> tokens;          // rows x padded length
  std::vector<std::vector<std::uint8_t>> mask;   // same shape
  std::vector<int> t_in;                         // per-row prompt length
  std::vector<int> row_len;                      // per-row unpadded length
};

std::vector<Batch> batchify(const std::vector<Example>& examples,
                            int batch_size);

}  // namespace imsm
