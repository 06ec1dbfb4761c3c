#include "imsm/tokendata.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "json.hpp"

namespace imsm {

std::vector<std::string> utf8_chars(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if ((c & 0x80) == 0x00)
      len = 1;
    else if ((c & 0xE0) == 0xC0)
      len = 2;
    else if ((c & 0xF0) == 0xE0)
      len = 3;
    else if ((c & 0xF8) == 0xF0)
      len = 4;
    else
      throw UsageError("utf8: invalid lead byte");
    if (i + len > text.size()) throw UsageError("utf8: truncated sequence");
    out.push_back(text.substr(i, len));
    i += len;
  }
  return out;
}

Vocab Vocab::build(const std::vector<std::string>& corpus_lines) {
  if (corpus_lines.empty()) throw UsageError("build_vocab: empty corpus");
  std::set<std::string> chars;
  for (const std::string& line : corpus_lines)
    for (const std::string& ch : utf8_chars(line)) chars.insert(ch);

  Vocab v;
  v.symbols_ = {"<pad>", "<bos>", "<eos>"};
  // std::set of UTF-8 strings orders by byte sequence, which matches code
  // point order for valid UTF-8.
  for (const std::string& ch : chars) v.symbols_.push_back(ch);
  for (int i = 0; i < static_cast<int>(v.symbols_.size()); ++i)
    v.to_id_[v.symbols_[i]] = i;
  return v;
}

std::vector<int> Vocab::encode(const std::string& text) const {
  std::vector<int> out;
  for (const std::string& ch : utf8_chars(text)) {
    auto it = to_id_.find(ch);
    if (it == to_id_.end())
      throw UsageError("encode: character '" + ch + "' not in vocabulary");
    out.push_back(it->second);
  }
  return out;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= size())
      throw UsageError("decode: id out of vocabulary");
    if (id == kPad || id == kBos || id == kEos) continue;
    out += symbols_[id];
  }
  return out;
}

std::vector<int> Example::full_tokens() const {
  std::vector<int> out = prompt_tokens;
  out.insert(out.end(), completion_tokens.begin(), completion_tokens.end());
  return out;
}

Example make_example(const std::string& prompt, const std::string& completion,
                     const Vocab& vocab) {
  Example ex;
  ex.prompt_tokens.push_back(Vocab::kBos);
  for (int id : vocab.encode(prompt)) ex.prompt_tokens.push_back(id);
  ex.completion_tokens = vocab.encode(completion);
  ex.completion_tokens.push_back(Vocab::kEos);
  return ex;
}

std::vector<std::pair<std::string, std::string>> load_jsonl(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("load_jsonl: cannot open " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw ParseError("load_jsonl: " + path + ": invalid JSON at line " +
                       std::to_string(lineno));
    if (!j.is_object() || !j.contains("prompt") || !j.contains("completion") ||
        !j["prompt"].is_string() || !j["completion"].is_string())
      throw ParseError("load_jsonl: " + path + ": line " +
                       std::to_string(lineno) +
                       " needs string fields \"prompt\" and \"completion\"");
    out.emplace_back(j["prompt"].get<std::string>(),
                     j["completion"].get<std::string>());
  }
  return out;
}

std::vector<Example> load_examples(const std::string& path,
                                   const Vocab& vocab) {
  std::vector<Example> out;
  for (const auto& [prompt, completion] : load_jsonl(path))
    out.push_back(make_example(prompt, completion, vocab));
  return out;
}

std::vector<Batch> batchify(const std::vector<Example>& examples,
                            int batch_size) {
  if (batch_size < 1) throw UsageError("batchify: batch_size must be >= 1");
  std::vector<Batch> out;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t end =
        std::min(examples.size(), start + static_cast<std::size_t>(batch_size));
    Batch b;
    int maxlen = 0;
    for (std::size_t i = start; i < end; ++i)
      maxlen = std::max(maxlen, examples[i].t_in() + examples[i].t_out());
    for (std::size_t i = start; i < end; ++i) {
      const Example& ex = examples[i];
      std::vector<int> row = ex.full_tokens();
      const int len = static_cast<int>(row.size());
      std::vector<std::uint8_t> m(maxlen, 0);
      for (int p = ex.t_in(); p < len; ++p) m[p] = 1;
      row.resize(maxlen, Vocab::kPad);
      b.tokens.push_back(std::move(row));
      b.mask.push_back(std::move(m));
      b.t_in.push_back(ex.t_in());
      b.row_len.push_back(len);
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace imsm
