#include "imsm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace imsm {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

nlohmann::json shape_json(const Tensor& t) {
  nlohmann::json s = nlohmann::json::array();
  for (int d : t.shape()) s.push_back(d);
  return s;
}

}  // namespace

void save_archive(const std::string& path, const std::string& kind,
                  const nlohmann::json& meta,
                  const std::vector<std::pair<std::string, Tensor>>& tensors) {
  nlohmann::json header;
  header["format"] = "imsm-archive-v1";
  header["kind"] = kind;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : tensors)
    header["tensors"].push_back({{"name", name}, {"shape", shape_json(t)}});

  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("checkpoint: cannot write " + path);
  out << header.dump() << '\n';
  for (const auto& [name, t] : tensors)
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!out) throw UsageError("checkpoint: write failed for " + path);
}

Archive load_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("checkpoint: cannot open " + path);
  std::string header_line;
  if (!std::getline(in, header_line))
    throw ParseError("checkpoint: missing header in " + path);
  nlohmann::json header = nlohmann::json::parse(header_line, nullptr, false);
  if (header.is_discarded() || header.value("format", "") != "imsm-archive-v1")
    throw ParseError("checkpoint: bad header in " + path);

  Archive a;
  a.kind = header.value("kind", "");
  a.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header["tensors"]) {
    std::vector<int> shape = entry["shape"].get<std::vector<int>>();
    Tensor t = Tensor::zeros(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw ParseError("checkpoint: truncated tensor data in " + path);
    a.tensors.emplace_back(entry["name"].get<std::string>(), std::move(t));
  }
  return a;
}

const Tensor& Archive::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw UsageError("checkpoint: tensor not found: " + name);
}

void save_model(const std::string& path, const BaseWeights& weights) {
  const ModelConfig& c = weights.config;
  nlohmann::json meta = {{"d_model", c.d_model},     {"n_layers", c.n_layers},
                         {"n_heads", c.n_heads},     {"d_ff", c.d_ff},
                         {"vocab_size", c.vocab_size},
                         {"max_seq_len", c.max_seq_len},
                         {"rope_base", c.rope_base}};
  save_archive(path, "model", meta, weights.named_tensors());
}

BaseWeights load_model(const std::string& path) {
  Archive a = load_archive(path);
  if (a.kind != "model")
    throw UsageError("checkpoint: " + path + " is not a model archive");
  ModelConfig c;
  c.d_model = a.meta.at("d_model");
  c.n_layers = a.meta.at("n_layers");
  c.n_heads = a.meta.at("n_heads");
  c.d_ff = a.meta.at("d_ff");
  c.vocab_size = a.meta.at("vocab_size");
  c.max_seq_len = a.meta.at("max_seq_len");
  c.rope_base = a.meta.at("rope_base");

  BaseWeights w = BaseWeights::init(c, 0);
  for (auto& [name, t] : w.named_tensors()) {
    const Tensor& src = a.tensor(name);
    if (src.shape() != t.shape())
      throw ParseError("checkpoint: shape mismatch for " + name);
    Tensor dst = t;
    std::copy(src.data(), src.data() + src.size(), dst.data());
  }
  return w;
}

void save_adapters(const std::string& path, const AdapterSet& set,
                   int lora_rank, double lora_alpha) {
  nlohmann::json meta = {
      {"kind", set.kind == AdapterKind::lora ? "lora" : "ia3"},
      {"rank", lora_rank},
      {"alpha", lora_alpha}};
  save_archive(path, "adapters", meta, set.named_tensors());
}

AdapterSet load_adapters(const std::string& path) {
  Archive a = load_archive(path);
  if (a.kind != "adapters")
    throw UsageError("checkpoint: " + path + " is not an adapter archive");
  AdapterSet set;
  const std::string kind = a.meta.value("kind", "lora");
  set.kind = kind == "ia3" ? AdapterKind::ia3 : AdapterKind::lora;
  const int rank = a.meta.value("rank", 0);
  const double alpha = a.meta.value("alpha", 0.0);

  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    const std::string& name = a.tensors[i].first;
    if (name.ends_with(".lora_a")) {
      LoraAdapter ad;
      ad.site = name.substr(0, name.size() - 7);
      ad.rank = rank;
      ad.alpha = alpha;
      ad.a = a.tensors[i].second;
      ad.b = a.tensor(ad.site + ".lora_b");
      set.add(std::move(ad));
    } else if (name.ends_with(".ia3")) {
      Ia3Adapter ad;
      ad.site = name.substr(0, name.size() - 4);
      ad.scale = a.tensors[i].second;
      set.add(std::move(ad));
    }
  }
  return set;
}

void save_gate(const std::string& path, const GateParams& gate,
               FusionMode mode) {
  nlohmann::json meta = {
      {"rank", gate.rank},
      {"mode", mode == FusionMode::query_gate ? "query" : "noquery"}};
  save_archive(path, "imsm_gate", meta, gate.named_tensors());
}

GateParams load_gate(const std::string& path, FusionMode& mode) {
  Archive a = load_archive(path);
  if (a.kind != "imsm_gate")
    throw UsageError("checkpoint: " + path + " is not a gate archive");
  mode = a.meta.value("mode", "query") == "query" ? FusionMode::query_gate
                                                  : FusionMode::no_query_gate;
  GateParams g;
  g.rank = a.meta.at("rank");
  g.w_a = a.tensor("gate.w_a").clone();
  g.w_b = a.tensor("gate.w_b").clone();
  return g;
}

}  // namespace imsm
