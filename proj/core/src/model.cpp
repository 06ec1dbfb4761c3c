#include "imsm/model.hpp"

#include <cmath>
#include <cstring>

#include "imsm/ops.hpp"
#include "imsm/random.hpp"

namespace imsm {

namespace {
constexpr double kNormEps = 1e-6;
}

void ModelConfig::validate() const {
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1 ||
      vocab_size < 1 || max_seq_len < 1)
    throw UsageError("model config: all dimensions must be positive");
  if (d_model % n_heads != 0)
    throw UsageError("model config: d_model must be divisible by n_heads");
  if (d_head() % 2 != 0)
    throw UsageError("model config: head dimension must be even for rope");
}

BaseWeights BaseWeights::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const int d = config.d_model;

  auto gauss = [&](std::vector<int> shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    fill_gaussian(t, 0.02, rng);
    return t;
  };

  BaseWeights w;
  w.config = config;
  w.embedding = gauss({config.vocab_size, d});
  for (int l = 0; l < config.n_layers; ++l) {
    Layer layer;
    layer.wq = gauss({d, d});
    layer.wk = gauss({d, d});
    layer.wv = gauss({d, d});
    layer.wo = gauss({d, d});
    layer.w_up = gauss({d, config.d_ff});
    layer.w_down = gauss({config.d_ff, d});
    layer.norm_attn = Tensor::full({1, d}, 1.0);
    layer.norm_mlp = Tensor::full({1, d}, 1.0);
    w.layers.push_back(std::move(layer));
  }
  w.final_norm = Tensor::full({1, d}, 1.0);
  w.w_out = gauss({d, config.vocab_size});
  return w;
}

std::vector<std::pair<std::string, Tensor>> BaseWeights::named_tensors()
    const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("embedding", embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    out.emplace_back(p + "wq", layers[l].wq);
    out.emplace_back(p + "wk", layers[l].wk);
    out.emplace_back(p + "wv", layers[l].wv);
    out.emplace_back(p + "wo", layers[l].wo);
    out.emplace_back(p + "w_up", layers[l].w_up);
    out.emplace_back(p + "w_down", layers[l].w_down);
    out.emplace_back(p + "norm_attn", layers[l].norm_attn);
    out.emplace_back(p + "norm_mlp", layers[l].norm_mlp);
  }
  out.emplace_back("final_norm", final_norm);
  out.emplace_back("w_out", w_out);
  return out;
}

std::vector<Tensor> BaseWeights::all_tensors() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_tensors()) out.push_back(t);
  return out;
}

void BaseWeights::set_requires_grad(bool v) {
  for (Tensor t : all_tensors()) t.set_requires_grad(v);
}

void BaseWeights::zero_grads() {
  for (Tensor t : all_tensors()) t.zero_grad();
}

std::uint64_t BaseWeights::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (const Tensor& t : all_tensors()) {
    for (double v : t.values()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xFF;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

AttnCache::AttnCache(const ModelConfig& config)
    : keys_(config.n_layers), vals_(config.n_layers), d_(config.d_model) {}

void AttnCache::append(int layer, const Tensor& k_rows, const Tensor& v_rows) {
  keys_[layer].insert(keys_[layer].end(), k_rows.data(),
                      k_rows.data() + k_rows.size());
  vals_[layer].insert(vals_[layer].end(), v_rows.data(),
                      v_rows.data() + v_rows.size());
}

namespace {

// Applies the site's projection, routing through whatever adapter is
// attached there.
Tensor project(const Tensor& x, const Tensor& w0, const AdapterSet* adapters,
               const std::string& site, Tape* tape) {
  if (adapters) {
    if (const LoraAdapter* la = adapters->lora_at(site))
      return lora_apply(x, w0, *la, tape);
    Tensor y = matmul(x, w0, tape);
    if (const Ia3Adapter* ia = adapters->ia3_at(site))
      return ia3_apply(y, *ia, tape);
    return y;
  }
  return matmul(x, w0, tape);
}

}  // namespace

Tensor forward_hidden(const std::vector<int>& tokens, const BaseWeights& w,
                      const AdapterSet* adapters, AttnCache* cache,
                      Tape* tape) {
  const ModelConfig& cfg = w.config;
  if (tokens.empty()) throw UsageError("forward_hidden: empty token list");
  if (cache && tape)
    throw UsageError("forward_hidden: cached decode is inference-only");
  const int past = cache ? cache->length() : 0;
  const int t = static_cast<int>(tokens.size());
  if (past + t > cfg.max_seq_len)
    throw CapacityError("forward_hidden: sequence exceeds max_seq_len");

  const int d = cfg.d_model;
  const int dh = cfg.d_head();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor x = embed(w.embedding, tokens, tape);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const BaseWeights::Layer& layer = w.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";

    Tensor xa = rmsnorm(x, layer.norm_attn, kNormEps, tape);
    Tensor q = project(xa, layer.wq, adapters, p + "wq", tape);
    Tensor k = project(xa, layer.wk, adapters, p + "wk", tape);
    Tensor v = project(xa, layer.wv, adapters, p + "wv", tape);

    // Rotate all heads' new keys, then pull in the cached history.
    std::vector<Tensor> head_outs;
    Tensor k_rot = Tensor::zeros({t, d});
    Tensor k_hist, v_hist;
    if (cache && past > 0) {
      k_hist = Tensor::from({past, d}, cache->keys(l));
      v_hist = Tensor::from({past, d}, cache->vals(l));
    }
    for (int h = 0; h < cfg.n_heads; ++h) {
      Tensor qh = rope(slice_cols(q, h * dh, dh, tape), past, cfg.rope_base,
                       tape);
      Tensor kh = rope(slice_cols(k, h * dh, dh, tape), past, cfg.rope_base,
                       tape);
      Tensor vh = slice_cols(v, h * dh, dh, tape);
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < dh; ++j) k_rot.at(i, h * dh + j) = kh.at(i, j);

      if (cache && past > 0) {
        // Stack cached history rows above the new rows.
        Tensor full_k = Tensor::zeros({past + t, dh});
        for (int i = 0; i < past; ++i)
          for (int j = 0; j < dh; ++j)
            full_k.at(i, j) = k_hist.at(i, h * dh + j);
        for (int i = 0; i < t; ++i)
          for (int j = 0; j < dh; ++j) full_k.at(past + i, j) = kh.at(i, j);
        kh = full_k;
        Tensor full_v = Tensor::zeros({past + t, dh});
        for (int i = 0; i < past; ++i)
          for (int j = 0; j < dh; ++j)
            full_v.at(i, j) = v_hist.at(i, h * dh + j);
        for (int i = 0; i < t; ++i)
          for (int j = 0; j < dh; ++j) full_v.at(past + i, j) = vh.at(i, j);
        vh = full_v;
      }

      Tensor scores = scale(matmul_nt(qh, kh, tape), inv_sqrt_dh, tape);
      Tensor probs = causal_softmax(scores, past, tape);
      head_outs.push_back(matmul(probs, vh, tape));
    }
    if (cache) cache->append(l, k_rot, v);

    Tensor attn = matmul(concat_lastdim(head_outs, tape), layer.wo, tape);
    x = add(x, attn, tape);

    Tensor xm = rmsnorm(x, layer.norm_mlp, kNormEps, tape);
    Tensor hidden = silu(project(xm, layer.w_up, adapters, p + "w_up", tape),
                         tape);
    Tensor down = project(hidden, layer.w_down, adapters, p + "w_down", tape);
    x = add(x, down, tape);
  }
  if (cache) cache->note_advance(t);
  return rmsnorm(x, w.final_norm, kNormEps, tape);
}

Tensor lm_head(const Tensor& h, const Tensor& w_out, Tape* tape) {
  return matmul(h, w_out, tape);
}

AdapterSet make_lora_adapters(const ModelConfig& config, int rank,
                              double alpha, std::uint64_t seed,
                              const std::vector<std::string>& site_kinds) {
  config.validate();
  const int d = config.d_model;
  if (rank < 1 || rank >= d)
    throw UsageError("lora: rank must be in [1, d_model)");
  Rng rng(seed);
  AdapterSet set;
  set.kind = AdapterKind::lora;
  for (int l = 0; l < config.n_layers; ++l) {
    for (const std::string& kind : site_kinds) {
      int d_in = d, d_out = d;
      if (kind == "w_up") d_out = config.d_ff;
      if (kind == "w_down") {
        d_in = config.d_ff;
        d_out = d;
      }
      LoraAdapter a;
      a.site = "layer" + std::to_string(l) + "." + kind;
      a.rank = rank;
      a.alpha = alpha;
      a.a = Tensor::zeros({rank, d_out});
      fill_gaussian(a.a, 0.02, rng);
      a.b = Tensor::zeros({d_in, rank});  // zero: fresh adapter is a no-op
      set.add(std::move(a));
    }
  }
  return set;
}

AdapterSet make_ia3_adapters(const ModelConfig& config) {
  config.validate();
  AdapterSet set;
  set.kind = AdapterKind::ia3;
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    for (const char* kind : {"wk", "wv", "w_down"}) {
      Ia3Adapter a;
      a.site = p + kind;
      a.scale = Tensor::full({1, config.d_model}, 1.0);
      set.add(std::move(a));
    }
  }
  return set;
}

}  // namespace imsm
