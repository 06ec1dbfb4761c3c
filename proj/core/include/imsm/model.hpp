#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "imsm/adapters.hpp"
#include "imsm/tensor.hpp"

namespace imsm {

struct ModelConfig {
  int d_model = 64;
  int n_layers = 4;
  int n_heads = 4;
  int d_ff = 256;
  int vocab_size = 0;
  int max_seq_len = 128;
  double rope_base = 10000.0;

  void validate() const;
  int d_head() const { return d_model / n_heads; }
};

// The frozen backbone. Pre-norm residual blocks, rmsnorm, rotary positions,
// no biases. The output head w_out is untied from the embedding and stays
// frozen alongside everything else during PEFT runs.
struct BaseWeights {
  struct Layer {
    Tensor wq, wk, wv, wo;   // d x d
    Tensor w_up;             // d x d_ff
    Tensor w_down;           // d_ff x d
    Tensor norm_attn, norm_mlp;  // 1 x d
  };

  ModelConfig config;
  Tensor embedding;   // |V| x d
  std::vector<Layer> layers;
  Tensor final_norm;  // 1 x d
  Tensor w_out;       // d x |V|

  static BaseWeights init(const ModelConfig& config, std::uint64_t seed);

  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  std::vector<Tensor> all_tensors() const;
  void set_requires_grad(bool v);
  void zero_grads();

  // FNV-1a over the raw bytes of every tensor; detects any mutation.
  std::uint64_t checksum() const;
};

// Appended key/value rows per layer (keys post-rotation, heads
// concatenated). Appending is the only mutation; one cache per session.
class AttnCache {
 public:
  explicit AttnCache(const ModelConfig& config);

  int length() const { return length_; }
  int layer_count() const { return static_cast<int>(keys_.size()); }

  // Used by forward_hidden.
  void append(int layer, const Tensor& k_rows, const Tensor& v_rows);
  const std::vector<double>& keys(int layer) const { return keys_[layer]; }
  const std::vector<double>& vals(int layer) const { return vals_[layer]; }
  void note_advance(int new_tokens) { length_ += new_tokens; }

 private:
  std::vector<std::vector<double>> keys_, vals_;
  int d_ = 0;
  int length_ = 0;
};

// Last-layer post-final-norm hidden states for the new tokens. With
// adapters == nullptr this is the frozen branch M; attached adapters make
// it the tuned branch M'. A cache makes the call incremental (inference
// only: tape must then be null).
Tensor forward_hidden(const std::vector<int>& tokens, const BaseWeights& w,
                      const AdapterSet* adapters = nullptr,
                      AttnCache* cache = nullptr, Tape* tape = nullptr);

// logits = h · w_out, no bias.
Tensor lm_head(const Tensor& h, const Tensor& w_out, Tape* tape = nullptr);

// Default LoRA placement: attention q and v projections in every layer.
AdapterSet make_lora_adapters(const ModelConfig& config, int rank,
                              double alpha, std::uint64_t seed,
                              const std::vector<std::string>& site_kinds = {
                                  "wq", "wv"});

// (IA)^3 placement: key, value, and MLP down-projection outputs.
AdapterSet make_ia3_adapters(const ModelConfig& config);

}  // namespace imsm
