#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "imsm/ops.hpp"
#include "imsm/tensor.hpp"

namespace imsm {

enum class AdapterKind { lora, ia3 };

// Low-rank adapter for one weight site: effective update
// dW = (alpha / rank) * B * A with B [d x rank] zero-initialized and
// A [rank x k] Gaussian, so a fresh adapter is an exact no-op.
struct LoraAdapter {
  std::string site;
  Tensor a;  // rank x k
  Tensor b;  // d x rank
  int rank = 0;
  double alpha = 0.0;
};

// Learned per-dimension rescaling of a site's output, initialized to ones.
struct Ia3Adapter {
  std::string site;
  Tensor scale;  // 1 x dim
};

// All PEFT parameters of the tuned branch, keyed by site name
// ("layer3.wq" etc.). At most one adapter per site.
class AdapterSet {
 public:
  AdapterKind kind = AdapterKind::lora;

  void add(LoraAdapter adapter);
  void add(Ia3Adapter adapter);

  const LoraAdapter* lora_at(const std::string& site) const;
  const Ia3Adapter* ia3_at(const std::string& site) const;

  bool empty() const { return lora_.empty() && ia3_.empty(); }

  std::vector<Tensor> trainable_tensors() const;
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  void set_requires_grad(bool v);
  void zero_grads();

 private:
  std::map<std::string, LoraAdapter> lora_;
  std::map<std::string, Ia3Adapter> ia3_;
};

// x·W0 + (alpha/rank)·(x·B)·A, never materializing B·A.
Tensor lora_apply(const Tensor& x, const Tensor& w0,
                  const LoraAdapter& adapter, Tape* tape = nullptr);

// W0 + (alpha/rank)·B·A.
Tensor lora_merge(const Tensor& w0, const LoraAdapter& adapter);

// Elementwise scale of a site output by the learned vector.
Tensor ia3_apply(const Tensor& site_output, const Ia3Adapter& adapter,
                 Tape* tape = nullptr);

struct GateParams;  // fusion.hpp

// Exact count of optimizer-visible scalars; the gate adds 4d·r + r·d
// (2d·r + r·d when built without query means).
std::int64_t trainable_param_count(const AdapterSet& set,
                                   const GateParams* gate = nullptr);

// Closed form for the gate's own parameter count.
std::int64_t gate_param_count(int d, int rank, bool query_aware = true);

}  // namespace imsm
