#include "imsm/adapters.hpp"

#include "imsm/fusion.hpp"

namespace imsm {

void AdapterSet::add(LoraAdapter adapter) {
  if (lora_.count(adapter.site) || ia3_.count(adapter.site))
    throw UsageError("adapter set: duplicate site " + adapter.site);
  lora_.emplace(adapter.site, std::move(adapter));
}

void AdapterSet::add(Ia3Adapter adapter) {
  if (lora_.count(adapter.site) || ia3_.count(adapter.site))
    throw UsageError("adapter set: duplicate site " + adapter.site);
  ia3_.emplace(adapter.site, std::move(adapter));
}

const LoraAdapter* AdapterSet::lora_at(const std::string& site) const {
  auto it = lora_.find(site);
  return it == lora_.end() ? nullptr : &it->second;
}

const Ia3Adapter* AdapterSet::ia3_at(const std::string& site) const {
  auto it = ia3_.find(site);
  return it == ia3_.end() ? nullptr : &it->second;
}

std::vector<Tensor> AdapterSet::trainable_tensors() const {
  std::vector<Tensor> out;
  for (const auto& [site, a] : lora_) {
    out.push_back(a.a);
    out.push_back(a.b);
  }
  for (const auto& [site, a] : ia3_) out.push_back(a.scale);
  return out;
}

std::vector<std::pair<std::string, Tensor>> AdapterSet::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [site, a] : lora_) {
    out.emplace_back(site + ".lora_a", a.a);
    out.emplace_back(site + ".lora_b", a.b);
  }
  for (const auto& [site, a] : ia3_) out.emplace_back(site + ".ia3", a.scale);
  return out;
}

void AdapterSet::set_requires_grad(bool v) {
  for (Tensor t : trainable_tensors()) t.set_requires_grad(v);
}

void AdapterSet::zero_grads() {
  for (Tensor t : trainable_tensors()) t.zero_grad();
}

Tensor lora_apply(const Tensor& x, const Tensor& w0,
                  const LoraAdapter& adapter, Tape* tape) {
  if (adapter.b.cols() != adapter.rank || adapter.a.rows() != adapter.rank)
    throw DimensionError("lora_apply: factor shapes disagree with rank");
  if (adapter.b.rows() != w0.rows() || adapter.a.cols() != w0.cols())
    throw DimensionError("lora_apply: adapter does not match site weight");
  Tensor base = matmul(x, w0, tape);
  Tensor low = matmul(x, adapter.b, tape);
  Tensor delta = scale(matmul(low, adapter.a, tape),
                       adapter.alpha / adapter.rank, tape);
  return add(base, delta, tape);
}

Tensor lora_merge(const Tensor& w0, const LoraAdapter& adapter) {
  return add(w0, scale(matmul(adapter.b, adapter.a),
                       adapter.alpha / adapter.rank));
}

Tensor ia3_apply(const Tensor& site_output, const Ia3Adapter& adapter,
                 Tape* tape) {
  if (adapter.scale.cols() != site_output.cols())
    throw DimensionError("ia3_apply: scale length mismatch");
  Tensor rows = repeat_rows(adapter.scale, site_output.rows(), tape);
  return elem_mul(site_output, rows, tape);
}

std::int64_t trainable_param_count(const AdapterSet& set,
                                   const GateParams* gate) {
  std::int64_t n = 0;
  for (const Tensor& t : set.trainable_tensors())
    n += static_cast<std::int64_t>(t.size());
  if (gate)
    for (const Tensor& t : gate->trainable_tensors())
      n += static_cast<std::int64_t>(t.size());
  return n;
}

std::int64_t gate_param_count(int d, int rank, bool query_aware) {
  const std::int64_t in = query_aware ? 4LL * d : 2LL * d;
  return in * rank + static_cast<std::int64_t>(rank) * d;
}

}  // namespace imsm
