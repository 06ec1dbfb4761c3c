#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "imsm/fusion.hpp"
#include "imsm/model.hpp"
#include "imsm/tensor.hpp"

namespace imsm {

// Archive layout: one JSON header line (kind, metadata, named tensor index
// with shapes), a newline, then each tensor's values as raw little-endian
// 64-bit floats in index order.

void save_archive(const std::string& path, const std::string& kind,
                  const nlohmann::json& meta,
                  const std::vector<std::pair<std::string, Tensor>>& tensors);

struct Archive {
  std::string kind;
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
};

Archive load_archive(const std::string& path);

void save_model(const std::string& path, const BaseWeights& weights);
BaseWeights load_model(const std::string& path);

void save_adapters(const std::string& path, const AdapterSet& set,
                   int lora_rank = 0, double lora_alpha = 0.0);
AdapterSet load_adapters(const std::string& path);

void save_gate(const std::string& path, const GateParams& gate,
               FusionMode mode);
// Returns the gate and writes the stored mode through `mode`.
GateParams load_gate(const std::string& path, FusionMode& mode);

}  // namespace imsm
