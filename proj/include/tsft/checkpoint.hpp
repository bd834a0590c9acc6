#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsft/backbone.hpp"

namespace tsft {

using json = nlohmann::json;

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

// Directory layout: manifest.json + weights.bin. The manifest holds
// {"tensors": [{name, shape, dtype: "f32", byte_offset}], ...meta}; weights.bin
// is the little-endian concatenation of the tensors in manifest order.
void save_checkpoint(const std::filesystem::path& dir, const std::vector<NamedTensor>& tensors, json meta = json::object());

struct Checkpoint {
  json manifest;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

Checkpoint load_checkpoint(const std::filesystem::path& dir);

// 64-bit FNV-1a over raw bytes, as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);
std::string file_hash(const std::filesystem::path& file);

json to_json(const BackboneConfig& cfg);
BackboneConfig backbone_config_from_json(const json& j);

template <typename S>
std::vector<NamedTensor> to_named_tensors(const ParamRefs<S>& params) {
  std::vector<NamedTensor> out;
  for (const auto* p : params) {
    Mat<float> v = p->value.template cast<float>();
    out.push_back({p->name, Tensor<float>::from_matrix(v, p->shape)});
  }
  return out;
}

// Copies stored values into params by name; every param must be present with
// a matching element count unless allow_missing is set.
template <typename S>
void assign_from(const Checkpoint& ckpt, const ParamRefs<S>& params, bool allow_missing = false) {
  for (auto* p : params) {
    const NamedTensor* t = ckpt.find(p->name);
    if (!t) {
      if (allow_missing) continue;
      throw std::runtime_error("checkpoint: missing tensor " + p->name);
    }
    if (t->tensor.shape() != p->shape) throw ShapeError("checkpoint: shape mismatch for " + p->name);
    p->value = Eigen::Map<const Mat<float>>(t->tensor.data().data(), p->value.rows(), p->value.cols()).template cast<S>();
  }
}

void save_backbone(const std::filesystem::path& dir, Backbone<float>& backbone, json meta = json::object());
Backbone<float> load_backbone(const std::filesystem::path& dir);

}  // namespace tsft
