#pragma once

// Single-file weight archive: magic, a JSON header (config, metadata, tensor
// directory), then raw float32 tensor payloads in directory order.

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "tlm/nn.hpp"

namespace tlm {

struct NamedTensor {
  std::string name;
  Eigen::MatrixXf data;
};

struct CheckpointData {
  nlohmann::json config;  // model architecture, enough to rebuild the module
  nlohmann::json meta;    // stage tag, epochs, selection metrics
  std::vector<NamedTensor> tensors;

  const Eigen::MatrixXf* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::filesystem::path& path);

// Every parameter in the store, in registration order, cast to float32.
template <typename S>
std::vector<NamedTensor> snapshot_params(const nn::ParamStore<S>& ps) {
  std::vector<NamedTensor> out;
  out.reserve(ps.items.size());
  for (const auto& [name, v] : ps.items) {
    out.push_back({name, v->value.template cast<float>()});
  }
  return out;
}

// Strict restore: the store and the archive must hold exactly the same names
// with matching shapes. Params whose names start with an entry of
// `skip_prefixes` are exempt on the store side (adapter-free loads).
template <typename S>
void load_params(const CheckpointData& data, nn::ParamStore<S>& ps) {
  require(data.tensors.size() == ps.items.size(),
          "checkpoint: archive holds " + std::to_string(data.tensors.size()) +
              " tensors but the model has " + std::to_string(ps.items.size()) +
              " parameters");
  for (auto& [name, v] : ps.items) {
    const Eigen::MatrixXf* t = data.find(name);
    require(t != nullptr, "checkpoint: parameter '" + name + "' missing from archive");
    require(t->rows() == v->value.rows() && t->cols() == v->value.cols(),
            "checkpoint: parameter '" + name + "' is " + std::to_string(t->rows()) + "x" +
                std::to_string(t->cols()) + " in the archive, expected " +
                std::to_string(v->value.rows()) + "x" + std::to_string(v->value.cols()));
    v->value = t->template cast<S>();
  }
}

// Restores only parameters under `prefix`; every such parameter must be
// present in the archive. Used for the external pretrained-backbone slot.
template <typename S>
void load_params_prefix(const CheckpointData& data, nn::ParamStore<S>& ps,
                        const std::string& prefix) {
  int loaded = 0;
  for (auto& [name, v] : ps.items) {
    if (name.rfind(prefix, 0) != 0) continue;
    const Eigen::MatrixXf* t = data.find(name);
    require(t != nullptr, "checkpoint: parameter '" + name + "' missing from archive");
    require(t->rows() == v->value.rows() && t->cols() == v->value.cols(),
            "checkpoint: parameter '" + name + "' shape mismatch");
    v->value = t->template cast<S>();
    ++loaded;
  }
  require(loaded > 0, "checkpoint: no parameters under prefix '" + prefix + "'");
}

}  // namespace tlm
