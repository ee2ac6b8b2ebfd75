// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bprune/model_config.h"
#include "bprune/tensor.h"
#include "json.hpp"

namespace bprune {

// Pruning state attached to a checkpoint. Before folding, `retained` and the
// optional per-unit scales describe how the (full) weights are to be gated;
// after folding the tensors themselves have the sliced shapes.
struct PruningMetadata {
    std::string keep_ratio;   // exact decimal/rational literal
    Selection retained;
    bool folded = false;
    // Per-layer scales aligned with retained[l].ffn / retained[l].kv.
    std::optional<std::vector<std::vector<float>>> gamma_ffn;
    std::optional<std::vector<std::vector<float>>> gamma_kv;
    nlohmann::json run = nlohmann::json::object();  // producing-run seed, flags, hyperparameters
};

// Named f32 tensors in PyTorch layout ([out x in] for projections) plus the
// architecture description. Tensor shapes are fully determined by the config
// and, once folded, by the retained-index lists.
class Checkpoint {
public:
    ModelConfig config;
    std::map<std::string, Tensor<float>> tensors;
    std::optional<PruningMetadata> pruning;

    const Tensor<float>& tensor(const std::string& name) const;
    Tensor<float>& tensor(const std::string& name);

    // Structure physically present in the tensors (sliced after folding).
    Selection structure() const;
    // Selection to apply as gates at forward time (unfolded pruning metadata), if any.
    std::optional<Selection> pending_selection() const;

    std::int64_t tensor_param_count() const;

    // Throws ShapeError when a tensor is missing or has the wrong shape.
    void validate() const;

    static std::string layer_name(int layer, const char* leaf);
};

namespace tensor_names {
inline constexpr const char* embed = "model.embed_tokens";
inline constexpr const char* final_norm = "model.norm";
inline constexpr const char* lm_head = "lm_head";
inline constexpr const char* attn_norm = "input_layernorm";
inline constexpr const char* ffn_norm = "post_attention_layernorm";
inline constexpr const char* q_proj = "self_attn.q_proj";
inline constexpr const char* k_proj = "self_attn.k_proj";
inline constexpr const char* v_proj = "self_attn.v_proj";
inline constexpr const char* o_proj = "self_attn.o_proj";
inline constexpr const char* gate_proj = "mlp.gate_proj";
inline constexpr const char* up_proj = "mlp.up_proj";
inline constexpr const char* down_proj = "mlp.down_proj";
}  // namespace tensor_names

void to_json(nlohmann::json& j, const PruningMetadata& m);
void from_json(const nlohmann::json& j, PruningMetadata& m);

// Container: 8-byte magic "BPRUNECK", u64 LE manifest length, JSON manifest,
// zero padding to a 64-byte boundary, then little-endian f32 row-major blobs
// at the manifest's offsets (relative to the blob start).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace bprune
