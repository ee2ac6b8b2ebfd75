// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"

namespace bprune {

// LLaMA-style decoder shape. Invariants: d_model == n_heads * head_dim and
// n_heads % n_kv_heads == 0 (query-group size G = n_heads / n_kv_heads).
struct ModelConfig {
    int n_layers = 4;
    int d_model = 64;
    int n_heads = 8;
    int n_kv_heads = 2;
    int head_dim = 8;
    int ffn_dim = 256;
    int vocab_size = 256;
    double rope_base = 10000.0;
    double norm_eps = 1e-5;

    int group_size() const { return n_heads / n_kv_heads; }
    void validate() const;

    // 4 layers, d=64, H=8, H_kv=2, d_h=8, ffn=256, byte vocabulary.
    static ModelConfig toy() { return ModelConfig{}; }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Retained FFN channels and KV groups of one layer, ascending.
struct LayerSelection {
    std::vector<int> ffn;
    std::vector<int> kv;

    friend bool operator==(const LayerSelection&, const LayerSelection&) = default;
};

using Selection = std::vector<LayerSelection>;

Selection full_selection(const ModelConfig& config);
void validate_selection(const ModelConfig& config, const Selection& selection);

// Exact parameter total; with a selection, only sliced shapes are counted.
std::int64_t param_count(const ModelConfig& config, const std::optional<Selection>& retained = std::nullopt);

void to_json(nlohmann::json& j, const LayerSelection& s);
void from_json(const nlohmann::json& j, LayerSelection& s);

}  // namespace bprune
