// SPDX-License-Identifier: Apache-2.0
#include "bprune/model_config.h"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

#include "bprune/errors.h"

namespace bprune {

void ModelConfig::validate() const {
    if (n_layers < 0 || d_model <= 0 || n_heads <= 0 || n_kv_heads <= 0 || head_dim <= 0 || ffn_dim <= 0 ||
        vocab_size <= 0) {
        throw UsageError("model config: all dimensions must be positive (layers may be zero)");
    }
    if (d_model != n_heads * head_dim) {
        throw UsageError("model config: d_model " + std::to_string(d_model) + " != n_heads * head_dim (" +
                         std::to_string(n_heads) + " * " + std::to_string(head_dim) + ")");
    }
    if (n_heads % n_kv_heads != 0) {
        throw UsageError("model config: n_heads " + std::to_string(n_heads) + " not divisible by n_kv_heads " +
                         std::to_string(n_kv_heads));
    }
    if (head_dim % 2 != 0) {
        throw UsageError("model config: head_dim must be even for rotary embeddings");
    }
    if (!(norm_eps > 0.0) || !(rope_base > 0.0)) {
        throw UsageError("model config: norm_eps and rope_base must be positive");
    }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"n_layers", c.n_layers},     {"d_model", c.d_model},   {"n_heads", c.n_heads},
                       {"n_kv_heads", c.n_kv_heads}, {"head_dim", c.head_dim}, {"ffn_dim", c.ffn_dim},
                       {"vocab_size", c.vocab_size}, {"rope_base", c.rope_base}, {"norm_eps", c.norm_eps}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("n_layers").get_to(c.n_layers);
    j.at("d_model").get_to(c.d_model);
    j.at("n_heads").get_to(c.n_heads);
    j.at("n_kv_heads").get_to(c.n_kv_heads);
    j.at("head_dim").get_to(c.head_dim);
    j.at("ffn_dim").get_to(c.ffn_dim);
    j.at("vocab_size").get_to(c.vocab_size);
    c.rope_base = j.value("rope_base", 10000.0);
    c.norm_eps = j.value("norm_eps", 1e-5);
}

Selection full_selection(const ModelConfig& config) {
    Selection sel(static_cast<std::size_t>(config.n_layers));
    for (auto& layer : sel) {
        layer.ffn.resize(static_cast<std::size_t>(config.ffn_dim));
        std::iota(layer.ffn.begin(), layer.ffn.end(), 0);
        layer.kv.resize(static_cast<std::size_t>(config.n_kv_heads));
        std::iota(layer.kv.begin(), layer.kv.end(), 0);
    }
    return sel;
}

namespace {

void check_indices(const std::vector<int>& idx, int limit, int layer, const char* what) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= limit) {
            throw std::out_of_range(std::string("selection: ") + what + " index " + std::to_string(idx[i]) +
                                    " out of range in layer " + std::to_string(layer));
        }
        if (i > 0 && idx[i] <= idx[i - 1]) {
            throw std::invalid_argument(std::string("selection: ") + what + " indices must be strictly ascending");
        }
    }
}

}  // namespace

void validate_selection(const ModelConfig& config, const Selection& selection) {
    if (selection.size() != static_cast<std::size_t>(config.n_layers)) {
        throw std::invalid_argument("selection: expected " + std::to_string(config.n_layers) + " layers, got " +
                                    std::to_string(selection.size()));
    }
    for (std::size_t l = 0; l < selection.size(); ++l) {
        check_indices(selection[l].ffn, config.ffn_dim, static_cast<int>(l), "ffn");
        check_indices(selection[l].kv, config.n_kv_heads, static_cast<int>(l), "kv");
    }
}

std::int64_t param_count(const ModelConfig& config, const std::optional<Selection>& retained) {
    config.validate();
    if (retained) validate_selection(config, *retained);
    const std::int64_t d = config.d_model;
    const std::int64_t dh = config.head_dim;
    const std::int64_t g = config.group_size();
    std::int64_t total = 2 * static_cast<std::int64_t>(config.vocab_size) * d + d;
    for (int l = 0; l < config.n_layers; ++l) {
        const std::int64_t ffn = retained ? static_cast<std::int64_t>((*retained)[l].ffn.size()) : config.ffn_dim;
        const std::int64_t kv = retained ? static_cast<std::int64_t>((*retained)[l].kv.size()) : config.n_kv_heads;
        const std::int64_t heads = kv * g;
        total += d * heads * dh;       // q
        total += 2 * d * kv * dh;      // k, v
        total += heads * dh * d;       // o
        total += 3 * d * ffn;          // gate, up, down
        total += 2 * d;                // norms
    }
    return total;
}

void to_json(nlohmann::json& j, const LayerSelection& s) {
    j = nlohmann::json{{"ffn", s.ffn}, {"kv", s.kv}};
}

void from_json(const nlohmann::json& j, LayerSelection& s) {
    j.at("ffn").get_to(s.ffn);
    j.at("kv").get_to(s.kv);
}

}  // namespace bprune
