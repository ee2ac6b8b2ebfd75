// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bprune/dataset.h"
#include "bprune/model.h"
#include "bprune/projection.h"
#include "bprune/registry.h"
#include "json.hpp"

namespace bprune {

// Mean token cross-entropy over every window (windows have equal length).
double mean_loss(const Weights<float>& weights, const GateHooks<float>* hooks, const TokenDataset& data);
double perplexity(const Weights<float>& weights, const GateHooks<float>* hooks, const TokenDataset& data);
// Uses the checkpoint's pending gating, if any.
double perplexity(const Checkpoint& ckpt, const TokenDataset& data);

// Published backbone shapes plus the toy model.
std::vector<std::string> preset_names();
ModelConfig preset(const std::string& name);

inline constexpr double kMiB = 1024.0 * 1024.0;

struct MemoryEstimate {
    std::int64_t params = 0;
    double weights_mib = 0.0;
    double kv_cache_mib = 0.0;
    std::int64_t seq_len = 0;
    std::int64_t batch = 0;
    std::int64_t bytes_per_scalar = 0;
    std::vector<int> kv_groups_per_layer;
};

void to_json(nlohmann::json& j, const MemoryEstimate& m);

// K and V caches: 2 * retained_kv_groups * d_h * T * batch * bytes.
double kv_cache_mib(std::int64_t retained_kv_groups, int head_dim, std::int64_t seq_len, std::int64_t batch,
                    std::int64_t bytes_per_scalar);

MemoryEstimate estimate_memory(const ModelConfig& config, const std::optional<Selection>& retained,
                               std::int64_t seq_len, std::int64_t batch, std::int64_t bytes_per_scalar);

struct LayerRetention {
    int layer = 0;
    std::size_t ffn_kept = 0, ffn_total = 0;
    std::size_t kv_kept = 0, kv_total = 0;
    double ffn_ratio = 1.0;
    double kv_ratio = 1.0;
};

struct RetentionReport {
    std::size_t ffn_kept = 0, ffn_total = 0;
    std::size_t kv_kept = 0, kv_total = 0;
    double ffn_ratio = 1.0;
    double kv_ratio = 1.0;
    std::vector<LayerRetention> layers;

    std::string csv() const;
};

void to_json(nlohmann::json& j, const RetentionReport& r);

// Keep ratios per kind, globally and per layer. Units outside the registry
// (target filter) count as retained.
RetentionReport retention_report(std::span<const std::uint8_t> mask, const PrunableRegistry& registry);
RetentionReport retention_report(const ModelConfig& config, const Selection& retained);

nlohmann::json allocation_json(const std::vector<RuleAllocation>& rows);
std::string allocation_csv(const std::vector<RuleAllocation>& rows);

}  // namespace bprune
