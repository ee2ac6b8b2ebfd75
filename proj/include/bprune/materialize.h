// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bprune/checkpoint.h"
#include "bprune/registry.h"
#include "json.hpp"

namespace bprune {

struct SliceShapes {
    Shape q, k, v, o, gate, up, down;
};

struct SlicePlan {
    ModelConfig config;
    Selection retained;  // ascending per layer

    static SlicePlan from_mask(const Mask& mask, const PrunableRegistry& registry);
    static SlicePlan from_selection(const ModelConfig& config, Selection retained);

    std::vector<SliceShapes> shapes() const;
    std::int64_t param_count() const;
};

using LayerScales = std::vector<std::vector<float>>;

// Slices every projection to the retained units and folds the optional
// per-unit scales into the down-projection columns and V row-blocks. The
// source checkpoint must be unsliced; gate and scale parameters are dropped.
Checkpoint materialize(const Checkpoint& ckpt, const SlicePlan& plan, const LayerScales* gamma_ffn = nullptr,
                       const LayerScales* gamma_kv = nullptr, const std::string& keep_ratio = "",
                       const nlohmann::json& run = nlohmann::json::object());

// Deviations between the gated original and the pruned checkpoint. Both
// checkpoints hold f32 weights; max_abs runs both forwards in f32 arithmetic,
// max_abs_f64 runs them in f64.
struct EquivalenceReport {
    double max_abs = 0.0;
    double max_rel = 0.0;  // max_abs relative to the largest reference logit magnitude
    double max_abs_f64 = 0.0;
    double tolerance = 1e-5;
    int probes = 0;
    bool pass = false;      // max_abs <= tolerance
    bool pass_f64 = false;  // max_abs_f64 <= tolerance
};

void to_json(nlohmann::json& j, const EquivalenceReport& r);

// Compares hooked logits of the original model against the pruned model on
// random byte sequences.
EquivalenceReport verify_equivalence(const Checkpoint& original, const SlicePlan& plan, const LayerScales* gamma_ffn,
                                     const LayerScales* gamma_kv, const Checkpoint& pruned, int n_probes,
                                     double tolerance = 1e-5, std::uint64_t seed = 0, std::size_t probe_length = 64);

}  // namespace bprune
