// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "bprune/checkpoint.h"
#include "json.hpp"

namespace bprune {

// Random LLaMA-style initialization: N(0, 0.02) projections and embeddings,
// residual output projections scaled by 1/sqrt(2 * n_layers), unit norms.
Checkpoint init_checkpoint(const ModelConfig& config, std::uint64_t seed);

struct PretrainConfig {
    int steps = 2000;
    double lr = 3e-3;
    int warmup = 100;
    double min_lr_fraction = 0.1;  // cosine floor
    double weight_decay = 0.01;
    double grad_clip = 1.0;
    std::size_t window = 128;
    std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const PretrainConfig& c);

struct PretrainResult {
    Checkpoint checkpoint;
    std::vector<double> losses;  // per step
};

// AdamW on random training windows, batch 1. Throws NumericalError with the
// failing step when the loss or a gradient stops being finite.
PretrainResult pretrain_backbone(const ModelConfig& config, std::span<const int> corpus, const PretrainConfig& cfg,
                                 const std::function<void(int, double)>& on_step = {});

}  // namespace bprune
