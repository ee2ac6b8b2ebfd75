// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "bprune/adamw.h"
#include "bprune/dataset.h"
#include "bprune/model.h"
#include "json.hpp"

namespace bprune {

struct CalibrationConfig {
    AdamWConfig adam{};
    int epochs = 1;
    std::uint64_t seed = 0;
    double anomaly_threshold = 2.0;  // flag |gamma - 1| above this
    double regression_tolerance = 1e-6;
    // Calibration loss at gamma = 1 when already known (skips one evaluation pass).
    std::optional<double> initial_loss;
};

void to_json(nlohmann::json& j, const CalibrationConfig& c);

struct ScaleAnomaly {
    int layer = 0;
    bool kv = false;
    int local_index = 0;
    double gamma = 1.0;
};

// One scale per retained unit, aligned with retained[l].ffn / retained[l].kv.
struct ScaleState {
    Selection retained;
    std::vector<std::vector<double>> gamma_ffn;
    std::vector<std::vector<double>> gamma_kv;
    double initial_loss = 0.0;  // mean calibration loss with gamma = 1
    double final_loss = 0.0;
    bool reverted = false;      // optimization made the calibration loss worse; gamma reset to 1
    int steps = 0;
    std::vector<double> losses;  // per step
    std::vector<ScaleAnomaly> anomalies;

    std::size_t trainable() const;
    std::vector<std::vector<float>> ffn_f32() const;
    std::vector<std::vector<float>> kv_f32() const;
    GateHooks<float> hooks(const ModelConfig& config) const;
};

ScaleState identity_scales(const Selection& retained);

// AdamW on the scales of retained units with the backbone and mask fixed.
// The seed orders the windows. If the final calibration loss exceeds the
// initial one by more than the tolerance, the scales are reset to 1.
ScaleState calibrate_scales(const Weights<float>& weights, const Selection& retained, const TokenDataset& data,
                            const CalibrationConfig& config);

// Mean token loss over `data` with hooks built from `retained` and `scales`.
double masked_loss(const Weights<float>& weights, const ScaleState& scales, const TokenDataset& data);

}  // namespace bprune
