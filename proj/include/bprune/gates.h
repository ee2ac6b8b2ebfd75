// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "bprune/adamw.h"
#include "bprune/dataset.h"
#include "bprune/model.h"
#include "bprune/projection.h"
#include "json.hpp"

namespace bprune {

double sigmoid(double x);

// Scores s over the registry; p = sigmoid(s / tau) is derived on demand.
struct GateState {
    std::vector<double> scores;
    double tau = 1.5;
    AdamW optimizer;

    GateState(std::size_t n, double tau, AdamWConfig adam);
    std::vector<double> probabilities() const;
};

// Multiplier vars whose forward value is the hard mask and whose backward is
// the identity into per-layer probability leaves. Units outside the registry
// stay ungated.
template <typename T>
struct SurrogateGates {
    HookVars hooks;
    std::vector<Var> ffn_p;  // probability leaves (invalid when not gated)
    std::vector<Var> kv_p;
};

template <typename T>
SurrogateGates<T> surrogate_gates(Tape<T>& tape, const HardMask& mask, std::span<const double> p,
                                  const PrunableRegistry& registry);

// Gathers dL/dz over the registry from the probability leaves after backward().
template <typename T>
std::vector<double> gather_gate_grads(const Tape<T>& tape, const SurrogateGates<T>& gates,
                                      const PrunableRegistry& registry);

// dL/ds = (1 / tau) * dL/dz * p * (1 - p).
std::vector<double> score_gradient(std::span<const double> dl_dz, std::span<const double> p, double tau);

// Per-layer hook multipliers equal to the mask (1 kept, 0 pruned).
template <typename T>
GateHooks<T> hooks_from_mask(const Weights<T>& w, std::span<const std::uint8_t> mask, const PrunableRegistry& registry);

struct StabilityTrace {
    int interval = 0;
    std::vector<int> steps;  // step whose forward mask was captured
    std::vector<Mask> snapshots;
};

struct KindStability {
    UnitKind kind = UnitKind::ffn_channel;
    std::vector<double> series;
};

// Fraction of units (per kind) whose kept state is unchanged between consecutive snapshots.
std::vector<KindStability> mask_stability(const StabilityTrace& trace, const PrunableRegistry& registry);
// Same, over all units regardless of kind.
std::vector<double> overall_stability(const StabilityTrace& trace);

// Mean of |p - 1/2|.
double polarization(std::span<const double> p);

struct GateConfig {
    double tau = 1.5;
    AdamWConfig adam{};
    int epochs = 4;
    int snapshot_interval = 0;  // 0: 200, or 50 for runs under 1000 steps
    RankingRule rule{};
    ScanRule scan = ScanRule::skip;
    std::uint64_t seed = 0;
    std::optional<std::vector<double>> initial_scores;
};

void to_json(nlohmann::json& j, const GateConfig& c);

struct GateStep {
    int step = 0;
    double loss = 0.0;
    const HardMask* mask = nullptr;
    std::span<const double> p;
};

struct GateResult {
    GateState state;
    HardMask final_mask;
    StabilityTrace trace;
    std::vector<double> losses;
    std::vector<double> polarization;  // per step, before the update
    std::vector<std::int64_t> cost_ticks;
    std::vector<int> guard_counts;     // per step
    std::vector<int> eviction_counts;  // per step
    double projection_seconds = 0.0;
    double total_seconds = 0.0;

    nlohmann::json log(const PrunableRegistry& registry, const BudgetSpec& budget) const;
};

int resolve_snapshot_interval(int requested, int total_steps);

// Each step projects p to a feasible mask, runs the surrogate-gated forward,
// back-propagates through the straight-through gates into the scores and takes
// one AdamW step on them. Backbone weights are only read. The final mask
// projects the final probabilities with the training rule, except that a
// Gumbel run's final mask is the noise-free SCORE_P projection.
GateResult train_gates(const Weights<float>& weights, const PrunableRegistry& registry, const BudgetSpec& budget,
                       const TokenDataset& data, const GateConfig& config,
                       const std::function<void(const GateStep&)>& on_step = {});

}  // namespace bprune
