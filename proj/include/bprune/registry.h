// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bprune/model_config.h"
#include "bprune/rational.h"

namespace bprune {

enum class UnitKind { ffn_channel, kv_group };
enum class TargetFilter { both, ffn_only, kv_only };

const char* kind_name(UnitKind kind);
const char* target_name(TargetFilter target);
TargetFilter parse_target(const std::string& text);

struct PrunableUnit {
    std::size_t global_index = 0;
    int layer = 0;
    UnitKind kind = UnitKind::ffn_channel;
    int local_index = 0;
    Rational cost;
};

// Units sharing a (layer, kind); the projection keeps at least one per group.
struct UnitGroup {
    int layer = 0;
    UnitKind kind = UnitKind::ffn_channel;
    std::vector<std::size_t> members;  // ascending global indices
};

// Cost of one KV head group in FFN-channel units: (2G + 2) * d_h / 3.
Rational alpha(const ModelConfig& config);

// Flat, immutable list of prunable units ordered by (layer, FFN before KV,
// local index). Costs are exact rationals; `ticks` are the same costs scaled
// by the common denominator so feasibility checks are integer comparisons.
class PrunableRegistry {
public:
    static PrunableRegistry from_config(const ModelConfig& config, Rational cost_scale = 1,
                                        TargetFilter target = TargetFilter::both);
    // Arbitrary costs; group_ids assigns each unit to a group (layer = group id,
    // kind = FFN). Used for small hand-built instances.
    static PrunableRegistry from_units(std::span<const Rational> costs, std::span<const int> group_ids);

    std::size_t size() const { return units_.size(); }
    const PrunableUnit& unit(std::size_t i) const { return units_.at(i); }
    const std::vector<PrunableUnit>& units() const { return units_; }
    const std::vector<UnitGroup>& groups() const { return groups_; }
    std::size_t group_of(std::size_t i) const { return group_of_.at(i); }
    std::optional<std::size_t> index_of(int layer, UnitKind kind, int local_index) const;

    std::int64_t ticks(std::size_t i) const { return ticks_[i]; }
    std::span<const std::int64_t> ticks() const { return ticks_; }
    std::int64_t tick_denominator() const { return tick_den_; }
    std::int64_t total_ticks() const { return total_ticks_; }
    Rational total_cost() const { return Rational(total_ticks_, tick_den_); }
    Rational from_ticks(std::int64_t t) const { return Rational(t, tick_den_); }

    std::size_t count(UnitKind kind) const;
    const std::optional<ModelConfig>& config() const { return config_; }
    TargetFilter target() const { return target_; }
    Rational cost_scale() const { return cost_scale_; }

private:
    void finalize();

    std::vector<PrunableUnit> units_;
    std::vector<UnitGroup> groups_;
    std::vector<std::size_t> group_of_;
    std::vector<std::int64_t> ticks_;
    std::int64_t tick_den_ = 1;
    std::int64_t total_ticks_ = 0;
    std::optional<ModelConfig> config_;
    TargetFilter target_ = TargetFilter::both;
    Rational cost_scale_ = 1;
};

struct BudgetSpec {
    Rational keep_ratio = 1;
    Rational cost_scale = 1;
    TargetFilter target_filter = TargetFilter::both;
    // Derived by build_registry / make_budget.
    Rational total_cost;
    Rational budget;
    std::int64_t budget_ticks = 0;  // floor(budget * tick_denominator)

    bool admits(std::int64_t cost_ticks) const { return cost_ticks <= budget_ticks; }
};

// B = keep_ratio * total cost, exactly. Throws UsageError unless 0 < keep_ratio <= 1.
BudgetSpec make_budget(const PrunableRegistry& registry, Rational keep_ratio);
// Budget given as an absolute cost (0 < B <= total cost).
BudgetSpec absolute_budget(const PrunableRegistry& registry, Rational budget);

struct RegistryBuild {
    PrunableRegistry registry;
    BudgetSpec budget;
};

// Throws UsageError when the filter leaves no units.
RegistryBuild build_registry(const ModelConfig& config, const BudgetSpec& spec);

// Binary keep-vector over the registry (1 = kept).
using Mask = std::vector<std::uint8_t>;

std::int64_t mask_ticks(std::span<const std::uint8_t> mask, const PrunableRegistry& registry);
Rational mask_cost(std::span<const std::uint8_t> mask, const PrunableRegistry& registry);

// Retained indices per layer. Units excluded by the target filter are always retained.
Selection selection_from_mask(std::span<const std::uint8_t> mask, const PrunableRegistry& registry);
Mask mask_from_selection(const Selection& selection, const PrunableRegistry& registry);

}  // namespace bprune
