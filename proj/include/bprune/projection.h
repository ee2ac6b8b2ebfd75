// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bprune/errors.h"
#include "bprune/registry.h"

namespace bprune {

enum class RankingVariant { score_p, value_per_cost, gumbel_topk };
enum class ScanRule { skip, halt };

const char* ranking_name(RankingVariant v);
RankingVariant parse_ranking(const std::string& text);
const char* scan_name(ScanRule s);
ScanRule parse_scan(const std::string& text);

struct RankingRule {
    RankingVariant variant = RankingVariant::score_p;
    std::optional<std::uint64_t> gumbel_seed;
    double gumbel_scale = 1.0;
};

// The budget cannot hold one unit per group.
class InfeasibleBudget : public InvariantError {
public:
    using InvariantError::InvariantError;
};

struct HardMask {
    Mask keep;
    std::int64_t cost_ticks = 0;
    Rational consumed_cost;
    std::vector<std::size_t> guard_interventions;  // units forced on
    std::vector<std::size_t> evictions;            // units dropped to restore feasibility
};

// Ranking keys for a rule: p, p / c, or logit(p) + scale * Gumbel(0, 1).
std::vector<double> ranking_keys(std::span<const double> p, const PrunableRegistry& registry, const RankingRule& rule);

// Sorts units by key (descending, ties by ascending index), scans once keeping
// each unit that fits the remaining budget (or stopping at the first that does
// not, under ScanRule::halt), forces the highest-p unit of every empty group
// back on, then evicts the lowest-p kept units that are not the last of their
// group until the cost fits again.
HardMask project(std::span<const double> p, const PrunableRegistry& registry, const BudgetSpec& budget,
                 const RankingRule& rule = {}, ScanRule scan = ScanRule::skip);

struct KindAllocation {
    UnitKind kind = UnitKind::ffn_channel;
    std::size_t kept = 0;
    std::size_t total = 0;
    double keep_ratio = 0.0;
    double budget_share = 0.0;  // share of the consumed cost
    double mean_p = 0.0;        // over kept units
};

struct RuleAllocation {
    RankingVariant variant = RankingVariant::score_p;
    Rational consumed_cost;
    std::vector<KindAllocation> kinds;  // FFN first, then KV (kinds present in the registry)

    const KindAllocation* find(UnitKind kind) const;
};

// Per-kind allocation under SCORE_P and VALUE_PER_COST.
std::vector<RuleAllocation> selection_bias_report(std::span<const double> p, const PrunableRegistry& registry,
                                                  const BudgetSpec& budget);
RuleAllocation allocation_of(const HardMask& mask, std::span<const double> p, const PrunableRegistry& registry,
                             RankingVariant variant);

struct ProjectionTiming {
    std::size_t n = 0;
    int trials = 0;
    double mean_ms = 0.0;
    double min_ms = 0.0;
    std::optional<double> step_fraction;  // mean_ms / reference step time
};

// Wall clock of project() on a synthetic registry of n units (FFN-like unit
// costs with one 80/3-cost unit every 129) and seeded random p.
ProjectionTiming projection_timer(std::size_t n, int trials, std::optional<double> reference_step_ms = std::nullopt,
                                  std::uint64_t seed = 0);

}  // namespace bprune
