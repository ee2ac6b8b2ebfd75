// SPDX-License-Identifier: Apache-2.0
#include "bprune/projection.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "bprune/rng.h"

namespace bprune {

const char* ranking_name(RankingVariant v) {
    switch (v) {
        case RankingVariant::score_p: return "p";
        case RankingVariant::value_per_cost: return "p-over-c";
        case RankingVariant::gumbel_topk: return "gumbel";
    }
    return "?";
}

RankingVariant parse_ranking(const std::string& text) {
    if (text == "p") return RankingVariant::score_p;
    if (text == "p-over-c") return RankingVariant::value_per_cost;
    if (text == "gumbel") return RankingVariant::gumbel_topk;
    throw UsageError("unknown ranking rule '" + text + "' (expected p, p-over-c or gumbel)");
}

const char* scan_name(ScanRule s) { return s == ScanRule::skip ? "skip" : "halt"; }

ScanRule parse_scan(const std::string& text) {
    if (text == "skip") return ScanRule::skip;
    if (text == "halt") return ScanRule::halt;
    throw UsageError("unknown scan rule '" + text + "' (expected skip or halt)");
}

std::vector<double> ranking_keys(std::span<const double> p, const PrunableRegistry& registry, const RankingRule& rule) {
    if (p.size() != registry.size()) throw ShapeError("project: probability vector length does not match the registry");
    std::vector<double> keys(p.begin(), p.end());
    switch (rule.variant) {
        case RankingVariant::score_p: break;
        case RankingVariant::value_per_cost:
            for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = p[i] / registry.unit(i).cost.to_double();
            break;
        case RankingVariant::gumbel_topk: {
            if (!rule.gumbel_seed) throw UsageError("gumbel ranking needs a seed");
            Rng rng(*rule.gumbel_seed);
            for (std::size_t i = 0; i < keys.size(); ++i) {
                keys[i] = std::log(p[i]) - std::log1p(-p[i]) + rule.gumbel_scale * rng.gumbel();
            }
            break;
        }
    }
    return keys;
}

HardMask project(std::span<const double> p, const PrunableRegistry& registry, const BudgetSpec& budget,
                 const RankingRule& rule, ScanRule scan) {
    const std::size_t n = registry.size();
    if (p.size() != n) throw ShapeError("project: probability vector length does not match the registry");
    for (const double v : p) {
        if (!(v >= 0.0 && v <= 1.0)) throw std::domain_error("project: probabilities must lie in [0, 1]");
    }

    std::int64_t floor_ticks = 0;
    for (const auto& g : registry.groups()) {
        std::int64_t cheapest = registry.ticks(g.members.front());
        for (const std::size_t i : g.members) cheapest = std::min(cheapest, registry.ticks(i));
        floor_ticks += cheapest;
    }
    if (!budget.admits(floor_ticks)) {
        throw InfeasibleBudget("budget " + budget.budget.str() + " is below the " + registry.from_ticks(floor_ticks).str() +
                               " needed to keep one unit in each of " + std::to_string(registry.groups().size()) +
                               " groups");
    }

    const std::vector<double> keys = ranking_keys(p, registry, rule);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] > keys[b]; });

    HardMask out;
    out.keep.assign(n, 0);
    std::int64_t used = 0;
    for (const std::size_t i : order) {
        if (budget.admits(used + registry.ticks(i))) {
            out.keep[i] = 1;
            used += registry.ticks(i);
        } else if (scan == ScanRule::halt) {
            break;
        }
    }

    std::vector<std::size_t> kept_in_group(registry.groups().size(), 0);
    for (std::size_t i = 0; i < n; ++i) kept_in_group[registry.group_of(i)] += out.keep[i];
    for (std::size_t g = 0; g < registry.groups().size(); ++g) {
        if (kept_in_group[g] != 0) continue;
        const auto& members = registry.groups()[g].members;
        std::size_t best = members.front();
        for (const std::size_t i : members) {
            if (p[i] > p[best]) best = i;
        }
        out.keep[best] = 1;
        used += registry.ticks(best);
        kept_in_group[g] = 1;
        out.guard_interventions.push_back(best);
    }

    while (!budget.admits(used)) {
        std::optional<std::size_t> victim;
        for (std::size_t i = 0; i < n; ++i) {
            if (!out.keep[i] || kept_in_group[registry.group_of(i)] < 2) continue;
            if (!victim || p[i] <= p[*victim]) victim = i;
        }
        if (!victim) {
            throw InfeasibleBudget("project: cannot restore feasibility without emptying a group (cost " +
                                   registry.from_ticks(used).str() + " > budget " + budget.budget.str() + ")");
        }
        out.keep[*victim] = 0;
        used -= registry.ticks(*victim);
        --kept_in_group[registry.group_of(*victim)];
        out.evictions.push_back(*victim);
    }

    if (used != mask_ticks(out.keep, registry) || !budget.admits(used)) {
        throw InvariantError("project: consumed cost exceeds the budget");
    }
    out.cost_ticks = used;
    out.consumed_cost = registry.from_ticks(used);
    return out;
}

const KindAllocation* RuleAllocation::find(UnitKind kind) const {
    for (const auto& k : kinds) {
        if (k.kind == kind) return &k;
    }
    return nullptr;
}

RuleAllocation allocation_of(const HardMask& mask, std::span<const double> p, const PrunableRegistry& registry,
                             RankingVariant variant) {
    RuleAllocation out;
    out.variant = variant;
    out.consumed_cost = mask.consumed_cost;
    for (const UnitKind kind : {UnitKind::ffn_channel, UnitKind::kv_group}) {
        KindAllocation a;
        a.kind = kind;
        std::int64_t ticks = 0;
        double p_sum = 0.0;
        for (std::size_t i = 0; i < registry.size(); ++i) {
            if (registry.unit(i).kind != kind) continue;
            ++a.total;
            if (mask.keep[i]) {
                ++a.kept;
                ticks += registry.ticks(i);
                p_sum += p[i];
            }
        }
        if (a.total == 0) continue;
        a.keep_ratio = static_cast<double>(a.kept) / static_cast<double>(a.total);
        a.budget_share = mask.cost_ticks == 0 ? 0.0 : static_cast<double>(ticks) / static_cast<double>(mask.cost_ticks);
        a.mean_p = a.kept == 0 ? 0.0 : p_sum / static_cast<double>(a.kept);
        out.kinds.push_back(a);
    }
    return out;
}

std::vector<RuleAllocation> selection_bias_report(std::span<const double> p, const PrunableRegistry& registry,
                                                  const BudgetSpec& budget) {
    std::vector<RuleAllocation> out;
    for (const RankingVariant v : {RankingVariant::score_p, RankingVariant::value_per_cost}) {
        const HardMask m = project(p, registry, budget, RankingRule{v, std::nullopt, 1.0});
        out.push_back(allocation_of(m, p, registry, v));
    }
    return out;
}

ProjectionTiming projection_timer(std::size_t n, int trials, std::optional<double> reference_step_ms,
                                  std::uint64_t seed) {
    if (n == 0) throw UsageError("projection_timer: n must be at least 1");
    if (trials < 1) throw UsageError("projection_timer: trials must be at least 1");
    std::vector<Rational> costs(n, Rational(1));
    std::vector<int> groups(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (i % 129 == 128) costs[i] = Rational(80, 3);
        groups[i] = static_cast<int>(i / 1024);
    }
    const PrunableRegistry reg = PrunableRegistry::from_units(costs, groups);
    // Tiny registries cannot keep a unit per group at half budget.
    const BudgetSpec budget = make_budget(reg, n < 64 ? Rational(1) : Rational(1, 2));
    Rng rng(seed);
    std::vector<double> p(n);
    for (double& v : p) v = rng.uniform();

    ProjectionTiming t;
    t.n = n;
    t.trials = trials;
    double total = 0.0;
    for (int k = 0; k < trials; ++k) {
        const auto t0 = std::chrono::steady_clock::now();
        const HardMask m = project(p, reg, budget);
        const auto t1 = std::chrono::steady_clock::now();
        const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        total += ms;
        t.min_ms = k == 0 ? ms : std::min(t.min_ms, ms);
        if (m.keep.empty()) throw InvariantError("projection_timer: empty mask");
    }
    t.mean_ms = total / trials;
    if (reference_step_ms && *reference_step_ms > 0.0) t.step_fraction = t.mean_ms / *reference_step_ms;
    return t;
}

}  // namespace bprune
