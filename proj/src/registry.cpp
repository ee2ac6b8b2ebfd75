// SPDX-License-Identifier: Apache-2.0
#include "bprune/registry.h"

#include <map>

#include "bprune/errors.h"

namespace bprune {

const char* kind_name(UnitKind kind) { return kind == UnitKind::ffn_channel ? "ffn" : "kv"; }

const char* target_name(TargetFilter target) {
    switch (target) {
        case TargetFilter::both: return "both";
        case TargetFilter::ffn_only: return "ffn";
        case TargetFilter::kv_only: return "kv";
    }
    return "?";
}

TargetFilter parse_target(const std::string& text) {
    if (text == "both") return TargetFilter::both;
    if (text == "ffn") return TargetFilter::ffn_only;
    if (text == "kv") return TargetFilter::kv_only;
    throw UsageError("unknown pruning target '" + text + "' (expected both, ffn or kv)");
}

Rational alpha(const ModelConfig& config) {
    if (config.n_kv_heads <= 0 || config.n_heads % config.n_kv_heads != 0) {
        throw UsageError("alpha: n_heads must be a multiple of n_kv_heads");
    }
    const std::int64_t g = config.group_size();
    return Rational((2 * g + 2) * config.head_dim, 3);
}

PrunableRegistry PrunableRegistry::from_config(const ModelConfig& config, Rational cost_scale, TargetFilter target) {
    config.validate();
    if (cost_scale < Rational(0)) throw UsageError("cost scale must be non-negative");
    PrunableRegistry reg;
    reg.config_ = config;
    reg.target_ = target;
    reg.cost_scale_ = cost_scale;
    const Rational kv_cost = alpha(config) * cost_scale;
    const bool with_ffn = target != TargetFilter::kv_only;
    const bool with_kv = target != TargetFilter::ffn_only;
    for (int l = 0; l < config.n_layers; ++l) {
        if (with_ffn) {
            UnitGroup g{l, UnitKind::ffn_channel, {}};
            for (int i = 0; i < config.ffn_dim; ++i) {
                g.members.push_back(reg.units_.size());
                reg.units_.push_back({reg.units_.size(), l, UnitKind::ffn_channel, i, Rational(1)});
            }
            reg.groups_.push_back(std::move(g));
        }
        if (with_kv) {
            UnitGroup g{l, UnitKind::kv_group, {}};
            for (int i = 0; i < config.n_kv_heads; ++i) {
                g.members.push_back(reg.units_.size());
                reg.units_.push_back({reg.units_.size(), l, UnitKind::kv_group, i, kv_cost});
            }
            reg.groups_.push_back(std::move(g));
        }
    }
    if (reg.units_.empty()) throw UsageError("registry: no prunable units after filtering");
    reg.finalize();
    return reg;
}

PrunableRegistry PrunableRegistry::from_units(std::span<const Rational> costs, std::span<const int> group_ids) {
    if (costs.size() != group_ids.size()) throw ShapeError("registry: costs and group ids differ in length");
    if (costs.empty()) throw UsageError("registry: no prunable units");
    PrunableRegistry reg;
    std::map<int, std::size_t> slot;
    std::map<int, int> next_local;
    for (std::size_t i = 0; i < costs.size(); ++i) {
        if (costs[i] < Rational(0)) throw UsageError("registry: negative unit cost");
        const int gid = group_ids[i];
        if (!slot.contains(gid)) {
            slot[gid] = reg.groups_.size();
            reg.groups_.push_back({gid, UnitKind::ffn_channel, {}});
        }
        reg.groups_[slot[gid]].members.push_back(i);
        reg.units_.push_back({i, gid, UnitKind::ffn_channel, next_local[gid]++, costs[i]});
    }
    reg.finalize();
    return reg;
}

void PrunableRegistry::finalize() {
    group_of_.assign(units_.size(), 0);
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        for (const std::size_t i : groups_[g].members) group_of_[i] = g;
    }
    tick_den_ = 1;
    for (const auto& u : units_) tick_den_ = lcm_checked(tick_den_, u.cost.den());
    ticks_.resize(units_.size());
    __int128 total = 0;
    for (std::size_t i = 0; i < units_.size(); ++i) {
        const Rational t = units_[i].cost * Rational(tick_den_);
        ticks_[i] = t.num();
        total += t.num();
    }
    if (total > std::numeric_limits<std::int64_t>::max()) throw std::overflow_error("registry: total cost overflow");
    total_ticks_ = static_cast<std::int64_t>(total);
}

std::optional<std::size_t> PrunableRegistry::index_of(int layer, UnitKind kind, int local_index) const {
    for (const auto& g : groups_) {
        if (g.layer != layer || g.kind != kind) continue;
        if (local_index < 0 || static_cast<std::size_t>(local_index) >= g.members.size()) return std::nullopt;
        return g.members[static_cast<std::size_t>(local_index)];
    }
    return std::nullopt;
}

std::size_t PrunableRegistry::count(UnitKind kind) const {
    std::size_t n = 0;
    for (const auto& u : units_) n += u.kind == kind;
    return n;
}

namespace {

BudgetSpec finish_budget(const PrunableRegistry& registry, BudgetSpec spec) {
    spec.total_cost = registry.total_cost();
    if (!(spec.budget > Rational(0))) throw UsageError("budget must be positive");
    if (spec.budget > spec.total_cost) throw UsageError("budget exceeds the total prunable cost");
    spec.budget_ticks = (spec.budget * Rational(registry.tick_denominator())).floor();
    spec.cost_scale = registry.cost_scale();
    spec.target_filter = registry.target();
    return spec;
}

}  // namespace

BudgetSpec make_budget(const PrunableRegistry& registry, Rational keep_ratio) {
    if (!(keep_ratio > Rational(0)) || keep_ratio > Rational(1)) {
        throw UsageError("keep ratio must be in (0, 1], got " + keep_ratio.str());
    }
    BudgetSpec spec;
    spec.keep_ratio = keep_ratio;
    spec.budget = keep_ratio * registry.total_cost();
    return finish_budget(registry, spec);
}

BudgetSpec absolute_budget(const PrunableRegistry& registry, Rational budget) {
    if (registry.total_cost() == Rational(0)) throw UsageError("registry has zero total cost");
    BudgetSpec spec;
    spec.budget = budget;
    spec.keep_ratio = budget / registry.total_cost();
    return finish_budget(registry, spec);
}

RegistryBuild build_registry(const ModelConfig& config, const BudgetSpec& spec) {
    PrunableRegistry reg = PrunableRegistry::from_config(config, spec.cost_scale, spec.target_filter);
    BudgetSpec b = make_budget(reg, spec.keep_ratio);
    return {std::move(reg), b};
}

std::int64_t mask_ticks(std::span<const std::uint8_t> mask, const PrunableRegistry& registry) {
    if (mask.size() != registry.size()) throw ShapeError("mask length does not match the registry");
    std::int64_t t = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) t += registry.ticks(i);
    }
    return t;
}

Rational mask_cost(std::span<const std::uint8_t> mask, const PrunableRegistry& registry) {
    return registry.from_ticks(mask_ticks(mask, registry));
}

Selection selection_from_mask(std::span<const std::uint8_t> mask, const PrunableRegistry& registry) {
    if (!registry.config()) throw UsageError("selection_from_mask needs a registry built from a model config");
    if (mask.size() != registry.size()) throw ShapeError("mask length does not match the registry");
    const ModelConfig& cfg = *registry.config();
    Selection sel = full_selection(cfg);
    for (const auto& g : registry.groups()) {
        std::vector<int>& out = g.kind == UnitKind::ffn_channel ? sel[g.layer].ffn : sel[g.layer].kv;
        out.clear();
        for (const std::size_t i : g.members) {
            if (mask[i]) out.push_back(registry.unit(i).local_index);
        }
    }
    return sel;
}

Mask mask_from_selection(const Selection& selection, const PrunableRegistry& registry) {
    if (!registry.config()) throw UsageError("mask_from_selection needs a registry built from a model config");
    validate_selection(*registry.config(), selection);
    Mask mask(registry.size(), 0);
    for (std::size_t l = 0; l < selection.size(); ++l) {
        for (const int i : selection[l].ffn) {
            if (const auto g = registry.index_of(static_cast<int>(l), UnitKind::ffn_channel, i)) mask[*g] = 1;
        }
        for (const int i : selection[l].kv) {
            if (const auto g = registry.index_of(static_cast<int>(l), UnitKind::kv_group, i)) mask[*g] = 1;
        }
    }
    return mask;
}

}  // namespace bprune
