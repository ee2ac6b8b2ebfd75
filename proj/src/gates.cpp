// SPDX-License-Identifier: Apache-2.0
#include "bprune/gates.h"

#include <chrono>
#include <cmath>
#include <numeric>

#include "bprune/ops.h"
#include "bprune/rng.h"

namespace bprune {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

GateState::GateState(std::size_t n, double tau_, AdamWConfig adam) : scores(n, 0.0), tau(tau_), optimizer(n, adam) {
    if (!(tau_ > 0.0)) throw UsageError("temperature must be positive");
}

std::vector<double> GateState::probabilities() const {
    std::vector<double> p(scores.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = sigmoid(scores[i] / tau);
    return p;
}

namespace {

const ModelConfig& registry_config(const PrunableRegistry& registry) {
    if (!registry.config()) throw UsageError("gates need a registry built from a model config");
    return *registry.config();
}

}  // namespace

template <typename T>
SurrogateGates<T> surrogate_gates(Tape<T>& tape, const HardMask& mask, std::span<const double> p,
                                  const PrunableRegistry& registry) {
    if (mask.keep.size() != registry.size() || p.size() != registry.size()) {
        throw ShapeError("surrogate_gates: mask or probability length does not match the registry");
    }
    const auto n_layers = static_cast<std::size_t>(registry_config(registry).n_layers);
    SurrogateGates<T> out;
    out.hooks.ffn.assign(n_layers, Var{});
    out.hooks.kv.assign(n_layers, Var{});
    out.ffn_p.assign(n_layers, Var{});
    out.kv_p.assign(n_layers, Var{});
    for (const auto& g : registry.groups()) {
        Tensor<T> hard({g.members.size()});
        Tensor<T> soft({g.members.size()});
        for (std::size_t j = 0; j < g.members.size(); ++j) {
            hard[j] = mask.keep[g.members[j]] ? T(1) : T(0);
            soft[j] = static_cast<T>(p[g.members[j]]);
        }
        const Var pv = tape.leaf(std::move(soft), true);
        const Var mult = ops::straight_through(tape, std::move(hard), pv);
        const auto l = static_cast<std::size_t>(g.layer);
        if (g.kind == UnitKind::ffn_channel) {
            out.hooks.ffn[l] = mult;
            out.ffn_p[l] = pv;
        } else {
            out.hooks.kv[l] = mult;
            out.kv_p[l] = pv;
        }
    }
    return out;
}

template <typename T>
std::vector<double> gather_gate_grads(const Tape<T>& tape, const SurrogateGates<T>& gates,
                                      const PrunableRegistry& registry) {
    std::vector<double> out(registry.size(), 0.0);
    for (const auto& g : registry.groups()) {
        const auto l = static_cast<std::size_t>(g.layer);
        const Var v = g.kind == UnitKind::ffn_channel ? gates.ffn_p.at(l) : gates.kv_p.at(l);
        const Tensor<T> grad = tape.grad(v);
        for (std::size_t j = 0; j < g.members.size(); ++j) out[g.members[j]] = static_cast<double>(grad[j]);
    }
    return out;
}

std::vector<double> score_gradient(std::span<const double> dl_dz, std::span<const double> p, double tau) {
    if (dl_dz.size() != p.size()) throw ShapeError("score_gradient: length mismatch");
    if (!(tau > 0.0)) throw UsageError("score_gradient: temperature must be positive");
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = dl_dz[i] * p[i] * (1.0 - p[i]) / tau;
    return out;
}

template <typename T>
GateHooks<T> hooks_from_mask(const Weights<T>& w, std::span<const std::uint8_t> mask, const PrunableRegistry& registry) {
    if (mask.size() != registry.size()) throw ShapeError("hooks_from_mask: mask length does not match the registry");
    GateHooks<T> hooks = GateHooks<T>::ones(w);
    for (const auto& g : registry.groups()) {
        Tensor<T>& t = g.kind == UnitKind::ffn_channel ? hooks.ffn.at(static_cast<std::size_t>(g.layer))
                                                       : hooks.kv.at(static_cast<std::size_t>(g.layer));
        if (t.size() != g.members.size()) throw ShapeError("hooks_from_mask: registry does not match the weights");
        for (std::size_t j = 0; j < g.members.size(); ++j) t[j] = mask[g.members[j]] ? T(1) : T(0);
    }
    return hooks;
}

std::vector<KindStability> mask_stability(const StabilityTrace& trace, const PrunableRegistry& registry) {
    if (trace.snapshots.size() < 2) throw UsageError("mask_stability: need at least two snapshots");
    std::vector<KindStability> out;
    for (const UnitKind kind : {UnitKind::ffn_channel, UnitKind::kv_group}) {
        if (registry.count(kind) == 0) continue;
        KindStability ks{kind, {}};
        for (std::size_t s = 1; s < trace.snapshots.size(); ++s) {
            const Mask& a = trace.snapshots[s - 1];
            const Mask& b = trace.snapshots[s];
            std::size_t same = 0, total = 0;
            for (std::size_t i = 0; i < registry.size(); ++i) {
                if (registry.unit(i).kind != kind) continue;
                ++total;
                same += a.at(i) == b.at(i);
            }
            ks.series.push_back(static_cast<double>(same) / static_cast<double>(total));
        }
        out.push_back(std::move(ks));
    }
    return out;
}

std::vector<double> overall_stability(const StabilityTrace& trace) {
    if (trace.snapshots.size() < 2) throw UsageError("mask_stability: need at least two snapshots");
    std::vector<double> out;
    for (std::size_t s = 1; s < trace.snapshots.size(); ++s) {
        const Mask& a = trace.snapshots[s - 1];
        const Mask& b = trace.snapshots[s];
        if (a.size() != b.size() || a.empty()) throw ShapeError("mask_stability: snapshot lengths differ");
        std::size_t same = 0;
        for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
        out.push_back(static_cast<double>(same) / static_cast<double>(a.size()));
    }
    return out;
}

double polarization(std::span<const double> p) {
    if (p.empty()) return 0.0;
    double s = 0.0;
    for (const double v : p) s += std::fabs(v - 0.5);
    return s / static_cast<double>(p.size());
}

void to_json(nlohmann::json& j, const GateConfig& c) {
    j = nlohmann::json{{"tau", c.tau},
                       {"adam", c.adam},
                       {"epochs", c.epochs},
                       {"snapshot_interval", c.snapshot_interval},
                       {"rank", ranking_name(c.rule.variant)},
                       {"gumbel_scale", c.rule.gumbel_scale},
                       {"scan", scan_name(c.scan)},
                       {"seed", c.seed},
                       {"initial_scores", c.initial_scores ? "custom" : "zeros"}};
}

int resolve_snapshot_interval(int requested, int total_steps) {
    if (requested < 0) throw UsageError("snapshot interval must be non-negative");
    if (requested > 0) return requested;
    return total_steps < 1000 ? 50 : 200;
}

nlohmann::json GateResult::log(const PrunableRegistry& registry, const BudgetSpec& budget) const {
    nlohmann::json j;
    j["steps"] = losses.size();
    j["loss"] = losses;
    j["polarization"] = polarization;
    std::vector<std::string> costs;
    costs.reserve(cost_ticks.size());
    for (const auto t : cost_ticks) costs.push_back(registry.from_ticks(t).str());
    j["mask_cost"] = costs;
    j["budget"] = budget.budget.str();
    j["guard_interventions"] = guard_counts;
    j["evictions"] = eviction_counts;
    j["guard_interventions_total"] = std::accumulate(guard_counts.begin(), guard_counts.end(), 0);
    j["evictions_total"] = std::accumulate(eviction_counts.begin(), eviction_counts.end(), 0);
    j["snapshot_interval"] = trace.interval;
    j["snapshot_steps"] = trace.steps;
    if (trace.snapshots.size() >= 2) {
        nlohmann::json st = nlohmann::json::object();
        for (const auto& ks : mask_stability(trace, registry)) st[kind_name(ks.kind)] = ks.series;
        st["all"] = overall_stability(trace);
        j["stability"] = std::move(st);
    }
    j["projection_seconds"] = projection_seconds;
    j["total_seconds"] = total_seconds;
    j["sort_time_fraction"] = total_seconds > 0.0 ? projection_seconds / total_seconds : 0.0;
    return j;
}

GateResult train_gates(const Weights<float>& weights, const PrunableRegistry& registry, const BudgetSpec& budget,
                       const TokenDataset& data, const GateConfig& config,
                       const std::function<void(const GateStep&)>& on_step) {
    if (!registry.config() || !(*registry.config() == weights.config)) {
        throw UsageError("train_gates: registry was not built for this model");
    }
    if (data.empty()) throw UsageError("train_gates: dataset is empty");
    if (config.epochs < 0) throw UsageError("train_gates: epochs must be non-negative");
    for (const auto& lw : weights.layers) {
        if (lw.ffn_dim != static_cast<std::size_t>(weights.config.ffn_dim) ||
            lw.n_kv_heads != static_cast<std::size_t>(weights.config.n_kv_heads)) {
            throw UsageError("train_gates: backbone is already sliced");
        }
    }
    using clock = std::chrono::steady_clock;
    const auto t_start = clock::now();
    const int total_steps = config.epochs * static_cast<int>(data.size());

    GateResult r{GateState(registry.size(), config.tau, config.adam), {}, {}, {}, {}, {}, {}, {}, 0.0, 0.0};
    if (config.initial_scores) {
        if (config.initial_scores->size() != registry.size()) throw ShapeError("initial scores length mismatch");
        r.state.scores = *config.initial_scores;
    }
    r.trace.interval = resolve_snapshot_interval(config.snapshot_interval, total_steps);

    const std::uint64_t gumbel_stream = derive_seed(config.seed, 0x9b1);
    const auto rule_for_step = [&](int step) {
        RankingRule rule = config.rule;
        if (rule.variant == RankingVariant::gumbel_topk) rule.gumbel_seed = derive_seed(gumbel_stream, step);
        return rule;
    };
    const auto timed_project = [&](std::span<const double> p, const RankingRule& rule) {
        const auto t0 = clock::now();
        HardMask m = project(p, registry, budget, rule, config.scan);
        r.projection_seconds += std::chrono::duration<double>(clock::now() - t0).count();
        return m;
    };

    std::vector<std::size_t> order(data.size());
    int step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(config.seed, 0x5e7 + static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(std::span<std::size_t>(order));
        for (const std::size_t idx : order) {
            const std::vector<double> p = r.state.probabilities();
            const HardMask mask = timed_project(p, rule_for_step(step));
            if (!budget.admits(mask.cost_ticks) || mask_ticks(mask.keep, registry) != mask.cost_ticks) {
                throw InvariantError("train_gates: step " + std::to_string(step) + " mask exceeds the budget");
            }
            if (step % r.trace.interval == 0) {
                r.trace.steps.push_back(step);
                r.trace.snapshots.push_back(mask.keep);
            }

            const std::span<const int> seq = data[idx];
            Tape<float> tape;
            const SurrogateGates<float> gates = surrogate_gates(tape, mask, p, registry);
            double loss_value = 0.0;
            try {
                const Var logits = forward_on_tape(tape, weights, seq.first(data.window()), &gates.hooks);
                const Var loss = ops::softmax_ce(tape, logits, seq.subspan(1));
                loss_value = static_cast<double>(tape.value(loss)[0]);
                tape.backward(loss);
            } catch (const NumericalError& e) {
                throw NumericalError("gate training diverged at step " + std::to_string(step) + ": " + e.what());
            }
            const std::vector<double> dz = gather_gate_grads(tape, gates, registry);
            const std::vector<double> ds = score_gradient(dz, p, r.state.tau);
            for (const double g : ds) {
                if (!std::isfinite(g)) {
                    throw NumericalError("gate training: non-finite score gradient at step " + std::to_string(step));
                }
            }

            r.losses.push_back(loss_value);
            r.polarization.push_back(bprune::polarization(p));
            r.cost_ticks.push_back(mask.cost_ticks);
            r.guard_counts.push_back(static_cast<int>(mask.guard_interventions.size()));
            r.eviction_counts.push_back(static_cast<int>(mask.evictions.size()));
            if (on_step) on_step(GateStep{step, loss_value, &mask, p});

            r.state.optimizer.step(std::span<double>(r.state.scores), std::span<const double>(ds));
            ++step;
        }
    }

    const std::vector<double> p_final = r.state.probabilities();
    if (total_steps > 0 && total_steps % r.trace.interval == 0) {
        r.trace.steps.push_back(total_steps);
        r.trace.snapshots.push_back(timed_project(p_final, rule_for_step(total_steps)).keep);
    }
    RankingRule final_rule = config.rule;
    if (final_rule.variant == RankingVariant::gumbel_topk) final_rule = RankingRule{};
    r.final_mask = timed_project(p_final, final_rule);
    r.total_seconds = std::chrono::duration<double>(clock::now() - t_start).count();
    return r;
}

#define BPRUNE_INSTANTIATE_GATES(T)                                                                                  \
    template struct SurrogateGates<T>;                                                                               \
    template SurrogateGates<T> surrogate_gates<T>(Tape<T>&, const HardMask&, std::span<const double>,               \
                                                  const PrunableRegistry&);                                          \
    template std::vector<double> gather_gate_grads<T>(const Tape<T>&, const SurrogateGates<T>&,                     \
                                                      const PrunableRegistry&);                                      \
    template GateHooks<T> hooks_from_mask<T>(const Weights<T>&, std::span<const std::uint8_t>, const PrunableRegistry&);

BPRUNE_INSTANTIATE_GATES(float)
BPRUNE_INSTANTIATE_GATES(double)

}  // namespace bprune
