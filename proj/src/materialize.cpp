// SPDX-License-Identifier: Apache-2.0
#include "bprune/materialize.h"

#include <algorithm>
#include <cmath>

#include "bprune/model.h"
#include "bprune/rng.h"

namespace bprune {

SlicePlan SlicePlan::from_mask(const Mask& mask, const PrunableRegistry& registry) {
    if (!registry.config()) throw UsageError("slice plan needs a registry built from a model config");
    return from_selection(*registry.config(), selection_from_mask(mask, registry));
}

SlicePlan SlicePlan::from_selection(const ModelConfig& config, Selection retained) {
    validate_selection(config, retained);
    for (std::size_t l = 0; l < retained.size(); ++l) {
        if (retained[l].ffn.empty() || retained[l].kv.empty()) {
            throw InvariantError("slice plan: layer " + std::to_string(l) + " would lose every unit of a kind");
        }
    }
    return SlicePlan{config, std::move(retained)};
}

std::vector<SliceShapes> SlicePlan::shapes() const {
    const auto d = static_cast<std::size_t>(config.d_model);
    const auto dh = static_cast<std::size_t>(config.head_dim);
    const auto g = static_cast<std::size_t>(config.group_size());
    std::vector<SliceShapes> out;
    for (const auto& layer : retained) {
        const std::size_t kv = layer.kv.size();
        const std::size_t f = layer.ffn.size();
        out.push_back({{kv * g * dh, d}, {kv * dh, d}, {kv * dh, d}, {d, kv * g * dh}, {f, d}, {f, d}, {d, f}});
    }
    return out;
}

std::int64_t SlicePlan::param_count() const { return bprune::param_count(config, retained); }

namespace {

Tensor<float> take_rows(const Tensor<float>& x, const std::vector<std::size_t>& rows) {
    const std::size_t c = x.dim(1);
    Tensor<float> out({rows.size(), c});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(x.ptr() + rows[i] * c, c, out.ptr() + i * c);
    }
    return out;
}

Tensor<float> take_cols(const Tensor<float>& x, const std::vector<std::size_t>& cols) {
    const std::size_t r = x.dim(0), c = x.dim(1);
    Tensor<float> out({r, cols.size()});
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) out[i * cols.size() + j] = x[i * c + cols[j]];
    }
    return out;
}

std::vector<std::size_t> block_indices(const std::vector<int>& groups, std::size_t width) {
    std::vector<std::size_t> out;
    for (const int g : groups) {
        for (std::size_t j = 0; j < width; ++j) out.push_back(static_cast<std::size_t>(g) * width + j);
    }
    return out;
}

void check_scales(const LayerScales* scales, const Selection& retained, bool kv) {
    if (!scales) return;
    if (scales->size() != retained.size()) throw ShapeError("materialize: scales do not cover every layer");
    for (std::size_t l = 0; l < retained.size(); ++l) {
        const std::size_t want = kv ? retained[l].kv.size() : retained[l].ffn.size();
        if ((*scales)[l].size() != want) throw ShapeError("materialize: scale count differs from retained units");
    }
}

}  // namespace

Checkpoint materialize(const Checkpoint& ckpt, const SlicePlan& plan, const LayerScales* gamma_ffn,
                       const LayerScales* gamma_kv, const std::string& keep_ratio, const nlohmann::json& run) {
    ckpt.validate();
    if (ckpt.pruning && ckpt.pruning->folded) throw UsageError("materialize: checkpoint is already sliced");
    if (!(ckpt.config == plan.config)) throw ShapeError("materialize: plan was built for a different config");
    check_scales(gamma_ffn, plan.retained, false);
    check_scales(gamma_kv, plan.retained, true);

    namespace tn = tensor_names;
    const auto dh = static_cast<std::size_t>(ckpt.config.head_dim);
    const auto g = static_cast<std::size_t>(ckpt.config.group_size());
    Checkpoint out;
    out.config = ckpt.config;
    out.tensors[tn::embed] = ckpt.tensor(tn::embed);
    out.tensors[tn::final_norm] = ckpt.tensor(tn::final_norm);
    out.tensors[tn::lm_head] = ckpt.tensor(tn::lm_head);
    for (std::size_t l = 0; l < plan.retained.size(); ++l) {
        const int li = static_cast<int>(l);
        const auto name = [&](const char* leaf) { return Checkpoint::layer_name(li, leaf); };
        const LayerSelection& sel = plan.retained[l];
        std::vector<std::size_t> ffn_idx(sel.ffn.begin(), sel.ffn.end());

        out.tensors[name(tn::attn_norm)] = ckpt.tensor(name(tn::attn_norm));
        out.tensors[name(tn::ffn_norm)] = ckpt.tensor(name(tn::ffn_norm));

        const std::vector<std::size_t> q_rows = block_indices(sel.kv, g * dh);
        const std::vector<std::size_t> kv_rows = block_indices(sel.kv, dh);
        out.tensors[name(tn::q_proj)] = take_rows(ckpt.tensor(name(tn::q_proj)), q_rows);
        out.tensors[name(tn::k_proj)] = take_rows(ckpt.tensor(name(tn::k_proj)), kv_rows);
        Tensor<float> v = take_rows(ckpt.tensor(name(tn::v_proj)), kv_rows);
        if (gamma_kv) {
            const std::size_t c = v.dim(1);
            for (std::size_t j = 0; j < sel.kv.size(); ++j) {
                const float s = (*gamma_kv)[l][j];
                for (std::size_t r = j * dh; r < (j + 1) * dh; ++r) {
                    for (std::size_t k = 0; k < c; ++k) v[r * c + k] *= s;
                }
            }
        }
        out.tensors[name(tn::v_proj)] = std::move(v);
        out.tensors[name(tn::o_proj)] = take_cols(ckpt.tensor(name(tn::o_proj)), q_rows);

        out.tensors[name(tn::gate_proj)] = take_rows(ckpt.tensor(name(tn::gate_proj)), ffn_idx);
        out.tensors[name(tn::up_proj)] = take_rows(ckpt.tensor(name(tn::up_proj)), ffn_idx);
        Tensor<float> down = take_cols(ckpt.tensor(name(tn::down_proj)), ffn_idx);
        if (gamma_ffn) {
            const std::size_t c = down.dim(1);
            for (std::size_t r = 0; r < down.dim(0); ++r) {
                for (std::size_t j = 0; j < c; ++j) down[r * c + j] *= (*gamma_ffn)[l][j];
            }
        }
        out.tensors[name(tn::down_proj)] = std::move(down);
    }
    PruningMetadata meta;
    meta.keep_ratio = keep_ratio;
    meta.retained = plan.retained;
    meta.folded = true;
    meta.run = run;
    out.pruning = std::move(meta);
    out.validate();
    if (out.tensor_param_count() != plan.param_count()) {
        throw InvariantError("materialize: sliced parameter count differs from the plan");
    }
    return out;
}

void to_json(nlohmann::json& j, const EquivalenceReport& r) {
    j = nlohmann::json{{"max_abs", r.max_abs},
                       {"max_rel", r.max_rel},
                       {"max_abs_f64", r.max_abs_f64},
                       {"pass_f64", r.pass_f64},
                       {"tolerance", r.tolerance},
                       {"probes", r.probes},
                       {"pass", r.pass}};
}

EquivalenceReport verify_equivalence(const Checkpoint& original, const SlicePlan& plan, const LayerScales* gamma_ffn,
                                     const LayerScales* gamma_kv, const Checkpoint& pruned, int n_probes,
                                     double tolerance, std::uint64_t seed, std::size_t probe_length) {
    if (!(original.config == pruned.config)) throw ShapeError("verify_equivalence: configs differ");
    if (pruned.structure() != plan.retained) throw ShapeError("verify_equivalence: pruned structure differs from plan");
    const Weights<float> ref = Weights<float>::from_checkpoint(original);
    const GateHooks<float> hooks = GateHooks<float>::from_selection(original.config, plan.retained, gamma_ffn, gamma_kv);
    const Weights<float> small = Weights<float>::from_checkpoint(pruned);
    const Weights<double> ref64 = Weights<double>::from_checkpoint(original);
    const GateHooks<double> hooks64 =
        GateHooks<double>::from_selection(original.config, plan.retained, gamma_ffn, gamma_kv);
    const Weights<double> small64 = Weights<double>::from_checkpoint(pruned);
    Rng rng(derive_seed(seed, 0xe9));
    EquivalenceReport rep;
    rep.tolerance = tolerance;
    rep.probes = n_probes;
    double max_ref = 0.0;
    for (int k = 0; k < n_probes; ++k) {
        std::vector<int> tokens(probe_length);
        for (int& t : tokens) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(original.config.vocab_size)));
        const Tensor<float> a = forward(ref, tokens, &hooks);
        const Tensor<float> b = forward(small, tokens);
        rep.max_abs = std::max(rep.max_abs, max_abs_diff(a, b));
        rep.max_abs_f64 = std::max(rep.max_abs_f64, max_abs_diff(forward(ref64, tokens, &hooks64), forward(small64, tokens)));
        for (const float v : a.data()) max_ref = std::max(max_ref, static_cast<double>(std::fabs(v)));
    }
    rep.max_rel = max_ref > 0.0 ? rep.max_abs / max_ref : rep.max_abs;
    rep.pass = rep.max_abs <= tolerance;
    rep.pass_f64 = rep.max_abs_f64 <= tolerance;
    return rep;
}

}  // namespace bprune
