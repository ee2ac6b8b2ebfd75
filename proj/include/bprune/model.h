// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <vector>

#include "bprune/checkpoint.h"
#include "bprune/tape.h"

namespace bprune {

// Compute-layout weights: projections are stored transposed ([in x out]) so
// the forward pass is a plain row-major x . W.
template <typename T>
struct LayerWeights {
    Tensor<T> attn_norm, ffn_norm;
    Tensor<T> wq, wk, wv, wo;
    Tensor<T> w_gate, w_up, w_down;
    std::size_t n_heads = 0;
    std::size_t n_kv_heads = 0;
    std::size_t ffn_dim = 0;
};

template <typename T>
struct Weights {
    ModelConfig config;
    Tensor<T> embed;       // [V x d]
    Tensor<T> final_norm;  // [d]
    Tensor<T> head;        // [d x V]
    std::vector<LayerWeights<T>> layers;

    static Weights from_checkpoint(const Checkpoint& ckpt);
    // Writes the weights back in checkpoint layout (structure only; metadata is left empty).
    Checkpoint to_checkpoint() const;

    // All tensors in a fixed order, for optimizers and comparisons.
    std::vector<Tensor<T>*> parameters();
    std::vector<const Tensor<T>*> parameters() const;
};

// Per-layer multipliers. ffn[l] has one entry per FFN channel of layer l and
// scales silu(gate(x)) * up(x) before the down projection; kv[l] has one entry
// per KV head group and scales that group's value vectors.
template <typename T>
struct GateHooks {
    std::vector<Tensor<T>> ffn;
    std::vector<Tensor<T>> kv;

    static GateHooks ones(const Weights<T>& w);
    // 1 (or the supplied scale) for retained units, 0 for pruned ones.
    static GateHooks from_selection(const ModelConfig& config, const Selection& retained,
                                    const std::vector<std::vector<float>>* gamma_ffn = nullptr,
                                    const std::vector<std::vector<float>>* gamma_kv = nullptr);
};

// Tape handles for hooks; an invalid Var leaves that injection point ungated.
struct HookVars {
    std::vector<Var> ffn;
    std::vector<Var> kv;
};

struct ForwardOptions {
    // Run only the first `layers` blocks (-1: all) and return the residual stream instead of logits.
    int layers = -1;
    bool return_hidden = false;
};

// Records the causal LM forward on `tape`. Weights enter as constant
// references; when `weight_vars` is given they are recorded as differentiable
// leaves instead, appended in Weights::parameters() order.
template <typename T>
Var forward_on_tape(Tape<T>& tape, const Weights<T>& w, std::span<const int> tokens, const HookVars* hooks = nullptr,
                    std::vector<Var>* weight_vars = nullptr, const ForwardOptions& opts = {});

// Logits [T x V] without gradient recording.
template <typename T>
Tensor<T> forward(const Weights<T>& w, std::span<const int> tokens, const GateHooks<T>* hooks = nullptr,
                  const ForwardOptions& opts = {});

// Token-mean cross-entropy of one window: tokens[0..n-1) predict tokens[1..n).
template <typename T>
double window_loss(const Weights<T>& w, std::span<const int> window, const GateHooks<T>* hooks = nullptr);

// Weights for evaluation plus any pending (unfolded) gating stored in the checkpoint.
template <typename T>
struct LoadedModel {
    Weights<T> weights;
    std::optional<GateHooks<T>> hooks;

    static LoadedModel from_checkpoint(const Checkpoint& ckpt);
    const GateHooks<T>* hooks_ptr() const { return hooks ? &*hooks : nullptr; }
};

}  // namespace bprune
