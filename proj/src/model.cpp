// SPDX-License-Identifier: Apache-2.0
#include "bprune/model.h"

#include <numeric>

#include "bprune/ops.h"

namespace bprune {

namespace {

template <typename T>
Tensor<T> transposed(const Tensor<float>& x) {
    const std::size_t r = x.dim(0), c = x.dim(1);
    Tensor<T> out({c, r});
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = static_cast<T>(x[i * c + j]);
    }
    return out;
}

template <typename T>
Tensor<float> transposed_back(const Tensor<T>& x) {
    const std::size_t r = x.dim(0), c = x.dim(1);
    Tensor<float> out({c, r});
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = static_cast<float>(x[i * c + j]);
    }
    return out;
}

}  // namespace

template <typename T>
Weights<T> Weights<T>::from_checkpoint(const Checkpoint& ckpt) {
    ckpt.validate();
    namespace tn = tensor_names;
    Weights<T> w;
    w.config = ckpt.config;
    w.embed = ckpt.tensor(tn::embed).cast<T>();
    w.final_norm = ckpt.tensor(tn::final_norm).cast<T>();
    w.head = transposed<T>(ckpt.tensor(tn::lm_head));
    const Selection sel = ckpt.structure();
    for (int l = 0; l < ckpt.config.n_layers; ++l) {
        LayerWeights<T> lw;
        lw.attn_norm = ckpt.tensor(Checkpoint::layer_name(l, tn::attn_norm)).cast<T>();
        lw.ffn_norm = ckpt.tensor(Checkpoint::layer_name(l, tn::ffn_norm)).cast<T>();
        lw.wq = transposed<T>(ckpt.tensor(Checkpoint::layer_name(l, tn::q_proj)));
        lw.wk = transposed<T>(ckpt.tensor(Checkpoint::layer_name(l, tn::k_proj)));
        lw.wv = transposed<T>(ckpt.tensor(Checkpoint::layer_name(l, tn::v_proj)));
        lw.wo = transposed<T>(ckpt.tensor(Checkpoint::layer_name(l, tn::o_proj)));
        lw.w_gate = transposed<T>(ckpt.tensor(Checkpoint::layer_name(l, tn::gate_proj)));
        lw.w_up = transposed<T>(ckpt.tensor(Checkpoint::layer_name(l, tn::up_proj)));
        lw.w_down = transposed<T>(ckpt.tensor(Checkpoint::layer_name(l, tn::down_proj)));
        lw.n_kv_heads = sel[l].kv.size();
        lw.n_heads = lw.n_kv_heads * static_cast<std::size_t>(ckpt.config.group_size());
        lw.ffn_dim = sel[l].ffn.size();
        w.layers.push_back(std::move(lw));
    }
    return w;
}

template <typename T>
Checkpoint Weights<T>::to_checkpoint() const {
    namespace tn = tensor_names;
    Checkpoint ckpt;
    ckpt.config = config;
    ckpt.tensors[tn::embed] = embed.template cast<float>();
    ckpt.tensors[tn::final_norm] = final_norm.template cast<float>();
    ckpt.tensors[tn::lm_head] = transposed_back(head);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& lw = layers[l];
        const int li = static_cast<int>(l);
        ckpt.tensors[Checkpoint::layer_name(li, tn::attn_norm)] = lw.attn_norm.template cast<float>();
        ckpt.tensors[Checkpoint::layer_name(li, tn::ffn_norm)] = lw.ffn_norm.template cast<float>();
        ckpt.tensors[Checkpoint::layer_name(li, tn::q_proj)] = transposed_back(lw.wq);
        ckpt.tensors[Checkpoint::layer_name(li, tn::k_proj)] = transposed_back(lw.wk);
        ckpt.tensors[Checkpoint::layer_name(li, tn::v_proj)] = transposed_back(lw.wv);
        ckpt.tensors[Checkpoint::layer_name(li, tn::o_proj)] = transposed_back(lw.wo);
        ckpt.tensors[Checkpoint::layer_name(li, tn::gate_proj)] = transposed_back(lw.w_gate);
        ckpt.tensors[Checkpoint::layer_name(li, tn::up_proj)] = transposed_back(lw.w_up);
        ckpt.tensors[Checkpoint::layer_name(li, tn::down_proj)] = transposed_back(lw.w_down);
    }
    return ckpt;
}

template <typename T>
std::vector<Tensor<T>*> Weights<T>::parameters() {
    std::vector<Tensor<T>*> out{&embed, &final_norm, &head};
    for (auto& lw : layers) {
        for (Tensor<T>* t : {&lw.attn_norm, &lw.wq, &lw.wk, &lw.wv, &lw.wo, &lw.ffn_norm, &lw.w_gate, &lw.w_up,
                             &lw.w_down}) {
            out.push_back(t);
        }
    }
    return out;
}

template <typename T>
std::vector<const Tensor<T>*> Weights<T>::parameters() const {
    auto mut = const_cast<Weights<T>*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

template <typename T>
GateHooks<T> GateHooks<T>::ones(const Weights<T>& w) {
    GateHooks<T> h;
    for (const auto& lw : w.layers) {
        h.ffn.push_back(Tensor<T>::filled({lw.ffn_dim}, T(1)));
        h.kv.push_back(Tensor<T>::filled({lw.n_kv_heads}, T(1)));
    }
    return h;
}

template <typename T>
GateHooks<T> GateHooks<T>::from_selection(const ModelConfig& config, const Selection& retained,
                                          const std::vector<std::vector<float>>* gamma_ffn,
                                          const std::vector<std::vector<float>>* gamma_kv) {
    validate_selection(config, retained);
    GateHooks<T> h;
    for (std::size_t l = 0; l < retained.size(); ++l) {
        Tensor<T> f({static_cast<std::size_t>(config.ffn_dim)});
        Tensor<T> k({static_cast<std::size_t>(config.n_kv_heads)});
        for (std::size_t i = 0; i < retained[l].ffn.size(); ++i) {
            f[static_cast<std::size_t>(retained[l].ffn[i])] = gamma_ffn ? static_cast<T>((*gamma_ffn).at(l).at(i)) : T(1);
        }
        for (std::size_t i = 0; i < retained[l].kv.size(); ++i) {
            k[static_cast<std::size_t>(retained[l].kv[i])] = gamma_kv ? static_cast<T>((*gamma_kv).at(l).at(i)) : T(1);
        }
        h.ffn.push_back(std::move(f));
        h.kv.push_back(std::move(k));
    }
    return h;
}

template <typename T>
Var forward_on_tape(Tape<T>& tape, const Weights<T>& w, std::span<const int> tokens, const HookVars* hooks,
                    std::vector<Var>* weight_vars, const ForwardOptions& opts) {
    const ModelConfig& cfg = w.config;
    const bool train = weight_vars != nullptr;
    const auto in = [&](const Tensor<T>& t) {
        const Var v = tape.leaf_ref(t, train);
        if (train) weight_vars->push_back(v);
        return v;
    };
    if (hooks && (hooks->ffn.size() != w.layers.size() || hooks->kv.size() != w.layers.size())) {
        throw ShapeError("forward: hook layer count does not match the model");
    }
    const std::size_t n_layers = opts.layers < 0 ? w.layers.size() : static_cast<std::size_t>(opts.layers);
    if (n_layers > w.layers.size()) throw ShapeError("forward: requested more layers than the model has");

    std::vector<int> positions(tokens.size());
    std::iota(positions.begin(), positions.end(), 0);
    const T eps = static_cast<T>(cfg.norm_eps);
    const auto dh = static_cast<std::size_t>(cfg.head_dim);

    const Var embed = in(w.embed);
    const Var final_norm = in(w.final_norm);
    const Var head = in(w.head);
    Var x = ops::embedding(tape, embed, tokens);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const LayerWeights<T>& lw = w.layers[l];
        const Var attn_norm = in(lw.attn_norm), wq = in(lw.wq), wk = in(lw.wk), wv = in(lw.wv), wo = in(lw.wo);
        const Var ffn_norm = in(lw.ffn_norm), w_gate = in(lw.w_gate), w_up = in(lw.w_up), w_down = in(lw.w_down);
        if (l >= n_layers) continue;  // keep weight_vars complete

        const Var h = ops::rmsnorm(tape, x, attn_norm, eps);
        Var q = ops::matmul(tape, h, wq);
        Var k = ops::matmul(tape, h, wk);
        Var v = ops::matmul(tape, h, wv);
        q = ops::rope(tape, q, lw.n_heads, positions, cfg.rope_base);
        k = ops::rope(tape, k, lw.n_kv_heads, positions, cfg.rope_base);
        if (hooks && hooks->kv[l].valid()) v = ops::scale_groups(tape, v, hooks->kv[l], dh);
        const Var attn = ops::causal_attention(tape, q, k, v, lw.n_heads, lw.n_kv_heads);
        x = ops::add(tape, x, ops::matmul(tape, attn, wo));

        const Var h2 = ops::rmsnorm(tape, x, ffn_norm, eps);
        const Var gate = ops::silu(tape, ops::matmul(tape, h2, w_gate));
        Var act = ops::mul(tape, gate, ops::matmul(tape, h2, w_up));
        if (hooks && hooks->ffn[l].valid()) act = ops::scale_groups(tape, act, hooks->ffn[l], 1);
        x = ops::add(tape, x, ops::matmul(tape, act, w_down));
    }
    if (opts.return_hidden) return x;
    const Var xf = ops::rmsnorm(tape, x, final_norm, eps);
    return ops::matmul(tape, xf, head);
}

template <typename T>
Tensor<T> forward(const Weights<T>& w, std::span<const int> tokens, const GateHooks<T>* hooks,
                  const ForwardOptions& opts) {
    Tape<T> tape;
    HookVars hv;
    if (hooks) {
        for (const auto& f : hooks->ffn) hv.ffn.push_back(tape.leaf_ref(f, false));
        for (const auto& k : hooks->kv) hv.kv.push_back(tape.leaf_ref(k, false));
    }
    const Var out = forward_on_tape(tape, w, tokens, hooks ? &hv : nullptr, nullptr, opts);
    return tape.value(out);
}

template <typename T>
double window_loss(const Weights<T>& w, std::span<const int> window, const GateHooks<T>* hooks) {
    if (window.size() < 2) throw ShapeError("window_loss: window needs at least two tokens");
    Tape<T> tape;
    HookVars hv;
    if (hooks) {
        for (const auto& f : hooks->ffn) hv.ffn.push_back(tape.leaf_ref(f, false));
        for (const auto& k : hooks->kv) hv.kv.push_back(tape.leaf_ref(k, false));
    }
    const Var logits = forward_on_tape(tape, w, window.first(window.size() - 1), hooks ? &hv : nullptr);
    const Var loss = ops::softmax_ce(tape, logits, window.subspan(1));
    return static_cast<double>(tape.value(loss)[0]);
}

template <typename T>
LoadedModel<T> LoadedModel<T>::from_checkpoint(const Checkpoint& ckpt) {
    LoadedModel<T> m{Weights<T>::from_checkpoint(ckpt), std::nullopt};
    if (const auto pending = ckpt.pending_selection()) {
        const auto& meta = *ckpt.pruning;
        m.hooks = GateHooks<T>::from_selection(ckpt.config, *pending, meta.gamma_ffn ? &*meta.gamma_ffn : nullptr,
                                               meta.gamma_kv ? &*meta.gamma_kv : nullptr);
    }
    return m;
}

#define BPRUNE_INSTANTIATE_MODEL(T)                                                                                  \
    template struct Weights<T>;                                                                                      \
    template struct GateHooks<T>;                                                                                    \
    template struct LoadedModel<T>;                                                                                  \
    template Var forward_on_tape<T>(Tape<T>&, const Weights<T>&, std::span<const int>, const HookVars*,             \
                                    std::vector<Var>*, const ForwardOptions&);                                      \
    template Tensor<T> forward<T>(const Weights<T>&, std::span<const int>, const GateHooks<T>*, const ForwardOptions&); \
    template double window_loss<T>(const Weights<T>&, std::span<const int>, const GateHooks<T>*);

BPRUNE_INSTANTIATE_MODEL(float)
BPRUNE_INSTANTIATE_MODEL(double)

}  // namespace bprune
