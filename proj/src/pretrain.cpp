// SPDX-License-Identifier: Apache-2.0
#include "bprune/pretrain.h"

#include <cmath>
#include <numbers>

#include "bprune/adamw.h"
#include "bprune/dataset.h"
#include "bprune/model.h"
#include "bprune/ops.h"
#include "bprune/rng.h"

namespace bprune {

Checkpoint init_checkpoint(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Checkpoint ckpt;
    ckpt.config = config;
    Rng rng(derive_seed(seed, 0x1417));
    const double std_dev = 0.02;
    const double resid_std = std_dev / std::sqrt(2.0 * std::max(1, config.n_layers));
    const auto d = static_cast<std::size_t>(config.d_model);
    const auto dh = static_cast<std::size_t>(config.head_dim);
    const auto h = static_cast<std::size_t>(config.n_heads);
    const auto kv = static_cast<std::size_t>(config.n_kv_heads);
    const auto ffn = static_cast<std::size_t>(config.ffn_dim);
    const auto vocab = static_cast<std::size_t>(config.vocab_size);
    const auto normal = [&](Shape shape, double s) {
        Tensor<float> t(std::move(shape));
        for (float& v : t.data()) v = static_cast<float>(s * rng.normal());
        return t;
    };
    namespace tn = tensor_names;
    ckpt.tensors[tn::embed] = normal({vocab, d}, std_dev);
    for (int l = 0; l < config.n_layers; ++l) {
        ckpt.tensors[Checkpoint::layer_name(l, tn::attn_norm)] = Tensor<float>::filled({d}, 1.0f);
        ckpt.tensors[Checkpoint::layer_name(l, tn::q_proj)] = normal({h * dh, d}, std_dev);
        ckpt.tensors[Checkpoint::layer_name(l, tn::k_proj)] = normal({kv * dh, d}, std_dev);
        ckpt.tensors[Checkpoint::layer_name(l, tn::v_proj)] = normal({kv * dh, d}, std_dev);
        ckpt.tensors[Checkpoint::layer_name(l, tn::o_proj)] = normal({d, h * dh}, resid_std);
        ckpt.tensors[Checkpoint::layer_name(l, tn::ffn_norm)] = Tensor<float>::filled({d}, 1.0f);
        ckpt.tensors[Checkpoint::layer_name(l, tn::gate_proj)] = normal({ffn, d}, std_dev);
        ckpt.tensors[Checkpoint::layer_name(l, tn::up_proj)] = normal({ffn, d}, std_dev);
        ckpt.tensors[Checkpoint::layer_name(l, tn::down_proj)] = normal({d, ffn}, resid_std);
    }
    ckpt.tensors[tn::final_norm] = Tensor<float>::filled({d}, 1.0f);
    ckpt.tensors[tn::lm_head] = normal({vocab, d}, std_dev);
    ckpt.validate();
    return ckpt;
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
    j = nlohmann::json{{"steps", c.steps},
                       {"lr", c.lr},
                       {"warmup", c.warmup},
                       {"min_lr_fraction", c.min_lr_fraction},
                       {"weight_decay", c.weight_decay},
                       {"grad_clip", c.grad_clip},
                       {"window", c.window},
                       {"seed", c.seed}};
}

namespace {

double lr_multiplier(const PretrainConfig& cfg, int step) {
    if (step < cfg.warmup) return static_cast<double>(step + 1) / static_cast<double>(cfg.warmup);
    const double span = std::max(1, cfg.steps - cfg.warmup);
    const double progress = std::min(1.0, static_cast<double>(step - cfg.warmup) / span);
    const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    return cfg.min_lr_fraction + (1.0 - cfg.min_lr_fraction) * cosine;
}

}  // namespace

PretrainResult pretrain_backbone(const ModelConfig& config, std::span<const int> corpus, const PretrainConfig& cfg,
                                 const std::function<void(int, double)>& on_step) {
    if (corpus.empty()) throw UsageError("pretrain: corpus is empty");
    if (cfg.steps < 0) throw UsageError("pretrain: steps must be non-negative");
    Weights<float> w = Weights<float>::from_checkpoint(init_checkpoint(config, cfg.seed));
    const TokenDataset data =
        TokenDataset::sample(corpus, cfg.window, static_cast<std::size_t>(cfg.steps), derive_seed(cfg.seed, 0x7a1));

    const std::vector<Tensor<float>*> params = w.parameters();
    std::vector<AdamW> opt;
    opt.reserve(params.size());
    for (const Tensor<float>* p : params) {
        // Norm gains are not decayed.
        AdamWConfig oc{.lr = cfg.lr, .weight_decay = p->rank() == 1 ? 0.0 : cfg.weight_decay};
        opt.emplace_back(p->size(), oc);
    }

    PretrainResult result;
    result.losses.reserve(static_cast<std::size_t>(cfg.steps));
    for (int step = 0; step < cfg.steps; ++step) {
        const std::span<const int> seq = data[static_cast<std::size_t>(step)];
        std::vector<Tensor<float>> grads;
        double loss_value = 0.0;
        try {
            Tape<float> tape;
            std::vector<Var> vars;
            const Var logits = forward_on_tape(tape, w, seq.first(cfg.window), nullptr, &vars);
            const Var loss = ops::softmax_ce(tape, logits, seq.subspan(1));
            loss_value = static_cast<double>(tape.value(loss)[0]);
            tape.backward(loss);
            grads.reserve(vars.size());
            for (const Var v : vars) grads.push_back(tape.grad(v));
        } catch (const NumericalError& e) {
            throw NumericalError("pretrain diverged at step " + std::to_string(step) + ": " + e.what());
        }
        double norm_sq = 0.0;
        for (const auto& g : grads) {
            for (const float v : g.data()) norm_sq += static_cast<double>(v) * v;
        }
        if (!std::isfinite(loss_value) || !std::isfinite(norm_sq)) {
            throw NumericalError("pretrain diverged at step " + std::to_string(step) + ": loss " +
                                 std::to_string(loss_value) + ", grad norm^2 " + std::to_string(norm_sq));
        }
        const double norm = std::sqrt(norm_sq);
        if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) {
            const auto s = static_cast<float>(cfg.grad_clip / norm);
            for (auto& g : grads) {
                for (float& v : g.data()) v *= s;
            }
        }
        const double mult = lr_multiplier(cfg, step);
        for (std::size_t i = 0; i < params.size(); ++i) {
            opt[i].step(params[i]->data(), std::span<const float>(grads[i].data()), mult);
        }
        result.losses.push_back(loss_value);
        if (on_step) on_step(step, loss_value);
    }
    result.checkpoint = w.to_checkpoint();
    return result;
}

}  // namespace bprune
