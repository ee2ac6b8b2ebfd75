// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "bprune/model.h"
#include "bprune/ops.h"
#include "bprune/pretrain.h"
#include "bprune/rng.h"
#include "bprune/tape.h"

namespace bprune::testing {

inline Tensor<double> random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
    Tensor<double> t(shape);
    for (double& v : t.data()) v = scale * rng.normal();
    return t;
}

inline std::vector<int> random_tokens(std::size_t n, Rng& rng, int vocab = 256) {
    std::vector<int> out(n);
    for (int& t : out) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab)));
    return out;
}

inline ModelConfig two_layer_config() {
    ModelConfig c = ModelConfig::toy();
    c.n_layers = 2;
    return c;
}

// Initialization plus extra projection noise, so that gating a single unit
// visibly moves the logits.
inline Checkpoint random_checkpoint(const ModelConfig& config, std::uint64_t seed) {
    Checkpoint ckpt = init_checkpoint(config, seed);
    Rng rng(derive_seed(seed, 1));
    for (auto& [name, t] : ckpt.tensors) {
        if (t.rank() == 2) {
            for (float& v : t.data()) v += static_cast<float>(0.1 * rng.normal());
        }
    }
    return ckpt;
}

// Norm-wise relative error ||a - b|| / max(||a||, ||b||).
inline double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::max(std::sqrt(na), std::sqrt(nb));
    return denom == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

using Builder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

// Compares tape gradients of sum(w * f(inputs)) against central differences
// for every input element; returns the worst norm-wise relative error.
inline double grad_check(const Builder& build, std::vector<Tensor<double>> inputs, std::uint64_t seed,
                         double h = 1e-5) {
    Rng rng(seed);
    Tensor<double> weights;
    const auto loss = [&](const std::vector<Tensor<double>>& xs, std::vector<std::vector<double>>* grads) {
        Tape<double> tape;
        std::vector<Var> vars;
        for (const auto& x : xs) vars.push_back(tape.leaf(x, true));
        const Var out = build(tape, vars);
        if (weights.size() == 0) weights = random_tensor(tape.value(out).shape(), rng);
        const Var l = ops::weighted_sum(tape, out, weights);
        if (grads) {
            tape.backward(l);
            for (const Var v : vars) {
                const Tensor<double> g = tape.grad(v);
                grads->emplace_back(g.data().begin(), g.data().end());
            }
        }
        return tape.value(l)[0];
    };
    std::vector<std::vector<double>> analytic;
    loss(inputs, &analytic);
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        std::vector<double> numeric(inputs[k].size());
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double orig = inputs[k][i];
            inputs[k][i] = orig + h;
            const double up = loss(inputs, nullptr);
            inputs[k][i] = orig - h;
            const double down = loss(inputs, nullptr);
            inputs[k][i] = orig;
            numeric[i] = (up - down) / (2.0 * h);
        }
        worst = std::max(worst, rel_err(analytic[k], numeric));
    }
    return worst;
}

// Pretrained toy backbone produced by the test fixture.
inline std::string backbone_path() {
    const char* env = std::getenv("BPRUNE_BACKBONE");
    return env ? env : BPRUNE_DEFAULT_BACKBONE;
}

inline std::string corpus_path() {
    const char* env = std::getenv("BPRUNE_CORPUS");
    return env ? env : BPRUNE_DEFAULT_CORPUS;
}

}  // namespace bprune::testing
