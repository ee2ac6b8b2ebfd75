// SPDX-License-Identifier: Apache-2.0
#include "bprune/calibration.h"

#include <cmath>
#include <numeric>

#include "bprune/ops.h"
#include "bprune/rng.h"

namespace bprune {

void to_json(nlohmann::json& j, const CalibrationConfig& c) {
    j = nlohmann::json{{"adam", c.adam},
                       {"epochs", c.epochs},
                       {"seed", c.seed},
                       {"anomaly_threshold", c.anomaly_threshold},
                       {"regression_tolerance", c.regression_tolerance}};
}

std::size_t ScaleState::trainable() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < retained.size(); ++l) n += gamma_ffn[l].size() + gamma_kv[l].size();
    return n;
}

namespace {

std::vector<std::vector<float>> narrow(const std::vector<std::vector<double>>& xs) {
    std::vector<std::vector<float>> out;
    for (const auto& x : xs) out.emplace_back(x.begin(), x.end());
    return out;
}

}  // namespace

std::vector<std::vector<float>> ScaleState::ffn_f32() const { return narrow(gamma_ffn); }
std::vector<std::vector<float>> ScaleState::kv_f32() const { return narrow(gamma_kv); }

GateHooks<float> ScaleState::hooks(const ModelConfig& config) const {
    const auto f = ffn_f32();
    const auto k = kv_f32();
    return GateHooks<float>::from_selection(config, retained, &f, &k);
}

ScaleState identity_scales(const Selection& retained) {
    ScaleState s;
    s.retained = retained;
    for (const auto& layer : retained) {
        s.gamma_ffn.emplace_back(layer.ffn.size(), 1.0);
        s.gamma_kv.emplace_back(layer.kv.size(), 1.0);
    }
    return s;
}

double masked_loss(const Weights<float>& weights, const ScaleState& scales, const TokenDataset& data) {
    if (data.empty()) throw UsageError("calibration: dataset is empty");
    const GateHooks<float> hooks = scales.hooks(weights.config);
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) total += window_loss(weights, data[i], &hooks);
    const double mean = total / static_cast<double>(data.size());
    if (!std::isfinite(mean)) throw NumericalError("calibration: non-finite loss");
    return mean;
}

ScaleState calibrate_scales(const Weights<float>& weights, const Selection& retained, const TokenDataset& data,
                            const CalibrationConfig& config) {
    const ModelConfig& cfg = weights.config;
    validate_selection(cfg, retained);
    for (const auto& layer : retained) {
        if (layer.ffn.empty() || layer.kv.empty()) throw InvariantError("calibration: mask empties a unit group");
    }
    if (config.epochs < 0) throw UsageError("calibration: epochs must be non-negative");

    ScaleState s = identity_scales(retained);
    s.initial_loss = config.initial_loss ? *config.initial_loss : masked_loss(weights, s, data);
    const std::size_t n = s.trainable();
    std::vector<double> flat(n, 1.0);
    AdamW opt(n, config.adam);
    const auto n_layers = retained.size();

    std::vector<std::size_t> order(data.size());
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(config.seed, 0xca1 + static_cast<std::uint64_t>(epoch)));
        rng.shuffle(std::span<std::size_t>(order));
        for (const std::size_t idx : order) {
            Tape<float> tape;
            HookVars hv;
            std::size_t k = 0;
            for (std::size_t l = 0; l < n_layers; ++l) {
                Tensor<float> f({static_cast<std::size_t>(cfg.ffn_dim)});
                for (const int i : retained[l].ffn) f[static_cast<std::size_t>(i)] = static_cast<float>(flat[k++]);
                hv.ffn.push_back(tape.leaf(std::move(f), true));
            }
            for (std::size_t l = 0; l < n_layers; ++l) {
                Tensor<float> v({static_cast<std::size_t>(cfg.n_kv_heads)});
                for (const int i : retained[l].kv) v[static_cast<std::size_t>(i)] = static_cast<float>(flat[k++]);
                hv.kv.push_back(tape.leaf(std::move(v), true));
            }
            const std::span<const int> seq = data[idx];
            double loss_value = 0.0;
            try {
                const Var logits = forward_on_tape(tape, weights, seq.first(data.window()), &hv);
                const Var loss = ops::softmax_ce(tape, logits, seq.subspan(1));
                loss_value = static_cast<double>(tape.value(loss)[0]);
                tape.backward(loss);
            } catch (const NumericalError& e) {
                throw NumericalError("calibration diverged at step " + std::to_string(s.steps) + ": " + e.what());
            }
            std::vector<double> grad(n);
            k = 0;
            for (std::size_t l = 0; l < n_layers; ++l) {
                const Tensor<float> g = tape.grad(hv.ffn[l]);
                for (const int i : retained[l].ffn) grad[k++] = static_cast<double>(g[static_cast<std::size_t>(i)]);
            }
            for (std::size_t l = 0; l < n_layers; ++l) {
                const Tensor<float> g = tape.grad(hv.kv[l]);
                for (const int i : retained[l].kv) grad[k++] = static_cast<double>(g[static_cast<std::size_t>(i)]);
            }
            for (const double g : grad) {
                if (!std::isfinite(g)) throw NumericalError("calibration: non-finite gradient");
            }
            opt.step(std::span<double>(flat), std::span<const double>(grad));
            s.losses.push_back(loss_value);
            ++s.steps;
        }
    }

    std::size_t k = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
        for (double& g : s.gamma_ffn[l]) g = static_cast<double>(static_cast<float>(flat[k++]));
    }
    for (std::size_t l = 0; l < n_layers; ++l) {
        for (double& g : s.gamma_kv[l]) g = static_cast<double>(static_cast<float>(flat[k++]));
    }
    s.final_loss = s.steps == 0 ? s.initial_loss : masked_loss(weights, s, data);
    if (s.final_loss > s.initial_loss + config.regression_tolerance) {
        const ScaleState reset = identity_scales(retained);
        s.gamma_ffn = reset.gamma_ffn;
        s.gamma_kv = reset.gamma_kv;
        s.final_loss = s.initial_loss;
        s.reverted = true;
    }
    for (std::size_t l = 0; l < n_layers; ++l) {
        for (std::size_t j = 0; j < s.gamma_ffn[l].size(); ++j) {
            if (std::fabs(s.gamma_ffn[l][j] - 1.0) > config.anomaly_threshold) {
                s.anomalies.push_back({static_cast<int>(l), false, retained[l].ffn[j], s.gamma_ffn[l][j]});
            }
        }
        for (std::size_t j = 0; j < s.gamma_kv[l].size(); ++j) {
            if (std::fabs(s.gamma_kv[l][j] - 1.0) > config.anomaly_threshold) {
                s.anomalies.push_back({static_cast<int>(l), true, retained[l].kv[j], s.gamma_kv[l][j]});
            }
        }
    }
    return s;
}

}  // namespace bprune
