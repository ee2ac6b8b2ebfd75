// SPDX-License-Identifier: Apache-2.0
#include "bprune/adamw.h"

#include <cmath>

#include "bprune/errors.h"

namespace bprune {

void to_json(nlohmann::json& j, const AdamWConfig& c) {
    j = nlohmann::json{
        {"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}, {"weight_decay", c.weight_decay}};
}

AdamW::AdamW(std::size_t n, AdamWConfig config) : config_(config), m_(n, 0.0), v_(n, 0.0) {}

template <typename T>
void AdamW::step(std::span<T> params, std::span<const T> grads, double lr_scale) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
        throw ShapeError("adamw: parameter block size changed");
    }
    ++t_;
    const double lr = config_.lr * lr_scale;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = static_cast<double>(grads[i]);
        m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
        v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g * g;
        const double m_hat = m_[i] / bc1;
        const double v_hat = v_[i] / bc2;
        double p = static_cast<double>(params[i]);
        p -= lr * config_.weight_decay * p;
        p -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
        params[i] = static_cast<T>(p);
    }
}

template void AdamW::step<float>(std::span<float>, std::span<const float>, double);
template void AdamW::step<double>(std::span<double>, std::span<const double>, double);

}  // namespace bprune
