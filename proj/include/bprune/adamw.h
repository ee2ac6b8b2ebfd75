// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"

namespace bprune {

struct AdamWConfig {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

void to_json(nlohmann::json& j, const AdamWConfig& c);

// Decoupled-weight-decay Adam over a flat parameter block. Moments are kept in
// double regardless of the parameter type.
class AdamW {
public:
    AdamW(std::size_t n, AdamWConfig config);

    // One update with bias correction; `lr_scale` multiplies the base rate.
    template <typename T>
    void step(std::span<T> params, std::span<const T> grads, double lr_scale = 1.0);

    std::int64_t steps() const { return t_; }
    const AdamWConfig& config() const { return config_; }
    std::span<const double> first_moment() const { return m_; }
    std::span<const double> second_moment() const { return v_; }

private:
    AdamWConfig config_;
    std::vector<double> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace bprune
