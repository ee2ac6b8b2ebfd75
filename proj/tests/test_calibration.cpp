// SPDX-License-Identifier: Apache-2.0
#include "bprune/calibration.h"
#include "bprune/gates.h"
#include "doctest.h"
#include "support.h"

using namespace bprune;
using namespace bprune::testing;

namespace {

struct Fixture {
    Weights<float> weights = Weights<float>::from_checkpoint(random_checkpoint(ModelConfig::toy(), 41));
    PrunableRegistry registry = PrunableRegistry::from_config(ModelConfig::toy());
    Mask mask;
    Selection retained;
    TokenDataset data{16, {}};

    Fixture() {
        Rng rng(3);
        std::vector<double> p(registry.size());
        for (double& v : p) v = rng.uniform();
        mask = project(p, registry, make_budget(registry, Rational(1, 2))).keep;
        retained = selection_from_mask(mask, registry);
        std::vector<std::vector<int>> seqs;
        for (int i = 0; i < 6; ++i) seqs.push_back(random_tokens(17, rng));
        data = TokenDataset(16, std::move(seqs));
    }
};

}  // namespace

TEST_CASE("identity scales reproduce the masked model bitwise") {
    Fixture f;
    const ScaleState s = identity_scales(f.retained);
    const GateHooks<float> masked = hooks_from_mask(f.weights, f.mask, f.registry);
    const GateHooks<float> scaled = s.hooks(f.weights.config);
    CHECK(masked.ffn == scaled.ffn);
    CHECK(masked.kv == scaled.kv);
    CHECK(forward(f.weights, f.data[0], &masked) == forward(f.weights, f.data[0], &scaled));
}

TEST_CASE("zero optimization steps leave every scale at one") {
    Fixture f;
    CalibrationConfig cfg;
    cfg.epochs = 0;
    const ScaleState s = calibrate_scales(f.weights, f.retained, f.data, cfg);
    CHECK(s.steps == 0);
    for (const auto& l : s.gamma_ffn) {
        for (const double g : l) CHECK(g == 1.0);
    }
    for (const auto& l : s.gamma_kv) {
        for (const double g : l) CHECK(g == 1.0);
    }
    const GateHooks<float> masked = hooks_from_mask(f.weights, f.mask, f.registry);
    const GateHooks<float> scaled = s.hooks(f.weights.config);
    CHECK(forward(f.weights, f.data[1], &masked) == forward(f.weights, f.data[1], &scaled));
    CHECK(s.final_loss == s.initial_loss);
}

TEST_CASE("one scale per retained unit") {
    Fixture f;
    std::size_t kept = 0;
    for (const auto v : f.mask) kept += v;
    CHECK(identity_scales(f.retained).trainable() == kept);
}

TEST_CASE("calibration trains scales only and never ends worse than it started") {
    Fixture f;
    const Weights<float> before = f.weights;
    CalibrationConfig cfg;
    cfg.seed = 2;
    const ScaleState s = calibrate_scales(f.weights, f.retained, f.data, cfg);
    CHECK(s.steps == 6);
    CHECK(s.final_loss <= s.initial_loss + 1e-6);
    CHECK(s.final_loss == doctest::Approx(masked_loss(f.weights, s, f.data)).epsilon(1e-12));
    const auto a = before.parameters();
    const auto b = f.weights.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);
    if (!s.reverted) {
        bool moved = false;
        for (const auto& l : s.gamma_ffn) {
            for (const double g : l) moved = moved || g != 1.0;
        }
        CHECK(moved);
    }
}

TEST_CASE("calibration is deterministic given the seed") {
    Fixture f;
    CalibrationConfig cfg;
    cfg.seed = 4;
    const ScaleState a = calibrate_scales(f.weights, f.retained, f.data, cfg);
    const ScaleState b = calibrate_scales(f.weights, f.retained, f.data, cfg);
    CHECK(a.gamma_ffn == b.gamma_ffn);
    CHECK(a.gamma_kv == b.gamma_kv);
    CHECK(a.losses == b.losses);
}

TEST_CASE("a precomputed initial loss is used as given") {
    Fixture f;
    CalibrationConfig cfg;
    cfg.epochs = 0;
    cfg.initial_loss = 3.25;
    CHECK(calibrate_scales(f.weights, f.retained, f.data, cfg).initial_loss == 3.25);
}

TEST_CASE("a harmful optimization is reverted and large scales are flagged") {
    Fixture f;
    CalibrationConfig cfg;
    cfg.adam.lr = 5.0;
    const ScaleState s = calibrate_scales(f.weights, f.retained, f.data, cfg);
    CHECK(s.reverted);
    CHECK(s.final_loss == s.initial_loss);
    for (const auto& l : s.gamma_ffn) {
        for (const double g : l) CHECK(g == 1.0);
    }
    CHECK(s.anomalies.empty());

    CalibrationConfig loose = cfg;
    loose.regression_tolerance = 1e9;
    const ScaleState kept = calibrate_scales(f.weights, f.retained, f.data, loose);
    CHECK_FALSE(kept.reverted);
    CHECK_FALSE(kept.anomalies.empty());
    for (const ScaleAnomaly& a : kept.anomalies) CHECK(std::abs(a.gamma - 1.0) > 2.0);
}

TEST_CASE("calibration rejects a mask that empties a group") {
    Fixture f;
    Selection bad = f.retained;
    bad[1].kv.clear();
    CHECK_THROWS_AS(calibrate_scales(f.weights, bad, f.data, CalibrationConfig{}), InvariantError);
}

TEST_CASE("a scale acts linearly on its unit") {
    const Weights<double> w = Weights<double>::from_checkpoint(random_checkpoint(ModelConfig::toy(), 43));
    Rng rng(5);
    const std::vector<int> tokens = random_tokens(20, rng);
    const ForwardOptions first{1, true};
    GateHooks<double> h1 = GateHooks<double>::ones(w);
    GateHooks<double> h0 = h1, h3 = h1;
    h0.ffn[0][40] = 0.0;
    h3.ffn[0][40] = 3.0;
    const Tensor<double> a = forward(w, tokens, &h1, first), b = forward(w, tokens, &h0, first),
                         c = forward(w, tokens, &h3, first);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(c[i] == doctest::Approx(b[i] + 3.0 * (a[i] - b[i])).epsilon(1e-10));
}
