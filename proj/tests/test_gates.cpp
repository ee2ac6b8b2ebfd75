// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "gradient_checks.h"

using namespace bprune;
using namespace bprune::testing;

namespace {

TokenDataset random_dataset(std::size_t count, std::size_t window, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<int>> seqs;
    for (std::size_t i = 0; i < count; ++i) seqs.push_back(random_tokens(window + 1, rng));
    return TokenDataset(window, std::move(seqs));
}

struct Fixture {
    Weights<float> weights = Weights<float>::from_checkpoint(random_checkpoint(ModelConfig::toy(), 31));
    PrunableRegistry registry = PrunableRegistry::from_config(ModelConfig::toy());
    BudgetSpec budget = make_budget(registry, Rational(1, 2));
};

}  // namespace

TEST_CASE("score gradient at s = 0 and tau = 1.5 is 1/6") {
    const std::vector<double> one{1.0}, half{0.5};
    CHECK(score_gradient(one, half, 1.5)[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("score gradient vanishes for decided units") {
    const std::vector<double> one{1.0, 1.0};
    const std::vector<double> p{sigmoid(-40.0), sigmoid(40.0)};
    const std::vector<double> g = score_gradient(one, p, 1.5);
    CHECK(std::abs(g[0]) < 1e-15);
    CHECK(std::abs(g[1]) < 1e-15);
}

TEST_CASE("score gradient matches finite differences of sigmoid(s / tau)") {
    CHECK(score_gradient_check(1) < 1e-8);
}

TEST_CASE("score gradient rejects bad input") {
    const std::vector<double> a{1.0}, b{0.5, 0.5};
    CHECK_THROWS_AS(score_gradient(a, b, 1.5), ShapeError);
    CHECK_THROWS(score_gradient(a, a, 0.0));
}

TEST_CASE("surrogate gates carry the hard mask forward and the identity backward") {
    const ModelConfig c = two_layer_config();
    const PrunableRegistry reg = PrunableRegistry::from_config(c);
    std::vector<double> p(reg.size(), 0.3);
    Mask keep(reg.size(), 1);
    keep[3] = 0;
    keep[*reg.index_of(1, UnitKind::kv_group, 0)] = 0;
    HardMask m;
    m.keep = keep;
    Tape<double> tape;
    const SurrogateGates<double> g = surrogate_gates(tape, m, p, reg);
    CHECK(tape.value(g.hooks.ffn[0])[3] == 0.0);
    CHECK(tape.value(g.hooks.ffn[0])[4] == 1.0);
    CHECK(tape.value(g.hooks.kv[1])[0] == 0.0);
    CHECK(tape.value(g.hooks.kv[1])[1] == 1.0);

    Tensor<double> w({static_cast<std::size_t>(c.ffn_dim)});
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = static_cast<double>(j) + 1.0;
    tape.backward(ops::weighted_sum(tape, g.hooks.ffn[0], w));
    const Tensor<double> dp = tape.grad(g.ffn_p[0]);
    CHECK(dp == w);
}

TEST_CASE("end-to-end gate gradient matches finite differences") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const GateGradientReport r = gate_gradient_check(seed);
        INFO("seed " << seed << " worst " << r.worst_rel_err);
        CHECK(r.worst_rel_err < 1e-6);
        CHECK(r.kept_checked > 0);
        CHECK(r.pruned_checked > 0);
    }
}

TEST_CASE("mask stability examples") {
    const std::vector<Rational> costs(10, Rational(1));
    const std::vector<int> groups(10, 0);
    const PrunableRegistry reg = PrunableRegistry::from_units(costs, groups);
    StabilityTrace same{50, {0, 50}, {Mask{1, 1, 0, 0, 1, 0, 1, 0, 1, 1}, Mask{1, 1, 0, 0, 1, 0, 1, 0, 1, 1}}};
    CHECK(overall_stability(same) == std::vector<double>{1.0});
    StabilityTrace two{50, {0, 50}, {Mask{1, 1, 0, 0, 1, 0, 1, 0, 1, 1}, Mask{0, 1, 0, 0, 1, 0, 1, 1, 1, 1}}};
    CHECK(overall_stability(two)[0] == doctest::Approx(0.8).epsilon(1e-15));
    const auto kinds = mask_stability(two, reg);
    REQUIRE(kinds.size() == 1);
    CHECK(kinds[0].series[0] == doctest::Approx(0.8).epsilon(1e-15));
    StabilityTrace one{50, {0}, {Mask(10, 1)}};
    CHECK_THROWS(overall_stability(one));
    CHECK_THROWS(mask_stability(one, reg));
}

TEST_CASE("snapshot interval defaults") {
    CHECK(resolve_snapshot_interval(0, 2048) == 200);
    CHECK(resolve_snapshot_interval(0, 999) == 50);
    CHECK(resolve_snapshot_interval(7, 999) == 7);
}

TEST_CASE("polarization") {
    const std::vector<double> p{0.5, 1.0, 0.0, 0.75};
    CHECK(polarization(p) == doctest::Approx(0.3125));
}

TEST_CASE("zero learning rate keeps the initial index-prefix mask") {
    Fixture f;
    GateConfig cfg;
    cfg.adam.lr = 0.0;
    cfg.epochs = 1;
    const TokenDataset data = random_dataset(3, 16, 1);
    const GateResult r = train_gates(f.weights, f.registry, f.budget, data, cfg);
    const std::vector<double> half(f.registry.size(), 0.5);
    CHECK(r.final_mask.keep == project(half, f.registry, f.budget).keep);
    for (const double s : r.state.scores) CHECK(s == 0.0);
}

TEST_CASE("a unit with a large score is kept in the first projection") {
    Fixture f;
    GateConfig cfg;
    cfg.epochs = 1;
    const std::size_t unit = 900;
    std::vector<double> scores(f.registry.size(), 0.0);
    scores[unit] = 50.0;
    cfg.initial_scores = scores;
    const TokenDataset data = random_dataset(1, 16, 2);
    const std::vector<double> half(f.registry.size(), 0.5);
    REQUIRE(project(half, f.registry, f.budget).keep[unit] == 0);
    bool kept = false;
    train_gates(f.weights, f.registry, f.budget, data, cfg, [&](const GateStep& s) {
        if (s.step == 0) kept = s.mask->keep[unit] == 1;
    });
    CHECK(kept);
}

TEST_CASE("gate training leaves the backbone untouched and the per-step mask feasible") {
    Fixture f;
    const Weights<float> before = f.weights;
    GateConfig cfg;
    cfg.epochs = 4;
    cfg.snapshot_interval = 4;
    const TokenDataset data = random_dataset(3, 16, 3);
    std::vector<double> step_losses;
    int steps = 0;
    const GateResult r = train_gates(f.weights, f.registry, f.budget, data, cfg, [&](const GateStep& s) {
        ++steps;
        CHECK(mask_cost(s.mask->keep, f.registry) <= f.budget.budget);
        step_losses.push_back(s.loss);
    });
    CHECK(steps == 12);
    const auto a = before.parameters();
    const auto b = f.weights.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);
    for (const std::int64_t t : r.cost_ticks) CHECK(f.budget.admits(t));
    CHECK(r.losses == step_losses);
    // Snapshots at steps 0, 4 and 8 plus the final mask.
    CHECK(r.trace.snapshots.size() == 4);
    CHECK(overall_stability(r.trace).size() == 3);
}

TEST_CASE("surrogate forward loss equals the plain masked forward") {
    Fixture f;
    GateConfig cfg;
    cfg.epochs = 3;
    const TokenDataset data = random_dataset(1, 24, 4);
    train_gates(f.weights, f.registry, f.budget, data, cfg, [&](const GateStep& s) {
        const GateHooks<float> hooks = hooks_from_mask(f.weights, s.mask->keep, f.registry);
        CHECK(s.loss == window_loss(f.weights, data[0], &hooks));
    });
}

TEST_CASE("gate training is deterministic given the seed") {
    Fixture f;
    GateConfig cfg;
    cfg.epochs = 1;
    cfg.seed = 5;
    const TokenDataset data = random_dataset(4, 16, 5);
    const GateResult a = train_gates(f.weights, f.registry, f.budget, data, cfg);
    const GateResult b = train_gates(f.weights, f.registry, f.budget, data, cfg);
    CHECK(a.state.scores == b.state.scores);
    CHECK(a.final_mask.keep == b.final_mask.keep);
    cfg.seed = 6;
    CHECK(train_gates(f.weights, f.registry, f.budget, data, cfg).state.scores != a.state.scores);
}

TEST_CASE("gumbel runs finish with the noise-free projection") {
    Fixture f;
    GateConfig cfg;
    cfg.epochs = 1;
    cfg.rule = RankingRule{RankingVariant::gumbel_topk, 17, 1.0};
    const TokenDataset data = random_dataset(4, 16, 6);
    const GateResult r = train_gates(f.weights, f.registry, f.budget, data, cfg);
    CHECK(r.final_mask.keep == project(r.state.probabilities(), f.registry, f.budget).keep);
}

TEST_CASE("gate training rejects mismatched inputs") {
    Fixture f;
    GateConfig cfg;
    const TokenDataset data = random_dataset(1, 16, 7);
    const PrunableRegistry other = PrunableRegistry::from_config(two_layer_config());
    CHECK_THROWS(train_gates(f.weights, other, make_budget(other, Rational(1, 2)), data, cfg));
    const TokenDataset empty(16, {});
    CHECK_THROWS(train_gates(f.weights, f.registry, f.budget, empty, cfg));
}

TEST_CASE("gate log carries the per-kind stability series") {
    Fixture f;
    GateConfig cfg;
    cfg.epochs = 2;
    cfg.snapshot_interval = 2;
    const TokenDataset data = random_dataset(3, 16, 8);
    const GateResult r = train_gates(f.weights, f.registry, f.budget, data, cfg);
    const nlohmann::json log = r.log(f.registry, f.budget);
    CHECK(log["stability"]["all"].size() == 3);
    CHECK(log["stability"]["ffn"].size() == 3);
    CHECK(log["stability"]["kv"].size() == 3);
    CHECK(log["loss"].size() == 6);
}
