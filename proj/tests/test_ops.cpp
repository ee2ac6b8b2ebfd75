// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "op_cases.h"

using namespace bprune;
using namespace bprune::testing;

TEST_CASE("every op matches central finite differences on 10 random instances") {
    for (const OpCase& c : op_cases()) {
        for (std::uint64_t k = 0; k < 10; ++k) {
            Rng rng(derive_seed(1234, k));
            const double err = grad_check(c.build, c.inputs(rng), derive_seed(99, k));
            INFO(c.name << " instance " << k << " rel err " << err);
            CHECK(err < 1e-6);
        }
    }
}

TEST_CASE("matmul by the identity returns the input") {
    Rng rng(5);
    Tape<double> tape;
    const Tensor<double> x = random_tensor({3, 4}, rng);
    Tensor<double> eye({3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
    const Var y = ops::matmul(tape, tape.constant(eye), tape.constant(x));
    CHECK(tape.value(y) == x);
}

TEST_CASE("matmul hand example") {
    Tape<double> tape;
    const Var a = tape.constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
    const Var b = tape.constant(Tensor<double>({2, 1}, {1, 1}));
    const Tensor<double>& y = tape.value(ops::matmul(tape, a, b));
    CHECK(y.shape() == Shape{2, 1});
    CHECK(y[0] == 3.0);
    CHECK(y[1] == 7.0);
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
    Tape<double> tape;
    const Var a = tape.constant(Tensor<double>({2, 3}));
    const Var b = tape.constant(Tensor<double>({2, 3}));
    CHECK_THROWS_AS(ops::matmul(tape, a, b), ShapeError);
}

TEST_CASE("rmsnorm of ones and zeros") {
    Tape<double> tape;
    const Var w = tape.constant(Tensor<double>::filled({6}, 1.0));
    const Tensor<double>& ones = tape.value(ops::rmsnorm(tape, tape.constant(Tensor<double>::filled({2, 6}, 1.0)), w, 1e-12));
    for (const double v : ones.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-10));
    const Tensor<double>& zeros = tape.value(ops::rmsnorm(tape, tape.constant(Tensor<double>({2, 6})), w, 1e-5));
    for (const double v : zeros.data()) CHECK(v == 0.0);
}

TEST_CASE("softmax cross-entropy of uniform logits is ln 256") {
    Tape<double> tape;
    const std::vector<int> targets{0, 17, 255};
    const Var l = ops::softmax_ce(tape, tape.constant(Tensor<double>({3, 256})), targets);
    CHECK(tape.value(l)[0] == doctest::Approx(std::log(256.0)).epsilon(1e-12));
}

TEST_CASE("softmax cross-entropy with a huge target margin tends to zero") {
    Tensor<double> logits({2, 8});
    logits.at(0, 3) = 1e4;
    logits.at(1, 6) = 1e4;
    Tape<double> tape;
    const std::vector<int> targets{3, 6};
    CHECK(tape.value(ops::softmax_ce(tape, tape.constant(logits), targets))[0] < 1e-12);
}

TEST_CASE("softmax cross-entropy matches direct summation") {
    Rng rng(21);
    const Tensor<double> logits = random_tensor({8, 16}, rng, 3.0);
    const std::vector<int> targets = random_tokens(8, rng, 16);
    double expected = 0.0;
    for (std::size_t t = 0; t < 8; ++t) {
        double z = 0.0;
        for (std::size_t v = 0; v < 16; ++v) z += std::exp(logits.at(t, v));
        expected += std::log(z) - logits.at(t, static_cast<std::size_t>(targets[t]));
    }
    expected /= 8.0;
    Tape<double> tape;
    const double got = tape.value(ops::softmax_ce(tape, tape.constant(logits), targets))[0];
    CHECK(std::abs(got - expected) < 1e-10);
}

TEST_CASE("softmax cross-entropy gradient is softmax minus one-hot over T") {
    Rng rng(8);
    const Tensor<double> logits = random_tensor({3, 5}, rng);
    const std::vector<int> targets{4, 0, 2};
    Tape<double> tape;
    const Var x = tape.parameter(logits);
    tape.backward(ops::softmax_ce(tape, x, targets));
    const Tensor<double> g = tape.grad(x);
    for (std::size_t t = 0; t < 3; ++t) {
        double z = 0.0;
        for (std::size_t v = 0; v < 5; ++v) z += std::exp(logits.at(t, v));
        for (std::size_t v = 0; v < 5; ++v) {
            const double want = (std::exp(logits.at(t, v)) / z - (static_cast<int>(v) == targets[t] ? 1.0 : 0.0)) / 3.0;
            CHECK(g.at(t, v) == doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("out-of-range targets and tokens are rejected") {
    Tape<double> tape;
    const Var logits = tape.constant(Tensor<double>({2, 4}));
    const std::vector<int> bad_target{0, 4};
    CHECK_THROWS_AS(ops::softmax_ce(tape, logits, bad_target), std::out_of_range);
    const std::vector<int> bad_token{-1};
    CHECK_THROWS_AS(ops::embedding(tape, logits, bad_token), std::out_of_range);
}

TEST_CASE("sigmoid and silu at zero") {
    Tape<double> tape;
    const Var z = tape.constant(Tensor<double>({1}));
    CHECK(tape.value(ops::sigmoid(tape, z))[0] == 0.5);
    CHECK(tape.value(ops::silu(tape, z))[0] == 0.0);
}

TEST_CASE("rope at position zero is the identity") {
    Rng rng(3);
    const Tensor<double> x = random_tensor({1, 16}, rng);
    Tape<double> tape;
    const std::vector<int> pos{0};
    CHECK(tape.value(ops::rope(tape, tape.constant(x), 2, pos)) == x);
}

TEST_CASE("rope preserves per-head norms") {
    Rng rng(4);
    const Tensor<double> x = random_tensor({3, 8}, rng);
    Tape<double> tape;
    const std::vector<int> pos{5, 9, 100};
    const Tensor<double>& y = tape.value(ops::rope(tape, tape.constant(x), 2, pos));
    for (std::size_t r = 0; r < 3; ++r) {
        double nx = 0.0, ny = 0.0;
        for (std::size_t c = 0; c < 8; ++c) {
            nx += x.at(r, c) * x.at(r, c);
            ny += y.at(r, c) * y.at(r, c);
        }
        CHECK(ny == doctest::Approx(nx).epsilon(1e-12));
    }
}

TEST_CASE("straight-through forward is the hard value and backward is the identity") {
    Tape<double> tape;
    const Var soft = tape.parameter(Tensor<double>({3}, {0.2, 0.7, 0.5}));
    const Var st = ops::straight_through(tape, Tensor<double>({3}, {0.0, 1.0, 0.0}), soft);
    CHECK(tape.value(st) == Tensor<double>({3}, {0.0, 1.0, 0.0}));
    tape.backward(ops::weighted_sum(tape, st, Tensor<double>({3}, {1.0, 2.0, 3.0})));
    CHECK(tape.grad(soft) == Tensor<double>({3}, {1.0, 2.0, 3.0}));
}

TEST_CASE("gradients accumulate when a value is reused") {
    Tape<double> tape;
    const Var x = tape.parameter(Tensor<double>({2}, {1.5, -2.0}));
    const Var y = ops::add(tape, ops::mul(tape, x, x), x);
    tape.backward(ops::weighted_sum(tape, y, Tensor<double>::filled({2}, 1.0)));
    CHECK(tape.grad(x) == Tensor<double>({2}, {4.0, -3.0}));
}

TEST_CASE("non-finite forward values are rejected") {
    Tape<double> tape;
    const Var x = tape.constant(Tensor<double>({1}, {1e300}));
    CHECK_THROWS_AS(ops::mul(tape, x, x), NumericalError);
}

TEST_CASE("forward results are bit-identical across runs") {
    const auto run = [] {
        Rng rng(77);
        Tape<float> tape;
        const Tensor<float> q = random_tensor({6, 16}, rng).cast<float>();
        const Tensor<float> k = random_tensor({6, 8}, rng).cast<float>();
        const Tensor<float> v = random_tensor({6, 8}, rng).cast<float>();
        return tape.value(ops::causal_attention(tape, tape.constant(q), tape.constant(k), tape.constant(v), 4, 2));
    };
    CHECK(run() == run());
}
