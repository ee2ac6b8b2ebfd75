// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace bprune {

// Shape or dimension disagreement between operands.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// NaN/Inf produced by a forward op, or a diverging loss.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A structural invariant was violated (budget overshoot, infeasible guard, empty group).
class InvariantError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Bad user-provided configuration (flags, presets, files).
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace bprune
