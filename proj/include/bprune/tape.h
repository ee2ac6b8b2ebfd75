// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "bprune/tensor.h"

namespace bprune {

// Handle to a value recorded on a Tape.
struct Var {
    static constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
    std::size_t id = none;
    bool valid() const { return id != none; }
};

// Reverse-mode gradient tape. Ops append nodes in execution order; backward()
// walks them strictly in reverse and accumulates gradients additively into the
// inputs that require them. A tape is single-threaded; independent tapes may
// run concurrently.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf owning its value.
    Var leaf(Tensor<T> value, bool requires_grad);
    // Leaf referencing caller-owned storage, which must outlive the tape and
    // stay unmodified until the tape is discarded.
    Var leaf_ref(const Tensor<T>& value, bool requires_grad);

    Var constant(Tensor<T> value) { return leaf(std::move(value), false); }
    Var parameter(Tensor<T> value) { return leaf(std::move(value), true); }

    // Records an op output. requires_grad is inferred from the inputs; when no
    // input needs a gradient the backward function is dropped.
    Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn backward);

    const Tensor<T>& value(Var v) const;
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

    // Gradient of the last backward() target w.r.t. v (zeros when unreached).
    Tensor<T> grad(Var v) const;

    // Mutable accumulation buffer for op backward functions.
    Tensor<T>& grad_buffer(Var v);

    // Seeds d(out)/d(out) = 1 for a single-element output and runs the reverse sweep.
    void backward(Var out);
    // Same, with an explicit seed gradient of the output's shape.
    void backward(Var out, const Tensor<T>& seed);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> owned;
        const Tensor<T>* ref = nullptr;
        Tensor<T> grad;
        bool requires_grad = false;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace bprune
