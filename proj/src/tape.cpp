// SPDX-License-Identifier: Apache-2.0
#include "bprune/tape.h"

#include <sstream>

namespace bprune {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
Var Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::leaf_ref(const Tensor<T>& value, bool requires_grad) {
    Node n;
    n.ref = &value;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (const Var in : inputs) {
        if (in.valid() && nodes_.at(in.id).requires_grad) needs = true;
    }
    Node n;
    n.owned = std::move(value);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.ref ? *n.ref : n.owned;
}

template <typename T>
Tensor<T> Tape<T>::grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() == 0 && value(v).size() != 0) return Tensor<T>(value(v).shape());
    return n.grad;
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.shape() != value(v).shape()) n.grad = Tensor<T>(value(v).shape());
    return n.grad;
}

template <typename T>
void Tape<T>::backward(Var out) {
    if (value(out).size() != 1) {
        throw ShapeError("backward: output must be a single element, got " + shape_str(value(out).shape()));
    }
    backward(out, Tensor<T>::filled(value(out).shape(), T(1)));
}

template <typename T>
void Tape<T>::backward(Var out, const Tensor<T>& seed) {
    if (seed.shape() != value(out).shape()) throw ShapeError("backward: seed shape mismatch");
    for (Node& n : nodes_) n.grad = Tensor<T>();
    if (!nodes_.at(out.id).requires_grad) return;
    grad_buffer(out) = seed;
    for (std::size_t i = out.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.backward || n.grad.size() == 0) continue;
        // Inputs always precede their outputs, so this node's buffer is final here.
        n.backward(*this, n.grad);
    }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace bprune
