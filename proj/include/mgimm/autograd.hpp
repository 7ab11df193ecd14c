#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mgimm/tensor.hpp"

namespace mgimm {

template <typename T>
class Tape;

/// Parameter name -> gradient of identical shape.
template <typename T>
using GradientMap = std::map<std::string, Tensor<T>>;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while
/// its tape is alive.
template <typename T>
class Var {
public:
    Var() = default;

    bool valid() const { return tape_ != nullptr; }
    Tape<T>& tape() const { return *tape_; }
    std::size_t id() const { return id_; }

    const Tensor<T>& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    bool requires_grad() const;

private:
    friend class Tape<T>;
    Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Reverse-mode gradient tape. Nodes are appended in evaluation order, so
/// reverse insertion order is a valid topological order for backward().
/// A tape is built for one forward pass and discarded afterwards.
template <typename T>
class Tape {
public:
    /// Propagates grad(self) into the grads of the node's inputs.
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Value that never receives a gradient.
    Var<T> constant(Tensor<T> value);

    /// Leaf node. Named leaves with requires_grad=true appear in the map
    /// returned by backward().
    Var<T> leaf(Tensor<T> value, bool requires_grad, std::string name = {});

    /// Result of an op. The node requires grad iff any input does; `fn` is
    /// dropped otherwise.
    Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn);
    Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn);

    /// Gradients of a scalar loss for every named trainable leaf. Leaves the
    /// loss does not depend on map to zeros. Repeated calls give identical
    /// results.
    GradientMap<T> backward(Var<T> loss);

    const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    /// Gradient buffer of a node, zero-initialised on first access.
    Tensor<T>& grad(std::size_t id);

    std::size_t size() const { return nodes_.size(); }

    /// Names of all named leaves recorded so far, trainable or not.
    std::vector<std::string> leaf_names() const;

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        std::string name;
        BackwardFn backward;
    };

    // deque keeps references to earlier nodes stable while new ones are added
    std::deque<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
    return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
    return tape_->requires_grad(id_);
}

// ---- primitive ops -------------------------------------------------------
// All 2-D ops treat rank-1 tensors as a single row unless stated otherwise.

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T factor);

/// a[m,n] + b[n] broadcast over rows.
template <typename T> Var<T> add_row(Var<T> a, Var<T> b);

/// c[m,n] = a[m,k] * b[k,n].
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);

/// c[m,n] = a[m,k] * b[n,k]^T.
template <typename T> Var<T> matmul_nt(Var<T> a, Var<T> b);

template <typename T> Var<T> transpose(Var<T> a);

/// x[m,in] * weight[out,in]^T (+ bias[out]).
template <typename T> Var<T> linear(Var<T> x, Var<T> weight);
template <typename T> Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias);

/// Scalar sum / mean of all elements (shape {1}).
template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);

/// Stack along the token (row) axis.
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_rows(Var<T> a, std::size_t start, std::size_t count);

/// Stack along the feature (column) axis.
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_cols(Var<T> a, std::size_t start, std::size_t count);

/// Rows of table[V,d] selected by ids -> [n,d].
template <typename T> Var<T> embedding(Var<T> table, const std::vector<int>& ids);

constexpr double kLayerNormEps = 1e-5;

/// Per-row normalisation with learned gain and shift, eps = 1e-5.
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta);

/// Exact (erf) GELU.
template <typename T> Var<T> gelu(Var<T> x);

/// Softmax over the last axis with max subtraction. With causal=true on a
/// square [n,n] input, entry (i,j) for j>i is masked out.
template <typename T> Var<T> softmax(Var<T> x, bool causal = false);

/// Mean negative log-likelihood of targets over rows whose target differs
/// from ignore_id. Throws if every row is ignored.
template <typename T>
Var<T> cross_entropy(Var<T> logits, const std::vector<int>& targets, int ignore_id = -1);

// ---- detached helpers ----------------------------------------------------

/// Plain matrix product on values (no tape).
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Softmax over the last axis on values (no tape).
template <typename T> Tensor<T> softmax(const Tensor<T>& x);

}  // namespace mgimm
