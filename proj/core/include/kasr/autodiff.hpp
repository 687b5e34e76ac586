// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode automatic differentiation over dense row-major
// tensors. Only the operations the encoder-decoder needs are provided.
//
// A Graph records nodes in creation order; backward() walks them in reverse
// exactly once. Parameters enter a graph by reference through Graph::param()
// and must outlive it. Instantiated for float (training, inference) and
// double (gradient checks).

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "kasr/rng.hpp"

namespace kasr::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <class T>
struct Tensor {
    Shape shape;
    std::vector<T> data;
    bool requires_grad = false;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T{});
    Tensor(Shape s, std::vector<T> values);

    std::size_t numel() const { return data.size(); }
    std::size_t dim() const { return shape.size(); }
};

// Live and peak element counts of graph-owned activations on this thread.
struct ActivationStats {
    std::size_t live = 0;
    std::size_t peak = 0;
};
ActivationStats& activation_stats();
void reset_activation_peak();

enum class Op {
    kLeaf,
    kParam,
    kConstant,
    kMatmul,
    kAdd,
    kMul,
    kMulScalar,
    kGelu,
    kSoftmax,
    kLayerNorm,
    kConv1d,
    kEmbedding,
    kCrossEntropy,
    kDropout,
    kTranspose,
    kReshape,
    kSlice,
    kSum,
    kCheckpoint,
    kCustom,
};

std::string_view op_name(Op op);

template <class T>
class Graph;

template <class T>
struct Var {
    Graph<T>* graph = nullptr;
    std::uint32_t id = 0;

    bool valid() const { return graph != nullptr; }
    Shape shape() const;
    std::span<const T> value() const;
    bool requires_grad() const;
};

namespace detail {
// Element buffer whose size is reported to ActivationStats.
template <class T>
class TrackedBuffer {
public:
    TrackedBuffer() = default;
    explicit TrackedBuffer(std::vector<T> v);
    TrackedBuffer(TrackedBuffer&& other) noexcept;
    TrackedBuffer& operator=(TrackedBuffer&& other) noexcept;
    TrackedBuffer(const TrackedBuffer&) = delete;
    TrackedBuffer& operator=(const TrackedBuffer&) = delete;
    ~TrackedBuffer();

    std::span<const T> span() const { return data_; }

private:
    std::vector<T> data_;
};
}  // namespace detail

template <class T>
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::uint32_t self)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) noexcept = default;
    Graph& operator=(Graph&&) noexcept = default;

    Var<T> leaf(Tensor<T> value, bool requires_grad);
    Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }
    // Reference to an external tensor; requires_grad follows tensor.requires_grad.
    // Repeated calls with the same tensor return the same node.
    Var<T> param(const Tensor<T>& tensor);

    // Appends an op node. Values are checked for finiteness (Error kNumerical).
    Var<T> record(Op op, Shape shape, std::vector<T> value, std::vector<std::uint32_t> inputs, BackwardFn backward);

    // loss must be a single-element node that depends on a requires_grad leaf.
    void backward(Var<T> loss);
    // Seeds d(out) with `seed` instead of 1.
    void backward(Var<T> out, std::span<const T> seed);

    std::size_t size() const { return nodes_.size(); }
    Op op(std::uint32_t id) const { return nodes_[id].op; }
    const Shape& shape(std::uint32_t id) const { return nodes_[id].shape; }
    std::span<const T> value(std::uint32_t id) const;
    bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
    const std::vector<std::uint32_t>& inputs(std::uint32_t id) const { return nodes_[id].inputs; }

    // Gradient of a node; empty span when none was produced.
    std::span<const T> grad(Var<T> v) const;
    std::span<const T> grad(std::uint32_t id) const;
    // Zero-initialised gradient buffer for accumulation from a backward closure.
    std::vector<T>& grad_buffer(std::uint32_t id);

    // Gradient for a parameter tensor, or nullptr if it never received one.
    const std::vector<T>* param_grad(const Tensor<T>& tensor) const;
    std::vector<const Tensor<T>*> params() const;
    const std::uint32_t* find_param(const Tensor<T>* tensor) const;

private:
    struct Node {
        Op op = Op::kLeaf;
        Shape shape;
        detail::TrackedBuffer<T> value;
        const Tensor<T>* external = nullptr;
        std::vector<T> grad;
        bool requires_grad = false;
        std::vector<std::uint32_t> inputs;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
    std::unordered_map<const Tensor<T>*, std::uint32_t> param_ids_;
    std::vector<const Tensor<T>*> param_order_;
};

// --- operations -------------------------------------------------------------

// a [..., m, k] x b [..., k, n]; b may also be 2-D and is then shared across
// the leading dimensions of a.
template <class T> Var<T> matmul(Var<T> a, Var<T> b);
// Elementwise add; b's shape must equal a's shape or a suffix of it.
template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> mul(Var<T> a, Var<T> b);
template <class T> Var<T> mul_scalar(Var<T> a, T s);
// tanh approximation.
template <class T> Var<T> gelu(Var<T> a);
// Softmax over the last dimension (max-subtracted). With causal=true the input
// is read as [..., T, S] and entry (i, j) is zero for j > i.
template <class T> Var<T> softmax(Var<T> a, bool causal = false);
template <class T> Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps);
// x [B, C_in, L] or [C_in, L]; w [C_out, C_in, K] with odd K; bias [C_out] or
// invalid. Same padding K/2; output length ceil(L / stride).
template <class T> Var<T> conv1d(Var<T> x, Var<T> w, Var<T> bias, int stride);
// table [V, d]; returns ids_shape + [d].
template <class T> Var<T> embedding(Var<T> table, std::span<const int> ids, const Shape& ids_shape);
// Whisper-style sin/cos table [n, d], constant.
template <class T> Var<T> sinusoidal_positions(Graph<T>& g, std::size_t n, std::size_t d);
// logits [..., L, V], one target per row. Each sequence (leading index) is
// averaged over its non-ignored targets, then sequences with at least one
// target are averaged.
template <class T> Var<T> cross_entropy(Var<T> logits, std::span<const int> targets, int ignore_index);
template <class T> Var<T> dropout(Var<T> x, double p, Rng& rng);
template <class T> Var<T> transpose(Var<T> x, std::size_t axis0, std::size_t axis1);
template <class T> Var<T> reshape(Var<T> x, Shape shape);
template <class T> Var<T> slice(Var<T> x, std::size_t axis, std::size_t begin, std::size_t end);
template <class T> Var<T> sum(Var<T> x);

// Activation checkpointing: runs fn without keeping its intermediates and
// re-runs it during backward. fn must be deterministic and may pull
// parameters into the graph it receives via Graph::param().
template <class T>
using SegmentFn = std::function<Var<T>(Graph<T>&, std::span<const Var<T>>)>;
template <class T> Var<T> checkpoint(Graph<T>& g, std::vector<Var<T>> inputs, SegmentFn<T> fn);

// --- gradient checking ------------------------------------------------------

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::vector<double> rel_errors;  // per coordinate
    std::vector<double> analytic;
    std::vector<double> numeric;
    bool passed = false;
};

// Compares the analytic gradient of scalar f at x with central differences.
// Relative error per coordinate is |a - n| / max(|a|, |n|, abs_floor).
template <class T>
GradCheckReport grad_check(const std::function<Var<T>(Graph<T>&, Var<T>)>& f, const Tensor<T>& x, T h, double tol,
                           double abs_floor = 1e-2);

}  // namespace kasr::ad
