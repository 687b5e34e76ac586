// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0

#include "kasr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "kasr/error.hpp"

namespace kasr::ad {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

std::string_view op_name(Op op) {
    switch (op) {
        case Op::kLeaf: return "leaf";
        case Op::kParam: return "param";
        case Op::kConstant: return "constant";
        case Op::kMatmul: return "matmul";
        case Op::kAdd: return "add";
        case Op::kMul: return "mul";
        case Op::kMulScalar: return "mul_scalar";
        case Op::kGelu: return "gelu";
        case Op::kSoftmax: return "softmax";
        case Op::kLayerNorm: return "layer_norm";
        case Op::kConv1d: return "conv1d";
        case Op::kEmbedding: return "embedding";
        case Op::kCrossEntropy: return "cross_entropy";
        case Op::kDropout: return "dropout";
        case Op::kTranspose: return "transpose";
        case Op::kReshape: return "reshape";
        case Op::kSlice: return "slice";
        case Op::kSum: return "sum";
        case Op::kCheckpoint: return "checkpoint";
        case Op::kCustom: return "custom";
    }
    return "?";
}

template <class T>
Tensor<T>::Tensor(Shape s, T fill) : shape(std::move(s)), data(ad::numel(shape), fill) {}

template <class T>
Tensor<T>::Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != ad::numel(shape)) {
        throw Error(ErrorKind::kShapeMismatch, "tensor data size " + std::to_string(data.size()) +
                                                   " does not match shape " + ad::to_string(shape));
    }
}

ActivationStats& activation_stats() {
    thread_local ActivationStats stats;
    return stats;
}

void reset_activation_peak() {
    auto& s = activation_stats();
    s.peak = s.live;
}

namespace detail {

template <class T>
TrackedBuffer<T>::TrackedBuffer(std::vector<T> v) : data_(std::move(v)) {
    auto& s = activation_stats();
    s.live += data_.size();
    s.peak = std::max(s.peak, s.live);
}

template <class T>
TrackedBuffer<T>::TrackedBuffer(TrackedBuffer&& other) noexcept : data_(std::move(other.data_)) {
    other.data_.clear();
}

template <class T>
TrackedBuffer<T>& TrackedBuffer<T>::operator=(TrackedBuffer&& other) noexcept {
    if (this != &other) {
        activation_stats().live -= data_.size();
        data_ = std::move(other.data_);
        other.data_.clear();
    }
    return *this;
}

template <class T>
TrackedBuffer<T>::~TrackedBuffer() {
    activation_stats().live -= data_.size();
}

}  // namespace detail

// --- Var --------------------------------------------------------------------

template <class T>
Shape Var<T>::shape() const {
    return graph->shape(id);
}

template <class T>
std::span<const T> Var<T>::value() const {
    return graph->value(id);
}

template <class T>
bool Var<T>::requires_grad() const {
    return graph->requires_grad(id);
}

// --- Graph ------------------------------------------------------------------

template <class T>
Var<T> Graph<T>::leaf(Tensor<T> value, bool requires_grad) {
    Node n;
    n.op = requires_grad ? Op::kLeaf : Op::kConstant;
    n.shape = std::move(value.shape);
    n.value = detail::TrackedBuffer<T>(std::move(value.data));
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
Var<T> Graph<T>::param(const Tensor<T>& tensor) {
    if (auto it = param_ids_.find(&tensor); it != param_ids_.end()) return {this, it->second};
    Node n;
    n.op = Op::kParam;
    n.shape = tensor.shape;
    n.external = &tensor;
    n.requires_grad = tensor.requires_grad;
    nodes_.push_back(std::move(n));
    const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
    param_ids_.emplace(&tensor, id);
    param_order_.push_back(&tensor);
    return {this, id};
}

template <class T>
Var<T> Graph<T>::record(Op op, Shape shape, std::vector<T> value, std::vector<std::uint32_t> inputs,
                        BackwardFn backward) {
    if (value.size() != numel(shape)) {
        throw Error(ErrorKind::kShapeMismatch, std::string(op_name(op)) + ": value size does not match shape " +
                                                   ad::to_string(shape));
    }
    for (T v : value) {
        if (!std::isfinite(v)) {
            throw Error(ErrorKind::kNumerical, std::string(op_name(op)) + " produced a non-finite value");
        }
    }
    bool rg = false;
    for (auto i : inputs) rg = rg || nodes_.at(i).requires_grad;
    Node n;
    n.op = op;
    n.shape = std::move(shape);
    n.value = detail::TrackedBuffer<T>(std::move(value));
    n.requires_grad = rg;
    n.inputs = std::move(inputs);
    if (rg) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
std::span<const T> Graph<T>::value(std::uint32_t id) const {
    const Node& n = nodes_[id];
    if (n.external != nullptr) return n.external->data;
    return n.value.span();
}

template <class T>
std::span<const T> Graph<T>::grad(Var<T> v) const {
    return grad(v.id);
}

template <class T>
std::span<const T> Graph<T>::grad(std::uint32_t id) const {
    return nodes_[id].grad;
}

template <class T>
std::vector<T>& Graph<T>::grad_buffer(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(numel(n.shape), T{0});
    return n.grad;
}

template <class T>
const std::vector<T>* Graph<T>::param_grad(const Tensor<T>& tensor) const {
    auto it = param_ids_.find(&tensor);
    if (it == param_ids_.end()) return nullptr;
    const Node& n = nodes_[it->second];
    return n.grad.empty() ? nullptr : &n.grad;
}

template <class T>
std::vector<const Tensor<T>*> Graph<T>::params() const {
    return param_order_;
}

template <class T>
const std::uint32_t* Graph<T>::find_param(const Tensor<T>* tensor) const {
    auto it = param_ids_.find(tensor);
    return it == param_ids_.end() ? nullptr : &it->second;
}

template <class T>
void Graph<T>::backward(Var<T> loss) {
    if (loss.graph != this) throw Error(ErrorKind::kInvalidArgument, "backward: loss belongs to another graph");
    if (numel(nodes_[loss.id].shape) != 1) {
        throw Error(ErrorKind::kShapeMismatch, "backward: loss must be scalar, got " + ad::to_string(nodes_[loss.id].shape));
    }
    const T one{1};
    backward(loss, std::span<const T>(&one, 1));
}

template <class T>
void Graph<T>::backward(Var<T> out, std::span<const T> seed) {
    if (out.graph != this) throw Error(ErrorKind::kInvalidArgument, "backward: output belongs to another graph");
    if (!nodes_[out.id].requires_grad) {
        throw Error(ErrorKind::kInvalidArgument, "backward: output is detached from every trainable tensor");
    }
    if (seed.size() != numel(nodes_[out.id].shape)) {
        throw Error(ErrorKind::kShapeMismatch, "backward: seed size does not match output");
    }
    auto& g0 = grad_buffer(out.id);
    for (std::size_t i = 0; i < seed.size(); ++i) g0[i] += seed[i];

    for (std::uint32_t id = out.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (n.requires_grad && !n.grad.empty() && n.backward) n.backward(*this, id);
        if (n.op != Op::kLeaf && n.op != Op::kParam) std::vector<T>().swap(n.grad);
    }
}

// --- kernels ----------------------------------------------------------------

namespace {

// C[m x n] += A[m x k] * B[k x n]
template <class T>
void gemm_nn(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* c = C + i * n;
        const T* a = A + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[p];
            if (av == T{0}) continue;
            const T* b = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C[m x n] += A[m x s] * B[n x s]^T
template <class T>
void gemm_nt(const T* A, const T* B, T* C, std::size_t m, std::size_t s, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* a = A + i * s;
        T* c = C + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* b = B + j * s;
            T acc{0};
            for (std::size_t p = 0; p < s; ++p) acc += a[p] * b[p];
            c[j] += acc;
        }
    }
}

// C[k x n] += A[m x k]^T * B[m x n]
template <class T>
void gemm_tn(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* a = A + i * k;
        const T* b = B + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[p];
            if (av == T{0}) continue;
            T* c = C + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

template <class T>
Graph<T>& same_graph(Var<T> a, Var<T> b, std::string_view op) {
    if (!a.valid() || !b.valid() || a.graph != b.graph) {
        throw Error(ErrorKind::kInvalidArgument, std::string(op) + ": operands must belong to the same graph");
    }
    return *a.graph;
}

[[noreturn]] void shape_error(std::string_view op, const Shape& a, const Shape& b) {
    throw Error(ErrorKind::kShapeMismatch,
                std::string(op) + ": incompatible shapes " + ad::to_string(a) + " and " + ad::to_string(b));
}

template <class T>
void add_into(std::vector<T>& dst, std::span<const T> src) {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

// [P, A, M, B, Q] -> [P, B, M, A, Q]
template <class T>
void swap_axes(const T* in, T* out, std::size_t P, std::size_t A, std::size_t M, std::size_t B, std::size_t Q) {
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t a = 0; a < A; ++a)
            for (std::size_t m = 0; m < M; ++m)
                for (std::size_t b = 0; b < B; ++b) {
                    const T* src = in + ((((p * A + a) * M + m) * B + b) * Q);
                    T* dst = out + ((((p * B + b) * M + m) * A + a) * Q);
                    std::copy_n(src, Q, dst);
                }
}

}  // namespace

// --- ops --------------------------------------------------------------------

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    Graph<T>& g = same_graph(a, b, "matmul");
    const Shape sa = a.shape(), sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2) shape_error("matmul", sa, sb);
    const std::size_t m = sa[sa.size() - 2], k = sa.back();
    const std::size_t kb = sb[sb.size() - 2], n = sb.back();
    if (k != kb) shape_error("matmul", sa, sb);
    const bool shared_b = sb.size() == 2;
    if (!shared_b && (sb.size() != sa.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin()))) {
        shape_error("matmul", sa, sb);
    }
    const std::size_t batch = numel(sa) / (m * k);
    Shape out_shape(sa.begin(), sa.end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);

    std::vector<T> out(batch * m * n, T{0});
    const auto A = a.value();
    const auto B = b.value();
    if (shared_b) {
        gemm_nn(A.data(), B.data(), out.data(), batch * m, k, n);
    } else {
        for (std::size_t t = 0; t < batch; ++t) {
            gemm_nn(A.data() + t * m * k, B.data() + t * k * n, out.data() + t * m * n, m, k, n);
        }
    }
    const auto ia = a.id, ib = b.id;
    return g.record(Op::kMatmul, std::move(out_shape), std::move(out), {ia, ib},
                    [=](Graph<T>& gr, std::uint32_t self) {
                        const auto dC = gr.grad(self);
                        const auto Av = gr.value(ia);
                        const auto Bv = gr.value(ib);
                        if (gr.requires_grad(ia)) {
                            auto& dA = gr.grad_buffer(ia);
                            if (shared_b) {
                                gemm_nt(dC.data(), Bv.data(), dA.data(), batch * m, n, k);
                            } else {
                                for (std::size_t t = 0; t < batch; ++t)
                                    gemm_nt(dC.data() + t * m * n, Bv.data() + t * k * n, dA.data() + t * m * k, m, n, k);
                            }
                        }
                        if (gr.requires_grad(ib)) {
                            auto& dB = gr.grad_buffer(ib);
                            if (shared_b) {
                                gemm_tn(Av.data(), dC.data(), dB.data(), batch * m, k, n);
                            } else {
                                for (std::size_t t = 0; t < batch; ++t)
                                    gemm_tn(Av.data() + t * m * k, dC.data() + t * m * n, dB.data() + t * k * n, m, k, n);
                            }
                        }
                    });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    Graph<T>& g = same_graph(a, b, "add");
    const Shape sa = a.shape(), sb = b.shape();
    if (sb.size() > sa.size() || !std::equal(sb.begin(), sb.end(), sa.end() - static_cast<std::ptrdiff_t>(sb.size()))) {
        shape_error("add", sa, sb);
    }
    const std::size_t inner = numel(sb);
    const auto A = a.value();
    const auto B = b.value();
    std::vector<T> out(A.size());
    for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] + B[i % inner];
    const auto ia = a.id, ib = b.id;
    return g.record(Op::kAdd, sa, std::move(out), {ia, ib}, [=](Graph<T>& gr, std::uint32_t self) {
        const auto dC = gr.grad(self);
        if (gr.requires_grad(ia)) add_into(gr.grad_buffer(ia), dC);
        if (gr.requires_grad(ib)) {
            auto& dB = gr.grad_buffer(ib);
            for (std::size_t i = 0; i < dC.size(); ++i) dB[i % inner] += dC[i];
        }
    });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    Graph<T>& g = same_graph(a, b, "mul");
    if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
    const auto A = a.value();
    const auto B = b.value();
    std::vector<T> out(A.size());
    for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * B[i];
    const auto ia = a.id, ib = b.id;
    return g.record(Op::kMul, a.shape(), std::move(out), {ia, ib}, [=](Graph<T>& gr, std::uint32_t self) {
        const auto dC = gr.grad(self);
        const auto Av = gr.value(ia);
        const auto Bv = gr.value(ib);
        if (gr.requires_grad(ia)) {
            auto& dA = gr.grad_buffer(ia);
            for (std::size_t i = 0; i < dC.size(); ++i) dA[i] += dC[i] * Bv[i];
        }
        if (gr.requires_grad(ib)) {
            auto& dB = gr.grad_buffer(ib);
            for (std::size_t i = 0; i < dC.size(); ++i) dB[i] += dC[i] * Av[i];
        }
    });
}

template <class T>
Var<T> mul_scalar(Var<T> a, T s) {
    const auto A = a.value();
    std::vector<T> out(A.size());
    for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * s;
    const auto ia = a.id;
    return a.graph->record(Op::kMulScalar, a.shape(), std::move(out), {ia}, [=](Graph<T>& gr, std::uint32_t self) {
        const auto dC = gr.grad(self);
        auto& dA = gr.grad_buffer(ia);
        for (std::size_t i = 0; i < dC.size(); ++i) dA[i] += dC[i] * s;
    });
}

template <class T>
Var<T> gelu(Var<T> a) {
    constexpr T kC = static_cast<T>(0.79788456080286535588);  // sqrt(2/pi)
    constexpr T kA = static_cast<T>(0.044715);
    const auto X = a.value();
    std::vector<T> out(X.size());
    for (std::size_t i = 0; i < X.size(); ++i) {
        const T x = X[i];
        out[i] = T{0.5} * x * (T{1} + std::tanh(kC * (x + kA * x * x * x)));
    }
    const auto ia = a.id;
    return a.graph->record(Op::kGelu, a.shape(), std::move(out), {ia}, [=](Graph<T>& gr, std::uint32_t self) {
        const auto dC = gr.grad(self);
        const auto Xv = gr.value(ia);
        auto& dA = gr.grad_buffer(ia);
        for (std::size_t i = 0; i < dC.size(); ++i) {
            const T x = Xv[i];
            const T t = std::tanh(kC * (x + kA * x * x * x));
            const T d = T{0.5} * (T{1} + t) + T{0.5} * x * (T{1} - t * t) * kC * (T{1} + T{3} * kA * x * x);
            dA[i] += dC[i] * d;
        }
    });
}

template <class T>
Var<T> softmax(Var<T> a, bool causal) {
    const Shape& sa = a.shape();
    if (sa.empty() || (causal && sa.size() < 2)) {
        throw Error(ErrorKind::kShapeMismatch, "softmax: need rank >= 1 (>= 2 when causal), got " + ad::to_string(sa));
    }
    const std::size_t S = sa.back();
    const std::size_t T_rows = causal ? sa[sa.size() - 2] : 1;
    const auto X = a.value();
    const std::size_t rows = S == 0 ? 0 : X.size() / S;
    std::vector<T> out(X.size(), T{0});
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t valid = causal ? std::min(S, r % T_rows + 1) : S;
        const T* x = X.data() + r * S;
        T* y = out.data() + r * S;
        T mx = x[0];
        for (std::size_t j = 1; j < valid; ++j) mx = std::max(mx, x[j]);
        T z{0};
        for (std::size_t j = 0; j < valid; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (std::size_t j = 0; j < valid; ++j) y[j] /= z;
    }
    const auto ia = a.id;
    return a.graph->record(Op::kSoftmax, sa, std::move(out), {ia}, [=](Graph<T>& gr, std::uint32_t self) {
        const auto dY = gr.grad(self);
        const auto Y = gr.value(self);
        auto& dX = gr.grad_buffer(ia);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* y = Y.data() + r * S;
            const T* dy = dY.data() + r * S;
            T* dx = dX.data() + r * S;
            T dot{0};
            for (std::size_t j = 0; j < S; ++j) dot += y[j] * dy[j];
            for (std::size_t j = 0; j < S; ++j) dx[j] += y[j] * (dy[j] - dot);
        }
    });
}

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
    const Shape& sx = x.shape();
    if (sx.empty()) throw Error(ErrorKind::kShapeMismatch, "layer_norm: scalar input");
    const std::size_t d = sx.back();
    for (const auto& p : {gain, bias}) {
        if (p.valid() && (p.graph != x.graph || p.shape() != Shape{d})) shape_error("layer_norm", sx, p.shape());
    }
    const auto X = x.value();
    const std::size_t rows = d == 0 ? 0 : X.size() / d;
    std::vector<T> out(X.size());
    std::vector<T> xhat(X.size());
    std::vector<T> inv_std(rows);
    const auto G = gain.valid() ? gain.value() : std::span<const T>{};
    const auto Bv = bias.valid() ? bias.value() : std::span<const T>{};
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = X.data() + r * d;
        T mean{0};
        for (std::size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<T>(d);
        T var{0};
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<T>(d);
        const T is = T{1} / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const T h = (xr[j] - mean) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = h * (G.empty() ? T{1} : G[j]) + (Bv.empty() ? T{0} : Bv[j]);
        }
    }
    std::vector<std::uint32_t> inputs{x.id};
    const bool has_gain = gain.valid(), has_bias = bias.valid();
    const std::uint32_t ig = has_gain ? gain.id : 0, ib = has_bias ? bias.id : 0;
    if (has_gain) inputs.push_back(ig);
    if (has_bias) inputs.push_back(ib);
    const auto ix = x.id;
    return x.graph->record(
        Op::kLayerNorm, sx, std::move(out), std::move(inputs),
        [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph<T>& gr, std::uint32_t self) {
            const auto dY = gr.grad(self);
            const auto Gv = has_gain ? gr.value(ig) : std::span<const T>{};
            if (has_gain && gr.requires_grad(ig)) {
                auto& dG = gr.grad_buffer(ig);
                for (std::size_t i = 0; i < dY.size(); ++i) dG[i % d] += dY[i] * xhat[i];
            }
            if (has_bias && gr.requires_grad(ib)) {
                auto& dB = gr.grad_buffer(ib);
                for (std::size_t i = 0; i < dY.size(); ++i) dB[i % d] += dY[i];
            }
            if (gr.requires_grad(ix)) {
                auto& dX = gr.grad_buffer(ix);
                std::vector<T> dh(d);
                for (std::size_t r = 0; r < rows; ++r) {
                    T mean_dh{0}, mean_dh_h{0};
                    for (std::size_t j = 0; j < d; ++j) {
                        dh[j] = dY[r * d + j] * (Gv.empty() ? T{1} : Gv[j]);
                        mean_dh += dh[j];
                        mean_dh_h += dh[j] * xhat[r * d + j];
                    }
                    mean_dh /= static_cast<T>(d);
                    mean_dh_h /= static_cast<T>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        dX[r * d + j] += inv_std[r] * (dh[j] - mean_dh - xhat[r * d + j] * mean_dh_h);
                    }
                }
            }
        });
}

template <class T>
Var<T> conv1d(Var<T> x, Var<T> w, Var<T> bias, int stride) {
    Graph<T>& g = same_graph(x, w, "conv1d");
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if ((sx.size() != 2 && sx.size() != 3) || sw.size() != 3 || stride < 1) shape_error("conv1d", sx, sw);
    const bool batched = sx.size() == 3;
    const std::size_t B = batched ? sx[0] : 1;
    const std::size_t Cin = sx[sx.size() - 2], L = sx.back();
    const std::size_t Cout = sw[0], K = sw[2];
    if (sw[1] != Cin || K % 2 == 0) shape_error("conv1d", sx, sw);
    if (bias.valid() && (bias.graph != x.graph || bias.shape() != Shape{Cout})) shape_error("conv1d", sw, bias.shape());
    const auto s = static_cast<std::size_t>(stride);
    const long long pad = static_cast<long long>(K / 2);
    const std::size_t Lout = L == 0 ? 0 : (L - 1) / s + 1;
    const std::size_t CK = Cin * K;

    const auto X = x.value();
    const auto W = w.value();
    std::vector<T> cols(B * CK * Lout, T{0});
    for (std::size_t b = 0; b < B; ++b) {
        T* cb = cols.data() + b * CK * Lout;
        for (std::size_t c = 0; c < Cin; ++c) {
            const T* xc = X.data() + (b * Cin + c) * L;
            for (std::size_t k = 0; k < K; ++k) {
                T* row = cb + (c * K + k) * Lout;
                for (std::size_t t = 0; t < Lout; ++t) {
                    const long long pos = static_cast<long long>(t * s + k) - pad;
                    if (pos >= 0 && pos < static_cast<long long>(L)) row[t] = xc[pos];
                }
            }
        }
    }
    std::vector<T> out(B * Cout * Lout, T{0});
    const auto Bias = bias.valid() ? bias.value() : std::span<const T>{};
    for (std::size_t b = 0; b < B; ++b) {
        T* ob = out.data() + b * Cout * Lout;
        if (!Bias.empty()) {
            for (std::size_t o = 0; o < Cout; ++o) std::fill_n(ob + o * Lout, Lout, Bias[o]);
        }
        gemm_nn(W.data(), cols.data() + b * CK * Lout, ob, Cout, CK, Lout);
    }
    Shape out_shape = batched ? Shape{B, Cout, Lout} : Shape{Cout, Lout};
    std::vector<std::uint32_t> inputs{x.id, w.id};
    const bool has_bias = bias.valid();
    const std::uint32_t ibias = has_bias ? bias.id : 0;
    if (has_bias) inputs.push_back(ibias);
    const auto ix = x.id, iw = w.id;
    return g.record(Op::kConv1d, std::move(out_shape), std::move(out), std::move(inputs),
                    [=, cols = std::move(cols)](Graph<T>& gr, std::uint32_t self) {
                        const auto dY = gr.grad(self);
                        if (gr.requires_grad(iw)) {
                            auto& dW = gr.grad_buffer(iw);
                            for (std::size_t b = 0; b < B; ++b)
                                gemm_nt(dY.data() + b * Cout * Lout, cols.data() + b * CK * Lout, dW.data(), Cout, Lout, CK);
                        }
                        if (has_bias && gr.requires_grad(ibias)) {
                            auto& dB = gr.grad_buffer(ibias);
                            for (std::size_t b = 0; b < B; ++b)
                                for (std::size_t o = 0; o < Cout; ++o)
                                    for (std::size_t t = 0; t < Lout; ++t) dB[o] += dY[(b * Cout + o) * Lout + t];
                        }
                        if (gr.requires_grad(ix)) {
                            const auto Wv = gr.value(iw);
                            auto& dX = gr.grad_buffer(ix);
                            std::vector<T> dcols(CK * Lout);
                            for (std::size_t b = 0; b < B; ++b) {
                                std::fill(dcols.begin(), dcols.end(), T{0});
                                gemm_tn(Wv.data(), dY.data() + b * Cout * Lout, dcols.data(), Cout, CK, Lout);
                                for (std::size_t c = 0; c < Cin; ++c) {
                                    T* dxc = dX.data() + (b * Cin + c) * L;
                                    for (std::size_t k = 0; k < K; ++k) {
                                        const T* row = dcols.data() + (c * K + k) * Lout;
                                        for (std::size_t t = 0; t < Lout; ++t) {
                                            const long long pos = static_cast<long long>(t * s + k) - pad;
                                            if (pos >= 0 && pos < static_cast<long long>(L)) dxc[pos] += row[t];
                                        }
                                    }
                                }
                            }
                        }
                    });
}

template <class T>
Var<T> embedding(Var<T> table, std::span<const int> ids, const Shape& ids_shape) {
    const Shape& st = table.shape();
    if (st.size() != 2) throw Error(ErrorKind::kShapeMismatch, "embedding: table must be 2-D, got " + ad::to_string(st));
    if (numel(ids_shape) != ids.size()) throw Error(ErrorKind::kShapeMismatch, "embedding: ids do not match ids_shape");
    const std::size_t V = st[0], d = st[1];
    const auto E = table.value();
    std::vector<T> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V) {
            throw Error(ErrorKind::kInvalidArgument,
                        "embedding: id " + std::to_string(ids[i]) + " outside vocabulary of size " + std::to_string(V));
        }
        std::copy_n(E.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
    }
    Shape out_shape = ids_shape;
    out_shape.push_back(d);
    const auto it = table.id;
    std::vector<int> saved(ids.begin(), ids.end());
    return table.graph->record(Op::kEmbedding, std::move(out_shape), std::move(out), {it},
                               [=, saved = std::move(saved)](Graph<T>& gr, std::uint32_t self) {
                                   const auto dY = gr.grad(self);
                                   auto& dE = gr.grad_buffer(it);
                                   for (std::size_t i = 0; i < saved.size(); ++i) {
                                       T* row = dE.data() + static_cast<std::size_t>(saved[i]) * d;
                                       for (std::size_t j = 0; j < d; ++j) row[j] += dY[i * d + j];
                                   }
                               });
}

template <class T>
Var<T> sinusoidal_positions(Graph<T>& g, std::size_t n, std::size_t d) {
    if (d < 2 || d % 2 != 0) throw Error(ErrorKind::kInvalidArgument, "sinusoidal_positions: width must be even");
    const std::size_t half = d / 2;
    const double increment = std::log(10000.0) / static_cast<double>(half > 1 ? half - 1 : 1);
    std::vector<T> out(n * d);
    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t i = 0; i < half; ++i) {
            const double angle = static_cast<double>(t) * std::exp(-increment * static_cast<double>(i));
            out[t * d + i] = static_cast<T>(std::sin(angle));
            out[t * d + half + i] = static_cast<T>(std::cos(angle));
        }
    }
    return g.constant(Tensor<T>({n, d}, std::move(out)));
}

template <class T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> targets, int ignore_index) {
    const Shape& sl = logits.shape();
    if (sl.size() < 2) throw Error(ErrorKind::kShapeMismatch, "cross_entropy: logits must be [..., L, V]");
    const std::size_t V = sl.back();
    const std::size_t L = sl[sl.size() - 2];
    const auto X = logits.value();
    const std::size_t rows = X.size() / V;
    if (targets.size() != rows) throw Error(ErrorKind::kShapeMismatch, "cross_entropy: one target per row required");
    const std::size_t n_seq = L == 0 ? 0 : rows / L;

    std::vector<T> lse(rows, T{0});
    std::vector<T> row_weight(rows, T{0});
    std::size_t valid_seqs = 0;
    std::vector<std::size_t> seq_count(n_seq, 0);
    for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] == ignore_index) continue;
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= V) {
            throw Error(ErrorKind::kInvalidArgument, "cross_entropy: target " + std::to_string(targets[r]) + " out of range");
        }
        ++seq_count[r / L];
    }
    for (auto c : seq_count) valid_seqs += c > 0 ? 1 : 0;

    T loss{0};
    for (std::size_t sq = 0; sq < n_seq; ++sq) {
        if (seq_count[sq] == 0) continue;
        T seq_loss{0};
        for (std::size_t r = sq * L; r < (sq + 1) * L; ++r) {
            if (targets[r] == ignore_index) continue;
            const T* x = X.data() + r * V;
            T mx = x[0];
            for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, x[j]);
            T z{0};
            for (std::size_t j = 0; j < V; ++j) z += std::exp(x[j] - mx);
            lse[r] = mx + std::log(z);
            seq_loss += lse[r] - x[targets[r]];
            row_weight[r] = T{1} / (static_cast<T>(seq_count[sq]) * static_cast<T>(valid_seqs));
        }
        loss += seq_loss / static_cast<T>(seq_count[sq]);
    }
    if (valid_seqs > 0) loss /= static_cast<T>(valid_seqs);

    const auto il = logits.id;
    std::vector<int> saved(targets.begin(), targets.end());
    return logits.graph->record(
        Op::kCrossEntropy, Shape{}, std::vector<T>{loss}, {il},
        [=, saved = std::move(saved), lse = std::move(lse), row_weight = std::move(row_weight)](Graph<T>& gr,
                                                                                                std::uint32_t self) {
            const T dL = gr.grad(self)[0];
            const auto Xv = gr.value(il);
            auto& dX = gr.grad_buffer(il);
            for (std::size_t r = 0; r < rows; ++r) {
                if (row_weight[r] == T{0}) continue;
                const T c = dL * row_weight[r];
                const T* x = Xv.data() + r * V;
                T* dx = dX.data() + r * V;
                for (std::size_t j = 0; j < V; ++j) dx[j] += c * std::exp(x[j] - lse[r]);
                dx[saved[r]] -= c;
            }
        });
}

template <class T>
Var<T> dropout(Var<T> x, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw Error(ErrorKind::kInvalidArgument, "dropout probability must be in [0, 1)");
    if (p == 0.0) return x;
    std::bernoulli_distribution keep(1.0 - p);
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    const auto X = x.value();
    std::vector<T> mask(X.size());
    std::vector<T> out(X.size());
    for (std::size_t i = 0; i < X.size(); ++i) {
        mask[i] = keep(rng) ? scale : T{0};
        out[i] = X[i] * mask[i];
    }
    const auto ix = x.id;
    return x.graph->record(Op::kDropout, x.shape(), std::move(out), {ix},
                           [=, mask = std::move(mask)](Graph<T>& gr, std::uint32_t self) {
                               const auto dY = gr.grad(self);
                               auto& dX = gr.grad_buffer(ix);
                               for (std::size_t i = 0; i < dY.size(); ++i) dX[i] += dY[i] * mask[i];
                           });
}

template <class T>
Var<T> transpose(Var<T> x, std::size_t axis0, std::size_t axis1) {
    const Shape sx = x.shape();
    if (axis0 >= sx.size() || axis1 >= sx.size()) {
        throw Error(ErrorKind::kShapeMismatch, "transpose: axis out of range for " + ad::to_string(sx));
    }
    if (axis0 == axis1) return reshape(x, sx);
    if (axis0 > axis1) std::swap(axis0, axis1);
    auto prod = [&](std::size_t lo, std::size_t hi) {
        std::size_t n = 1;
        for (std::size_t i = lo; i < hi; ++i) n *= sx[i];
        return n;
    };
    const std::size_t P = prod(0, axis0), A = sx[axis0], M = prod(axis0 + 1, axis1), B = sx[axis1],
                      Q = prod(axis1 + 1, sx.size());
    Shape out_shape = sx;
    std::swap(out_shape[axis0], out_shape[axis1]);
    const auto X = x.value();
    std::vector<T> out(X.size());
    swap_axes(X.data(), out.data(), P, A, M, B, Q);
    const auto ix = x.id;
    return x.graph->record(Op::kTranspose, std::move(out_shape), std::move(out), {ix},
                           [=](Graph<T>& gr, std::uint32_t self) {
                               const auto dY = gr.grad(self);
                               std::vector<T> back(dY.size());
                               swap_axes(dY.data(), back.data(), P, B, M, A, Q);
                               add_into(gr.grad_buffer(ix), std::span<const T>(back));
                           });
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
    if (numel(shape) != numel(x.shape())) shape_error("reshape", x.shape(), shape);
    const auto X = x.value();
    const auto ix = x.id;
    return x.graph->record(Op::kReshape, std::move(shape), std::vector<T>(X.begin(), X.end()), {ix},
                           [=](Graph<T>& gr, std::uint32_t self) { add_into(gr.grad_buffer(ix), gr.grad(self)); });
}

template <class T>
Var<T> slice(Var<T> x, std::size_t axis, std::size_t begin, std::size_t end) {
    const Shape sx = x.shape();
    if (axis >= sx.size() || begin > end || end > sx[axis]) {
        throw Error(ErrorKind::kShapeMismatch, "slice: bad range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                                   ") on axis " + std::to_string(axis) + " of " + ad::to_string(sx));
    }
    std::size_t P = 1, Q = 1;
    for (std::size_t i = 0; i < axis; ++i) P *= sx[i];
    for (std::size_t i = axis + 1; i < sx.size(); ++i) Q *= sx[i];
    const std::size_t A = sx[axis], W = end - begin;
    Shape out_shape = sx;
    out_shape[axis] = W;
    const auto X = x.value();
    std::vector<T> out(P * W * Q);
    for (std::size_t p = 0; p < P; ++p) std::copy_n(X.data() + (p * A + begin) * Q, W * Q, out.data() + p * W * Q);
    const auto ix = x.id;
    return x.graph->record(Op::kSlice, std::move(out_shape), std::move(out), {ix},
                           [=](Graph<T>& gr, std::uint32_t self) {
                               const auto dY = gr.grad(self);
                               auto& dX = gr.grad_buffer(ix);
                               for (std::size_t p = 0; p < P; ++p)
                                   for (std::size_t i = 0; i < W * Q; ++i) dX[(p * A + begin) * Q + i] += dY[p * W * Q + i];
                           });
}

template <class T>
Var<T> sum(Var<T> x) {
    const auto X = x.value();
    T acc{0};
    for (T v : X) acc += v;
    const auto ix = x.id;
    return x.graph->record(Op::kSum, Shape{}, std::vector<T>{acc}, {ix}, [=](Graph<T>& gr, std::uint32_t self) {
        const T dY = gr.grad(self)[0];
        auto& dX = gr.grad_buffer(ix);
        for (auto& v : dX) v += dY;
    });
}

template <class T>
Var<T> checkpoint(Graph<T>& g, std::vector<Var<T>> inputs, SegmentFn<T> fn) {
    std::vector<std::uint32_t> input_ids;
    for (const auto& v : inputs) {
        if (v.graph != &g) throw Error(ErrorKind::kInvalidArgument, "checkpoint: input from another graph");
        input_ids.push_back(v.id);
    }

    Shape out_shape;
    std::vector<T> out_value;
    std::vector<const Tensor<T>*> used;
    {
        Graph<T> sub;
        std::vector<Var<T>> sub_in;
        for (auto id : input_ids) {
            const auto v = g.value(id);
            sub_in.push_back(sub.constant(Tensor<T>(g.shape(id), std::vector<T>(v.begin(), v.end()))));
        }
        const Var<T> o = fn(sub, sub_in);
        out_shape = o.shape();
        out_value.assign(o.value().begin(), o.value().end());
        used = sub.params();
    }

    std::vector<std::uint32_t> deps = input_ids;
    for (const auto* p : used) deps.push_back(g.param(*p).id);

    return g.record(Op::kCheckpoint, std::move(out_shape), std::move(out_value), std::move(deps),
                    [input_ids, fn](Graph<T>& gr, std::uint32_t self) {
                        Graph<T> sub;
                        std::vector<Var<T>> sub_in;
                        for (auto id : input_ids) {
                            const auto v = gr.value(id);
                            sub_in.push_back(sub.leaf(Tensor<T>(gr.shape(id), std::vector<T>(v.begin(), v.end())),
                                                      gr.requires_grad(id)));
                        }
                        const Var<T> o = fn(sub, sub_in);
                        if (!o.requires_grad()) return;
                        sub.backward(o, gr.grad(self));
                        for (std::size_t i = 0; i < input_ids.size(); ++i) {
                            const auto gi = sub.grad(sub_in[i]);
                            if (!gi.empty()) add_into(gr.grad_buffer(input_ids[i]), gi);
                        }
                        for (const auto* p : sub.params()) {
                            const auto* pg = sub.param_grad(*p);
                            const auto* outer = gr.find_param(p);
                            if (pg != nullptr && outer != nullptr) add_into(gr.grad_buffer(*outer), std::span<const T>(*pg));
                        }
                    });
}

template <class T>
GradCheckReport grad_check(const std::function<Var<T>(Graph<T>&, Var<T>)>& f, const Tensor<T>& x, T h, double tol,
                           double abs_floor) {
    GradCheckReport report;
    {
        Graph<T> g;
        Var<T> xv = g.leaf(Tensor<T>(x.shape, x.data), true);
        Var<T> y = f(g, xv);
        g.backward(y);
        const auto gx = g.grad(xv);
        report.analytic.assign(x.numel(), 0.0);
        for (std::size_t i = 0; i < gx.size(); ++i) report.analytic[i] = static_cast<double>(gx[i]);
    }
    auto eval = [&](const std::vector<T>& data) {
        Graph<T> g;
        Var<T> xv = g.constant(Tensor<T>(x.shape, data));
        return static_cast<double>(f(g, xv).value()[0]);
    };
    report.numeric.resize(x.numel());
    report.rel_errors.resize(x.numel());
    std::vector<T> probe = x.data;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const T orig = probe[i];
        probe[i] = orig + h;
        const double fp = eval(probe);
        probe[i] = orig - h;
        const double fm = eval(probe);
        probe[i] = orig;
        const double num = (fp - fm) / (2.0 * static_cast<double>(h));
        report.numeric[i] = num;
        const double a = report.analytic[i];
        const double denom = std::max({std::abs(a), std::abs(num), abs_floor});
        report.rel_errors[i] = std::abs(a - num) / denom;
        report.max_rel_error = std::max(report.max_rel_error, report.rel_errors[i]);
    }
    report.passed = report.max_rel_error <= tol;
    return report;
}

// --- instantiation ----------------------------------------------------------

#define KASR_AD_INSTANTIATE(T)                                                                              \
    template struct Tensor<T>;                                                                              \
    template struct Var<T>;                                                                                 \
    template class detail::TrackedBuffer<T>;                                                                \
    template class Graph<T>;                                                                                \
    template Var<T> matmul(Var<T>, Var<T>);                                                                 \
    template Var<T> add(Var<T>, Var<T>);                                                                    \
    template Var<T> mul(Var<T>, Var<T>);                                                                    \
    template Var<T> mul_scalar(Var<T>, T);                                                                  \
    template Var<T> gelu(Var<T>);                                                                           \
    template Var<T> softmax(Var<T>, bool);                                                                  \
    template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                                  \
    template Var<T> conv1d(Var<T>, Var<T>, Var<T>, int);                                                    \
    template Var<T> embedding(Var<T>, std::span<const int>, const Shape&);                                  \
    template Var<T> sinusoidal_positions(Graph<T>&, std::size_t, std::size_t);                              \
    template Var<T> cross_entropy(Var<T>, std::span<const int>, int);                                       \
    template Var<T> dropout(Var<T>, double, Rng&);                                                          \
    template Var<T> transpose(Var<T>, std::size_t, std::size_t);                                           \
    template Var<T> reshape(Var<T>, Shape);                                                                 \
    template Var<T> slice(Var<T>, std::size_t, std::size_t, std::size_t);                                   \
    template Var<T> sum(Var<T>);                                                                            \
    template Var<T> checkpoint(Graph<T>&, std::vector<Var<T>>, SegmentFn<T>);                               \
    template GradCheckReport grad_check(const std::function<Var<T>(Graph<T>&, Var<T>)>&, const Tensor<T>&, T, \
                                        double, double);

KASR_AD_INSTANTIATE(float)
KASR_AD_INSTANTIATE(double)

#undef KASR_AD_INSTANTIATE

}  // namespace kasr::ad
