// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0
//
// Randomised finite-difference cases for every differentiable op. Each case
// reduces the op output to a scalar through a fixed random weighting so that
// no gradient vanishes by symmetry.

#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "kasr/autodiff.hpp"

namespace kasr::testing {

using D = double;
using GradFn = std::function<ad::Var<D>(ad::Graph<D>&, ad::Var<D>)>;

struct GradCase {
    std::string op;
    std::string what;  // operand and shape
    GradFn f;
    ad::Tensor<D> x;
};

class CaseMaker {
public:
    explicit CaseMaker(std::uint64_t seed) : gen_(seed) {}

    std::size_t dim(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(gen_); }
    int pick(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen_); }

    ad::Tensor<D> rand(const ad::Shape& s, double scale = 1.0) {
        ad::Tensor<D> t(s);
        std::normal_distribution<D> nd(0.0, scale);
        for (auto& v : t.data) v = nd(gen_);
        return t;
    }

private:
    std::mt19937_64 gen_;
};

// sum(out * R) for a fixed random R of out's shape.
inline ad::Var<D> weighted_sum(ad::Var<D> out, std::uint64_t seed) {
    const auto shape = out.shape();
    CaseMaker m(seed);
    return ad::sum(ad::mul(out, out.graph->constant(m.rand(shape))));
}

inline std::vector<std::string> grad_case_ops() {
    return {"matmul", "add",       "mul",     "mul_scalar", "gelu",    "softmax", "layer_norm", "conv1d",
            "embedding", "cross_entropy", "dropout", "transpose", "reshape", "slice", "sum", "checkpoint"};
}

inline std::vector<GradCase> grad_cases(const std::string& op, int n, std::uint64_t seed) {
    CaseMaker m(seed);
    std::vector<GradCase> out;
    auto add_case = [&](std::string what, GradFn f, ad::Tensor<D> x) {
        out.push_back({op, std::move(what), std::move(f), std::move(x)});
    };
    for (int i = 0; i < n; ++i) {
        const std::uint64_t rs = seed * 1000 + static_cast<std::uint64_t>(i);
        if (op == "matmul") {
            const std::size_t b = m.dim(1, 3), r = m.dim(1, 4), k = m.dim(1, 4), c = m.dim(1, 4);
            const bool batched_b = i % 2 == 0;
            const ad::Shape sa{b, r, k};
            const ad::Shape sb = batched_b ? ad::Shape{b, k, c} : ad::Shape{k, c};
            auto A = m.rand(sa), B = m.rand(sb);
            add_case("a " + ad::to_string(sa), [B, rs](auto& g, auto x) { return weighted_sum(ad::matmul(x, g.constant(B)), rs); }, A);
            add_case("b " + ad::to_string(sb), [A, rs](auto& g, auto x) { return weighted_sum(ad::matmul(g.constant(A), x), rs); }, B);
        } else if (op == "add" || op == "mul") {
            // add also takes a suffix-shaped right operand; mul needs equal shapes.
            const ad::Shape full{m.dim(1, 3), m.dim(1, 4), m.dim(1, 4)};
            const ad::Shape rhs = op == "mul" || i % 3 == 0 ? full
                                  : i % 3 == 1           ? ad::Shape{full[1], full[2]}
                                                         : ad::Shape{full[2]};
            auto A = m.rand(full), B = m.rand(rhs);
            const bool is_add = op == "add";
            auto apply = [is_add](ad::Var<D> a, ad::Var<D> b) { return is_add ? ad::add(a, b) : ad::mul(a, b); };
            add_case("a " + ad::to_string(full), [B, rs, apply](auto& g, auto x) { return weighted_sum(apply(x, g.constant(B)), rs); }, A);
            add_case("b " + ad::to_string(rhs), [A, rs, apply](auto& g, auto x) { return weighted_sum(apply(g.constant(A), x), rs); }, B);
        } else if (op == "mul_scalar") {
            const ad::Shape s{m.dim(1, 4), m.dim(1, 5)};
            const D k = m.rand({1}).data[0];
            add_case(ad::to_string(s), [k, rs](auto&, auto x) { return weighted_sum(ad::mul_scalar(x, k), rs); }, m.rand(s));
        } else if (op == "gelu") {
            const ad::Shape s{m.dim(1, 4), m.dim(1, 6)};
            add_case(ad::to_string(s), [rs](auto&, auto x) { return weighted_sum(ad::gelu(x), rs); }, m.rand(s, 2.0));
        } else if (op == "softmax") {
            const std::size_t t = m.dim(1, 5);
            const bool causal = i % 2 == 1;
            const ad::Shape s = causal ? ad::Shape{m.dim(1, 3), t, t} : ad::Shape{m.dim(1, 3), t, m.dim(1, 6)};
            add_case(std::string(causal ? "causal " : "") + ad::to_string(s),
                     [rs, causal](auto&, auto x) { return weighted_sum(ad::softmax(x, causal), rs); }, m.rand(s, 2.0));
        } else if (op == "layer_norm") {
            // d = 2 normalises to +-1 and its third derivative swamps h = 1e-3 differences.
            const std::size_t d = m.dim(4, 8);
            const ad::Shape s{m.dim(1, 3), m.dim(1, 3), d};
            auto X = m.rand(s), G = m.rand({d}), Bb = m.rand({d});
            const D eps = 1e-5;
            add_case("x " + ad::to_string(s), [G, Bb, eps, rs](auto& g, auto x) {
                return weighted_sum(ad::layer_norm(x, g.constant(G), g.constant(Bb), eps), rs); }, X);
            add_case("gain", [X, Bb, eps, rs](auto& g, auto x) {
                return weighted_sum(ad::layer_norm(g.constant(X), x, g.constant(Bb), eps), rs); }, G);
            add_case("bias", [X, G, eps, rs](auto& g, auto x) {
                return weighted_sum(ad::layer_norm(g.constant(X), g.constant(G), x, eps), rs); }, Bb);
        } else if (op == "conv1d") {
            const std::size_t b = m.dim(1, 2), cin = m.dim(1, 3), cout = m.dim(1, 3), len = m.dim(1, 7);
            const std::size_t k = i % 2 == 0 ? 3 : (i % 4 == 1 ? 1 : 5);
            const int stride = 1 + i % 2;
            auto X = m.rand({b, cin, len}), W = m.rand({cout, cin, k}), Bb = m.rand({cout});
            const std::string tag = ad::to_string(X.shape) + " k" + std::to_string(k) + " s" + std::to_string(stride);
            add_case("x " + tag, [W, Bb, stride, rs](auto& g, auto x) {
                return weighted_sum(ad::conv1d(x, g.constant(W), g.constant(Bb), stride), rs); }, X);
            add_case("w " + tag, [X, Bb, stride, rs](auto& g, auto x) {
                return weighted_sum(ad::conv1d(g.constant(X), x, g.constant(Bb), stride), rs); }, W);
            add_case("bias " + tag, [X, W, stride, rs](auto& g, auto x) {
                return weighted_sum(ad::conv1d(g.constant(X), g.constant(W), x, stride), rs); }, Bb);
        } else if (op == "embedding") {
            const std::size_t v = m.dim(2, 6), d = m.dim(1, 4), b = m.dim(1, 3), t = m.dim(1, 4);
            std::vector<int> ids(b * t);
            for (auto& id : ids) id = m.pick(0, static_cast<int>(v) - 1);
            add_case("table " + ad::to_string({v, d}), [ids, b, t, rs](auto&, auto x) {
                return weighted_sum(ad::embedding(x, std::span<const int>(ids), ad::Shape{b, t}), rs); }, m.rand({v, d}));
        } else if (op == "cross_entropy") {
            const std::size_t b = m.dim(1, 3), t = m.dim(1, 4), v = m.dim(2, 6);
            std::vector<int> tg(b * t);
            for (auto& id : tg) id = m.pick(0, static_cast<int>(v) - 1);
            tg[0] = 1;  // keep at least one real target
            const int ignore = 0;
            add_case("logits " + ad::to_string({b, t, v}),
                     [tg, ignore](auto&, auto x) { return ad::cross_entropy(x, std::span<const int>(tg), ignore); },
                     m.rand({b, t, v}, 2.0));
        } else if (op == "dropout") {
            const ad::Shape s{m.dim(1, 4), m.dim(1, 6)};
            const double p = 0.1 * m.pick(1, 6);
            add_case(ad::to_string(s) + " p" + std::to_string(p), [p, rs](auto&, auto x) {
                Rng r(rs);
                return weighted_sum(ad::dropout(x, p, r), rs); }, m.rand(s));
        } else if (op == "transpose") {
            const ad::Shape s{m.dim(1, 3), m.dim(1, 4), m.dim(1, 4)};
            const std::size_t a0 = static_cast<std::size_t>(m.pick(0, 2)), a1 = static_cast<std::size_t>(m.pick(0, 2));
            add_case(ad::to_string(s), [a0, a1, rs](auto&, auto x) { return weighted_sum(ad::transpose(x, a0, a1), rs); }, m.rand(s));
        } else if (op == "reshape") {
            const std::size_t a = m.dim(1, 4), b = m.dim(1, 4), c = m.dim(1, 3);
            add_case(ad::to_string({a, b, c}), [a, b, c, rs](auto&, auto x) {
                return weighted_sum(ad::reshape(x, ad::Shape{b, a * c}), rs); }, m.rand({a, b, c}));
        } else if (op == "slice") {
            const ad::Shape s{m.dim(1, 3), m.dim(2, 6), m.dim(1, 3)};
            const std::size_t axis = static_cast<std::size_t>(m.pick(0, 2));
            const std::size_t lo = m.dim(0, s[axis] - 1), hi = m.dim(lo + 1, s[axis]);
            add_case(ad::to_string(s) + " axis" + std::to_string(axis), [axis, lo, hi, rs](auto&, auto x) {
                return weighted_sum(ad::slice(x, axis, lo, hi), rs); }, m.rand(s));
        } else if (op == "sum") {
            const ad::Shape s{m.dim(1, 4), m.dim(1, 4)};
            add_case(ad::to_string(s), [](auto&, auto x) { return ad::sum(ad::mul(x, x)); }, m.rand(s));
        } else if (op == "checkpoint") {
            const std::size_t r = m.dim(1, 4), k = m.dim(1, 4), c = m.dim(1, 4);
            auto W = m.rand({k, c});
            add_case(ad::to_string({r, k}), [W, rs](auto& g, auto x) {
                const auto y = ad::checkpoint<D>(g, {x}, [W](ad::Graph<D>& sub, std::span<const ad::Var<D>> in) {
                    return ad::gelu(ad::matmul(in[0], sub.constant(W)));
                });
                return weighted_sum(y, rs); }, m.rand({r, k}));
        }
    }
    return out;
}

}  // namespace kasr::testing
