// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "timestudy/common.hpp"
#include "timestudy/rng.hpp"

namespace ts {

// Assertable NaN/Inf detection; off in production runs.
inline bool& debug_checks() {
    static bool on = false;
    return on;
}

inline bool& grad_mode_enabled() {
    thread_local bool enabled = true;
    return enabled;
}

// RAII guard disabling tape recording (evaluation / inference paths).
struct NoGradGuard {
    NoGradGuard() : prev_(grad_mode_enabled()) { grad_mode_enabled() = false; }
    ~NoGradGuard() { grad_mode_enabled() = prev_; }
    bool prev_;
};

namespace detail {

inline std::atomic<std::uint64_t>& node_counter() {
    static std::atomic<std::uint64_t> c{0};
    return c;
}

template <typename T>
struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<T> data;
    std::vector<T> grad;  // sized lazily, same length as data once touched
    bool requires_grad = false;
    std::uint64_t id = node_counter()++;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    bool tracked() const { return requires_grad || static_cast<bool>(backward_fn); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

}  // namespace detail

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

// Trailing-dimension broadcast: an extent of 1 stretches.
inline std::vector<std::size_t> broadcast_shape(const std::vector<std::size_t>& a,
                                                const std::vector<std::size_t>& b) {
    std::size_t rank = std::max(a.size(), b.size());
    std::vector<std::size_t> out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (ea != eb && ea != 1 && eb != 1)
            throw std::invalid_argument("broadcast: incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
        out[i] = std::max(ea, eb);
    }
    return out;
}

template <typename T>
class Tensor {
public:
    using Node = detail::TensorNode<T>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

    static Tensor zeros(std::vector<std::size_t> shape) { return full(std::move(shape), T(0)); }

    static Tensor full(std::vector<std::size_t> shape, T value) {
        auto n = std::make_shared<Node>();
        n->data.assign(shape_numel(shape), value);
        n->shape = std::move(shape);
        return Tensor(std::move(n));
    }

    static Tensor from_data(std::vector<std::size_t> shape, std::vector<T> data) {
        if (shape_numel(shape) != data.size())
            throw std::invalid_argument("tensor: data length does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        return Tensor(std::move(n));
    }

    static Tensor scalar(T value) { return from_data({1}, {value}); }

    static Tensor randn(std::vector<std::size_t> shape, Rng& rng, T stddev = T(1)) {
        auto t = zeros(std::move(shape));
        for (auto& v : t.data()) v = static_cast<T>(rng.next_normal()) * stddev;
        return t;
    }

    bool defined() const { return static_cast<bool>(n_); }
    const std::vector<std::size_t>& shape() const { return n_->shape; }
    std::size_t rank() const { return n_->shape.size(); }
    std::size_t numel() const { return n_->data.size(); }
    std::vector<T>& data() { return n_->data; }
    const std::vector<T>& data() const { return n_->data; }
    std::vector<T>& grad() { return n_->grad; }
    const std::vector<T>& grad() const { return n_->grad; }
    bool requires_grad() const { return n_->requires_grad; }

    Tensor& set_requires_grad(bool on = true) {
        n_->requires_grad = on;
        return *this;
    }

    void zero_grad() {
        if (n_) n_->grad.assign(n_->data.size(), T(0));
    }

    T item() const {
        if (numel() != 1) throw std::invalid_argument("item: tensor is not scalar, shape " + shape_str(shape()));
        return n_->data[0];
    }

    std::shared_ptr<Node> node() const { return n_; }

private:
    std::shared_ptr<Node> n_;
};

namespace detail {

template <typename T>
inline void check_finite(const std::vector<T>& v, const char* what) {
    if (!debug_checks()) return;
    for (const T& x : v)
        if (!std::isfinite(x)) throw numeric_error(std::string("non-finite value produced by ") + what);
}

// Strides of `shape` aligned to a broadcast result of rank `out_rank`;
// broadcast dimensions get stride 0.
inline std::vector<std::size_t> broadcast_strides(const std::vector<std::size_t>& shape,
                                                  std::size_t out_rank,
                                                  const std::vector<std::size_t>& out_shape) {
    std::vector<std::size_t> strides(out_rank, 0);
    std::size_t s = 1;
    for (std::size_t i = shape.size(); i-- > 0;) {
        std::size_t oi = i + (out_rank - shape.size());
        strides[oi] = (shape[i] == 1 && out_shape[oi] != 1) ? 0 : s;
        s *= shape[i];
    }
    return strides;
}

// Apply fn(out_index, a_index, b_index) over every element of the broadcast
// result, odometer-style (no per-element division).
template <typename Fn>
void broadcast_iterate(const std::vector<std::size_t>& out_shape,
                       const std::vector<std::size_t>& sa,
                       const std::vector<std::size_t>& sb, Fn&& fn) {
    std::size_t rank = out_shape.size();
    std::size_t total = shape_numel(out_shape);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t o = 0; o < total; ++o) {
        fn(o, ia, ib);
        for (std::size_t d = rank; d-- > 0;) {
            if (++idx[d] < out_shape[d]) {
                ia += sa[d];
                ib += sb[d];
                break;
            }
            idx[d] = 0;
            ia -= sa[d] * (out_shape[d] - 1);
            ib -= sb[d] * (out_shape[d] - 1);
        }
    }
}

// Sum `g` (shaped `from`) down to `to` (which `to` broadcasts up to `from`).
template <typename T>
std::vector<T> reduce_to_shape(const std::vector<T>& g, const std::vector<std::size_t>& from,
                               const std::vector<std::size_t>& to) {
    if (from == to) return g;
    std::vector<T> out(shape_numel(to), T(0));
    auto st = broadcast_strides(to, from.size(), from);
    std::vector<std::size_t> szero(from.size(), 0);
    broadcast_iterate(from, st, szero, [&](std::size_t o_from, std::size_t o_to, std::size_t) {
        out[o_to] += g[o_from];
    });
    return out;
}

}  // namespace detail

// Construct the result of an op, recording a tape node when grad mode is on
// and any parent is tracked. `bw` receives the finished output node and must
// accumulate into parents' grad buffers.
template <typename T, typename BW>
Tensor<T> make_op(std::vector<std::size_t> shape, std::vector<T> data,
                  std::vector<Tensor<T>> parents, BW&& bw, const char* what = "op") {
    detail::check_finite(data, what);
    auto out = Tensor<T>::from_data(std::move(shape), std::move(data));
    bool track = false;
    if (grad_mode_enabled())
        for (const auto& p : parents)
            if (p.node()->tracked()) track = true;
    if (track) {
        auto n = out.node();
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::forward<BW>(bw);
    }
    return out;
}

enum class BinaryKind { add, sub, mul, div };

template <typename T>
Tensor<T> elementwise_binary(BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b) {
    if (kind == BinaryKind::div)
        for (const T& v : b.data())
            if (v == T(0)) throw numeric_error("elementwise div: zero divisor");

    auto out_shape = broadcast_shape(a.shape(), b.shape());
    std::size_t total = shape_numel(out_shape);
    std::vector<T> out(total);
    const auto& ad = a.data();
    const auto& bd = b.data();

    auto apply = [kind](T x, T y) -> T {
        switch (kind) {
            case BinaryKind::add: return x + y;
            case BinaryKind::sub: return x - y;
            case BinaryKind::mul: return x * y;
            default: return x / y;
        }
    };

    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < total; ++i) out[i] = apply(ad[i], bd[i]);
    } else {
        auto sa = detail::broadcast_strides(a.shape(), out_shape.size(), out_shape);
        auto sb = detail::broadcast_strides(b.shape(), out_shape.size(), out_shape);
        detail::broadcast_iterate(out_shape, sa, sb,
                                  [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = apply(ad[ia], bd[ib]); });
    }

    auto an = a.node();
    auto bn = b.node();
    auto shape_copy = out_shape;
    return make_op<T>(
        std::move(out_shape), std::move(out), {a, b},
        [kind, an, bn, shape_copy](detail::TensorNode<T>& o) {
            const auto& og = o.grad;
            std::size_t total = og.size();
            auto sa = detail::broadcast_strides(an->shape, shape_copy.size(), shape_copy);
            auto sb = detail::broadcast_strides(bn->shape, shape_copy.size(), shape_copy);
            std::vector<T> ga(total), gb(total);
            switch (kind) {
                case BinaryKind::add:
                    ga = og;
                    gb = og;
                    break;
                case BinaryKind::sub:
                    ga = og;
                    for (std::size_t i = 0; i < total; ++i) gb[i] = -og[i];
                    break;
                case BinaryKind::mul:
                    detail::broadcast_iterate(shape_copy, sa, sb, [&](std::size_t o_, std::size_t ia, std::size_t ib) {
                        ga[o_] = og[o_] * bn->data[ib];
                        gb[o_] = og[o_] * an->data[ia];
                    });
                    break;
                case BinaryKind::div:
                    detail::broadcast_iterate(shape_copy, sa, sb, [&](std::size_t o_, std::size_t ia, std::size_t ib) {
                        T inv = T(1) / bn->data[ib];
                        ga[o_] = og[o_] * inv;
                        gb[o_] = -og[o_] * an->data[ia] * inv * inv;
                    });
                    break;
            }
            if (an->tracked()) {
                auto r = detail::reduce_to_shape(ga, shape_copy, an->shape);
                an->ensure_grad();
                for (std::size_t i = 0; i < r.size(); ++i) an->grad[i] += r[i];
            }
            if (bn->tracked()) {
                auto r = detail::reduce_to_shape(gb, shape_copy, bn->shape);
                bn->ensure_grad();
                for (std::size_t i = 0; i < r.size(); ++i) bn->grad[i] += r[i];
            }
        },
        "elementwise_binary");
}

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return elementwise_binary(BinaryKind::add, a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return elementwise_binary(BinaryKind::sub, a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return elementwise_binary(BinaryKind::mul, a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return elementwise_binary(BinaryKind::div, a, b); }

enum class ReduceKind { sum, mean };

template <typename T>
Tensor<T> reduce(ReduceKind kind, const Tensor<T>& x, std::vector<std::size_t> axes,
                 bool keep_dims = false) {
    const auto& shape = x.shape();
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
    for (auto a : axes)
        if (a >= shape.size()) throw std::invalid_argument("reduce: axis " + std::to_string(a) + " out of range for " + shape_str(shape));

    std::vector<bool> reduced(shape.size(), false);
    std::size_t count = 1;
    for (auto a : axes) {
        reduced[a] = true;
        count *= shape[a];
    }

    std::vector<std::size_t> out_shape;
    std::vector<std::size_t> kept_shape(shape.size());  // rank-preserving, reduced dims = 1
    for (std::size_t i = 0; i < shape.size(); ++i) {
        kept_shape[i] = reduced[i] ? 1 : shape[i];
        if (reduced[i]) {
            if (keep_dims) out_shape.push_back(1);
        } else {
            out_shape.push_back(shape[i]);
        }
    }
    if (out_shape.empty()) out_shape.push_back(1);

    std::vector<T> out(shape_numel(kept_shape), T(0));
    auto st = detail::broadcast_strides(kept_shape, shape.size(), shape);
    std::vector<std::size_t> szero(shape.size(), 0);
    const auto& xd = x.data();
    detail::broadcast_iterate(shape, st, szero,
                              [&](std::size_t o_from, std::size_t o_to, std::size_t) { out[o_to] += xd[o_from]; });
    if (kind == ReduceKind::mean)
        for (auto& v : out) v /= static_cast<T>(count);

    auto xn = x.node();
    auto in_shape = shape;
    return make_op<T>(
        std::move(out_shape), std::move(out), {x},
        [kind, xn, in_shape, kept_shape, count](detail::TensorNode<T>& o) {
            if (!xn->tracked()) return;
            xn->ensure_grad();
            auto st = detail::broadcast_strides(kept_shape, in_shape.size(), in_shape);
            std::vector<std::size_t> szero(in_shape.size(), 0);
            T scale = kind == ReduceKind::mean ? T(1) / static_cast<T>(count) : T(1);
            const auto& og = o.grad;
            detail::broadcast_iterate(in_shape, st, szero, [&](std::size_t o_from, std::size_t o_to, std::size_t) {
                xn->grad[o_from] += og[o_to] * scale;
            });
        },
        "reduce");
}

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x, std::vector<std::size_t> axes, bool keep_dims = false) {
    return reduce(ReduceKind::sum, x, std::move(axes), keep_dims);
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, std::vector<std::size_t> axes, bool keep_dims = false) {
    return reduce(ReduceKind::mean, x, std::move(axes), keep_dims);
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    std::vector<std::size_t> axes(x.rank());
    std::iota(axes.begin(), axes.end(), 0);
    return reduce_sum(x, axes);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<std::size_t> new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw std::invalid_argument("reshape: element count mismatch " + shape_str(x.shape()) + " -> " + shape_str(new_shape));
    auto xn = x.node();
    return make_op<T>(
        std::move(new_shape), x.data(), {x},
        [xn](detail::TensorNode<T>& o) {
            if (!xn->tracked()) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
        },
        "reshape");
}

template <typename T>
Tensor<T> sqrt_op(const Tensor<T>& x) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(x.data()[i]);
    auto xn = x.node();
    return make_op<T>(
        x.shape(), std::move(out), {x},
        [xn](detail::TensorNode<T>& o) {
            if (!xn->tracked()) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i)
                xn->grad[i] += o.grad[i] * T(0.5) / o.data[i];
        },
        "sqrt");
}

// Reverse-mode sweep from a scalar loss. Gradients accumulate additively into
// every tracked leaf; call zero_grad between steps.
template <typename T>
void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be a defined scalar tensor");
    auto root = loss.node();
    for (const T& g : root->grad)
        if (g != T(0)) throw std::logic_error("backward: called twice without grad reset");

    // Reachable nodes in descending creation order = reverse topological order.
    std::vector<std::shared_ptr<detail::TensorNode<T>>> nodes;
    std::unordered_set<detail::TensorNode<T>*> seen;
    std::vector<std::shared_ptr<detail::TensorNode<T>>> stack{root};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto n = stack.back();
        stack.pop_back();
        nodes.push_back(n);
        for (auto& p : n->parents)
            if (seen.insert(p.get()).second) stack.push_back(p);
    }
    std::sort(nodes.begin(), nodes.end(),
              [](const auto& a, const auto& b) { return a->id > b->id; });

    root->ensure_grad();
    root->grad[0] = T(1);
    for (auto& n : nodes) {
        if (!n->backward_fn) continue;
        if (n->grad.size() != n->data.size()) continue;  // no gradient reached this node
        n->backward_fn(*n);
    }
}

}  // namespace ts
