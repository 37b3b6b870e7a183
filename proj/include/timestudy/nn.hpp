// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "timestudy/tensor.hpp"

namespace ts {
namespace nn {

// ---------------------------------------------------------------------------
// GEMM kernels, row-major. Parallel over output rows with static chunking so
// results are identical for any thread count.
// ---------------------------------------------------------------------------

// C[M,N] = A[M,K] * B[K,N]  (+= when accumulate)
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C,
             bool accumulate = false) {
    parallel_for(M, [&](std::size_t m0, std::size_t m1) {
        for (std::size_t m = m0; m < m1; ++m) {
            T* crow = C + m * N;
            if (!accumulate)
                for (std::size_t n = 0; n < N; ++n) crow[n] = T(0);
            const T* arow = A + m * K;
            for (std::size_t k = 0; k < K; ++k) {
                T a = arow[k];
                if (a == T(0)) continue;
                const T* brow = B + k * N;
                for (std::size_t n = 0; n < N; ++n) crow[n] += a * brow[n];
            }
        }
    });
}

// C[M,N] = A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C,
             bool accumulate = false) {
    parallel_for(M, [&](std::size_t m0, std::size_t m1) {
        for (std::size_t m = m0; m < m1; ++m) {
            const T* arow = A + m * K;
            T* crow = C + m * N;
            for (std::size_t n = 0; n < N; ++n) {
                const T* brow = B + n * K;
                T acc = accumulate ? crow[n] : T(0);
                for (std::size_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
                crow[n] = acc;
            }
        }
    });
}

// C[M,N] = A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C,
             bool accumulate = false) {
    parallel_for(M, [&](std::size_t m0, std::size_t m1) {
        for (std::size_t m = m0; m < m1; ++m) {
            T* crow = C + m * N;
            if (!accumulate)
                for (std::size_t n = 0; n < N; ++n) crow[n] = T(0);
            for (std::size_t k = 0; k < K; ++k) {
                T a = A[k * M + m];
                if (a == T(0)) continue;
                const T* brow = B + k * N;
                for (std::size_t n = 0; n < N; ++n) crow[n] += a * brow[n];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// 3D convolution (cross-correlation, the deep-learning convention)
// ---------------------------------------------------------------------------

using Dims3 = std::array<std::size_t, 3>;

inline Dims3 conv3d_output_shape(const Dims3& in, const Dims3& k, const Dims3& s, const Dims3& p) {
    Dims3 out{};
    for (std::size_t d = 0; d < 3; ++d) {
        if (s[d] < 1) throw std::invalid_argument("conv3d: stride must be >= 1");
        std::int64_t num = static_cast<std::int64_t>(in[d]) + 2 * static_cast<std::int64_t>(p[d]) -
                           static_cast<std::int64_t>(k[d]);
        if (num < 0)
            throw std::invalid_argument("conv3d: kernel larger than padded input in dimension " + std::to_string(d));
        out[d] = static_cast<std::size_t>(num / static_cast<std::int64_t>(s[d])) + 1;
    }
    return out;
}

template <typename T>
struct Conv3dParams {
    Tensor<T> weight;  // [out_ch, in_ch, kT, kH, kW]
    Tensor<T> bias;    // [out_ch]; undefined => no bias
    Dims3 stride{1, 1, 1};
    Dims3 padding{0, 0, 0};
};

namespace detail {

// Unroll one sample x[C,T,H,W] into col[C*kT*kH*kW, To*Ho*Wo].
template <typename T>
void im2col(const T* x, std::size_t C, const Dims3& in, const Dims3& k, const Dims3& s,
            const Dims3& p, const Dims3& out, T* col) {
    const std::size_t To = out[0], Ho = out[1], Wo = out[2];
    const std::size_t P = To * Ho * Wo;
    const std::size_t Tn = in[0], Hn = in[1], Wn = in[2];
    std::size_t r = 0;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t kt = 0; kt < k[0]; ++kt)
            for (std::size_t kh = 0; kh < k[1]; ++kh)
                for (std::size_t kw = 0; kw < k[2]; ++kw, ++r) {
                    T* dst = col + r * P;
                    const T* src = x + c * Tn * Hn * Wn;
                    for (std::size_t to = 0; to < To; ++to) {
                        std::int64_t ti = static_cast<std::int64_t>(to * s[0] + kt) - static_cast<std::int64_t>(p[0]);
                        bool t_ok = ti >= 0 && ti < static_cast<std::int64_t>(Tn);
                        for (std::size_t ho = 0; ho < Ho; ++ho) {
                            std::int64_t hi = static_cast<std::int64_t>(ho * s[1] + kh) - static_cast<std::int64_t>(p[1]);
                            bool h_ok = t_ok && hi >= 0 && hi < static_cast<std::int64_t>(Hn);
                            std::size_t base = (to * Ho + ho) * Wo;
                            if (!h_ok) {
                                for (std::size_t wo = 0; wo < Wo; ++wo) dst[base + wo] = T(0);
                                continue;
                            }
                            const T* srow = src + (static_cast<std::size_t>(ti) * Hn + static_cast<std::size_t>(hi)) * Wn;
                            for (std::size_t wo = 0; wo < Wo; ++wo) {
                                std::int64_t wi = static_cast<std::int64_t>(wo * s[2] + kw) - static_cast<std::int64_t>(p[2]);
                                dst[base + wo] = (wi >= 0 && wi < static_cast<std::int64_t>(Wn))
                                                     ? srow[static_cast<std::size_t>(wi)]
                                                     : T(0);
                            }
                        }
                    }
                }
}

// Scatter-add of col gradients back into the input gradient of one sample.
// Parallel over channels: each channel's rows touch only that channel's slab.
template <typename T>
void col2im_add(const T* col, std::size_t C, const Dims3& in, const Dims3& k, const Dims3& s,
                const Dims3& p, const Dims3& out, T* dx) {
    const std::size_t To = out[0], Ho = out[1], Wo = out[2];
    const std::size_t P = To * Ho * Wo;
    const std::size_t Tn = in[0], Hn = in[1], Wn = in[2];
    const std::size_t rows_per_c = k[0] * k[1] * k[2];
    parallel_for(C, [&](std::size_t c0, std::size_t c1) {
        for (std::size_t c = c0; c < c1; ++c) {
            T* dst = dx + c * Tn * Hn * Wn;
            std::size_t r = c * rows_per_c;
            for (std::size_t kt = 0; kt < k[0]; ++kt)
                for (std::size_t kh = 0; kh < k[1]; ++kh)
                    for (std::size_t kw = 0; kw < k[2]; ++kw, ++r) {
                        const T* src = col + r * P;
                        for (std::size_t to = 0; to < To; ++to) {
                            std::int64_t ti = static_cast<std::int64_t>(to * s[0] + kt) - static_cast<std::int64_t>(p[0]);
                            if (ti < 0 || ti >= static_cast<std::int64_t>(Tn)) continue;
                            for (std::size_t ho = 0; ho < Ho; ++ho) {
                                std::int64_t hi = static_cast<std::int64_t>(ho * s[1] + kh) - static_cast<std::int64_t>(p[1]);
                                if (hi < 0 || hi >= static_cast<std::int64_t>(Hn)) continue;
                                T* drow = dst + (static_cast<std::size_t>(ti) * Hn + static_cast<std::size_t>(hi)) * Wn;
                                std::size_t base = (to * Ho + ho) * Wo;
                                for (std::size_t wo = 0; wo < Wo; ++wo) {
                                    std::int64_t wi = static_cast<std::int64_t>(wo * s[2] + kw) - static_cast<std::int64_t>(p[2]);
                                    if (wi < 0 || wi >= static_cast<std::int64_t>(Wn)) continue;
                                    drow[static_cast<std::size_t>(wi)] += src[base + wo];
                                }
                            }
                        }
                    }
        }
    });
}

}  // namespace detail

// Direct reference convolution: 7 nested loops, no unrolling. This is the
// correctness oracle for the im2col path; both must agree to <= 1e-4.
template <typename T>
std::vector<T> conv3d_naive(const std::vector<T>& x, std::size_t N, std::size_t C, const Dims3& in,
                            const std::vector<T>& w, std::size_t out_ch, const Dims3& k,
                            const Dims3& s, const Dims3& p, const T* bias = nullptr) {
    Dims3 out = conv3d_output_shape(in, k, s, p);
    const std::size_t To = out[0], Ho = out[1], Wo = out[2];
    std::vector<T> y(N * out_ch * To * Ho * Wo, T(0));
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < out_ch; ++co)
            for (std::size_t to = 0; to < To; ++to)
                for (std::size_t ho = 0; ho < Ho; ++ho)
                    for (std::size_t wo = 0; wo < Wo; ++wo) {
                        T acc = bias ? bias[co] : T(0);
                        for (std::size_t ci = 0; ci < C; ++ci)
                            for (std::size_t kt = 0; kt < k[0]; ++kt)
                                for (std::size_t kh = 0; kh < k[1]; ++kh)
                                    for (std::size_t kw = 0; kw < k[2]; ++kw) {
                                        std::int64_t ti = static_cast<std::int64_t>(to * s[0] + kt) - static_cast<std::int64_t>(p[0]);
                                        std::int64_t hi = static_cast<std::int64_t>(ho * s[1] + kh) - static_cast<std::int64_t>(p[1]);
                                        std::int64_t wi = static_cast<std::int64_t>(wo * s[2] + kw) - static_cast<std::int64_t>(p[2]);
                                        if (ti < 0 || ti >= static_cast<std::int64_t>(in[0]) ||
                                            hi < 0 || hi >= static_cast<std::int64_t>(in[1]) ||
                                            wi < 0 || wi >= static_cast<std::int64_t>(in[2]))
                                            continue;
                                        acc += x[(((n * C + ci) * in[0] + static_cast<std::size_t>(ti)) * in[1] +
                                                  static_cast<std::size_t>(hi)) * in[2] + static_cast<std::size_t>(wi)] *
                                               w[(((co * C + ci) * k[0] + kt) * k[1] + kh) * k[2] + kw];
                                    }
                        y[(((n * out_ch + co) * To + to) * Ho + ho) * Wo + wo] = acc;
                    }
    return y;
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Conv3dParams<T>& prm) {
    const auto& xs = x.shape();
    const auto& ws = prm.weight.shape();
    if (xs.size() != 5) throw std::invalid_argument("conv3d: input must be [N,C,T,H,W], got " + shape_str(xs));
    if (ws.size() != 5) throw std::invalid_argument("conv3d: weight must be [out,in,kT,kH,kW], got " + shape_str(ws));
    if (xs[1] != ws[1])
        throw std::invalid_argument("conv3d: channel mismatch, input has " + std::to_string(xs[1]) +
                                    ", weight expects " + std::to_string(ws[1]));
    const std::size_t N = xs[0], C = xs[1], out_ch = ws[0];
    const Dims3 in{xs[2], xs[3], xs[4]};
    const Dims3 k{ws[2], ws[3], ws[4]};
    const Dims3 out = conv3d_output_shape(in, k, prm.stride, prm.padding);
    const std::size_t P = out[0] * out[1] * out[2];
    const std::size_t R = C * k[0] * k[1] * k[2];
    const bool has_bias = prm.bias.defined();

    std::vector<T> y(N * out_ch * P);
    {
        std::vector<T> col(R * P);
        for (std::size_t n = 0; n < N; ++n) {
            detail::im2col(x.data().data() + n * C * in[0] * in[1] * in[2], C, in, k, prm.stride,
                           prm.padding, out, col.data());
            gemm_nn(out_ch, P, R, prm.weight.data().data(), col.data(), y.data() + n * out_ch * P);
        }
    }
    if (has_bias)
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t co = 0; co < out_ch; ++co) {
                T b = prm.bias.data()[co];
                T* row = y.data() + (n * out_ch + co) * P;
                for (std::size_t i = 0; i < P; ++i) row[i] += b;
            }

    auto xn = x.node();
    auto wn = prm.weight.node();
    auto bn = has_bias ? prm.bias.node() : nullptr;
    Dims3 stride = prm.stride, padding = prm.padding;
    std::vector<Tensor<T>> parents{x, prm.weight};
    if (has_bias) parents.push_back(prm.bias);

    return make_op<T>(
        {N, out_ch, out[0], out[1], out[2]}, std::move(y), std::move(parents),
        [=](ts::detail::TensorNode<T>& o) {
            const T* dy = o.grad.data();
            std::vector<T> col(R * P);
            std::vector<T> dcol(R * P);
            bool need_dx = xn->tracked();
            bool need_dw = wn->tracked();
            if (need_dx) xn->ensure_grad();
            if (need_dw) wn->ensure_grad();
            for (std::size_t n = 0; n < N; ++n) {
                const T* dyn = dy + n * out_ch * P;
                if (need_dw) {
                    detail::im2col(xn->data.data() + n * C * in[0] * in[1] * in[2], C, in, k,
                                   stride, padding, out, col.data());
                    gemm_nt(out_ch, R, P, dyn, col.data(), wn->grad.data(), true);
                }
                if (need_dx) {
                    gemm_tn(R, P, out_ch, wn->data.data(), dyn, dcol.data());
                    detail::col2im_add(dcol.data(), C, in, k, stride, padding, out,
                                       xn->grad.data() + n * C * in[0] * in[1] * in[2]);
                }
            }
            if (bn && bn->tracked()) {
                bn->ensure_grad();
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t co = 0; co < out_ch; ++co) {
                        const T* row = dy + (n * out_ch + co) * P;
                        T acc = T(0);
                        for (std::size_t i = 0; i < P; ++i) acc += row[i];
                        bn->grad[co] += acc;
                    }
            }
        },
        "conv3d");
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    std::vector<T> y(x.numel());
    const auto& xd = x.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = xd[i] > T(0) ? xd[i] : T(0);
    auto xn = x.node();
    return make_op<T>(
        x.shape(), std::move(y), {x},
        [xn](ts::detail::TensorNode<T>& o) {
            if (!xn->tracked()) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i)
                if (xn->data[i] > T(0)) xn->grad[i] += o.grad[i];  // subgradient at 0 is 0
        },
        "relu");
}

// ---------------------------------------------------------------------------
// 3D max pooling (padding value -inf; gradient to first argmax in scan order)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> maxpool3d(const Tensor<T>& x, const Dims3& k, const Dims3& s, const Dims3& p) {
    const auto& xs = x.shape();
    if (xs.size() != 5) throw std::invalid_argument("maxpool3d: input must be [N,C,T,H,W]");
    const std::size_t N = xs[0], C = xs[1];
    const Dims3 in{xs[2], xs[3], xs[4]};
    const Dims3 out = conv3d_output_shape(in, k, s, p);
    const std::size_t To = out[0], Ho = out[1], Wo = out[2];
    const std::size_t P = To * Ho * Wo;
    const std::size_t in_sz = in[0] * in[1] * in[2];

    std::vector<T> y(N * C * P);
    auto argmax = std::make_shared<std::vector<std::size_t>>(N * C * P);
    const auto& xd = x.data();
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const T* src = xd.data() + nc * in_sz;
        T* dst = y.data() + nc * P;
        std::size_t* am = argmax->data() + nc * P;
        for (std::size_t to = 0; to < To; ++to)
            for (std::size_t ho = 0; ho < Ho; ++ho)
                for (std::size_t wo = 0; wo < Wo; ++wo) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_i = std::numeric_limits<std::size_t>::max();
                    for (std::size_t kt = 0; kt < k[0]; ++kt) {
                        std::int64_t ti = static_cast<std::int64_t>(to * s[0] + kt) - static_cast<std::int64_t>(p[0]);
                        if (ti < 0 || ti >= static_cast<std::int64_t>(in[0])) continue;
                        for (std::size_t kh = 0; kh < k[1]; ++kh) {
                            std::int64_t hi = static_cast<std::int64_t>(ho * s[1] + kh) - static_cast<std::int64_t>(p[1]);
                            if (hi < 0 || hi >= static_cast<std::int64_t>(in[1])) continue;
                            for (std::size_t kw = 0; kw < k[2]; ++kw) {
                                std::int64_t wi = static_cast<std::int64_t>(wo * s[2] + kw) - static_cast<std::int64_t>(p[2]);
                                if (wi < 0 || wi >= static_cast<std::int64_t>(in[2])) continue;
                                std::size_t i = (static_cast<std::size_t>(ti) * in[1] + static_cast<std::size_t>(hi)) * in[2] +
                                                static_cast<std::size_t>(wi);
                                if (src[i] > best) {
                                    best = src[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    if (best_i == std::numeric_limits<std::size_t>::max())
                        throw std::invalid_argument("maxpool3d: pooling window lies entirely inside padding");
                    std::size_t o = (to * Ho + ho) * Wo + wo;
                    dst[o] = best;
                    am[o] = nc * in_sz + best_i;
                }
    }

    auto xn = x.node();
    return make_op<T>(
        {N, C, To, Ho, Wo}, std::move(y), {x},
        [xn, argmax](ts::detail::TensorNode<T>& o) {
            if (!xn->tracked()) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[(*argmax)[i]] += o.grad[i];
        },
        "maxpool3d");
}

// ---------------------------------------------------------------------------
// Batch normalization over (N,T,H,W) per channel
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNorm3dState {
    Tensor<T> gamma, beta;  // learnable [C]
    std::vector<T> running_mean, running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);
    bool training = true;

    explicit BatchNorm3dState(std::size_t channels)
        : gamma(Tensor<T>::full({channels}, T(1))),
          beta(Tensor<T>::zeros({channels})),
          running_mean(channels, T(0)),
          running_var(channels, T(1)) {}

    std::size_t channels() const { return gamma.numel(); }
};

template <typename T>
Tensor<T> batchnorm3d(const Tensor<T>& x, BatchNorm3dState<T>& st) {
    const auto& xs = x.shape();
    if (xs.size() != 5) throw std::invalid_argument("batchnorm3d: input must be [N,C,T,H,W]");
    const std::size_t N = xs[0], C = xs[1];
    if (C != st.channels())
        throw std::invalid_argument("batchnorm3d: channel mismatch, input " + std::to_string(C) +
                                    " vs state " + std::to_string(st.channels()));
    const std::size_t inner = xs[2] * xs[3] * xs[4];
    const std::size_t m = N * inner;  // elements per channel
    if (st.training && m < 2)
        throw std::invalid_argument("batchnorm3d: train mode needs more than one element per channel");

    const auto& xd = x.data();
    auto mean = std::make_shared<std::vector<T>>(C, T(0));
    auto rstd = std::make_shared<std::vector<T>>(C, T(0));
    auto xhat = std::make_shared<std::vector<T>>(xd.size());

    if (st.training) {
        for (std::size_t c = 0; c < C; ++c) {
            T mu = T(0);
            for (std::size_t n = 0; n < N; ++n) {
                const T* src = xd.data() + (n * C + c) * inner;
                for (std::size_t i = 0; i < inner; ++i) mu += src[i];
            }
            mu /= static_cast<T>(m);
            T var = T(0);
            for (std::size_t n = 0; n < N; ++n) {
                const T* src = xd.data() + (n * C + c) * inner;
                for (std::size_t i = 0; i < inner; ++i) {
                    T d = src[i] - mu;
                    var += d * d;
                }
            }
            var /= static_cast<T>(m);  // biased, used for normalization
            (*mean)[c] = mu;
            (*rstd)[c] = T(1) / std::sqrt(var + st.eps);
            st.running_mean[c] = (T(1) - st.momentum) * st.running_mean[c] + st.momentum * mu;
            st.running_var[c] = (T(1) - st.momentum) * st.running_var[c] +
                                st.momentum * var * static_cast<T>(m) / static_cast<T>(m - 1);
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            (*mean)[c] = st.running_mean[c];
            (*rstd)[c] = T(1) / std::sqrt(st.running_var[c] + st.eps);
        }
    }

    std::vector<T> y(xd.size());
    const auto& gd = st.gamma.data();
    const auto& bd = st.beta.data();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const T* src = xd.data() + (n * C + c) * inner;
            T* h = xhat->data() + (n * C + c) * inner;
            T* dst = y.data() + (n * C + c) * inner;
            T mu = (*mean)[c], rs = (*rstd)[c], g = gd[c], b = bd[c];
            for (std::size_t i = 0; i < inner; ++i) {
                h[i] = (src[i] - mu) * rs;
                dst[i] = g * h[i] + b;
            }
        }

    auto xn = x.node();
    auto gn = st.gamma.node();
    auto betan = st.beta.node();
    bool train = st.training;
    return make_op<T>(
        xs, std::move(y), {x, st.gamma, st.beta},
        [=](ts::detail::TensorNode<T>& o) {
            const T* dy = o.grad.data();
            std::vector<T> sum_dy(C, T(0)), sum_dy_xhat(C, T(0));
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) {
                    const T* g = dy + (n * C + c) * inner;
                    const T* h = xhat->data() + (n * C + c) * inner;
                    T s0 = T(0), s1 = T(0);
                    for (std::size_t i = 0; i < inner; ++i) {
                        s0 += g[i];
                        s1 += g[i] * h[i];
                    }
                    sum_dy[c] += s0;
                    sum_dy_xhat[c] += s1;
                }
            if (betan->tracked()) {
                betan->ensure_grad();
                for (std::size_t c = 0; c < C; ++c) betan->grad[c] += sum_dy[c];
            }
            if (gn->tracked()) {
                gn->ensure_grad();
                for (std::size_t c = 0; c < C; ++c) gn->grad[c] += sum_dy_xhat[c];
            }
            if (!xn->tracked()) return;
            xn->ensure_grad();
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) {
                    const T* g = dy + (n * C + c) * inner;
                    const T* h = xhat->data() + (n * C + c) * inner;
                    T* dx = xn->grad.data() + (n * C + c) * inner;
                    T gamma_rs = gn->data[c] * (*rstd)[c];
                    if (train) {
                        T mg = sum_dy[c] / static_cast<T>(m);
                        T mgh = sum_dy_xhat[c] / static_cast<T>(m);
                        for (std::size_t i = 0; i < inner; ++i)
                            dx[i] += gamma_rs * (g[i] - mg - h[i] * mgh);
                    } else {
                        for (std::size_t i = 0; i < inner; ++i) dx[i] += gamma_rs * g[i];
                    }
                }
        },
        "batchnorm3d");
}

// ---------------------------------------------------------------------------
// Global average pool over (T,H,W) and fully connected layer
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    if (x.rank() != 5) throw std::invalid_argument("global_avg_pool: input must be [N,C,T,H,W]");
    return reduce_mean(x, {2, 3, 4});
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    const auto& xs = x.shape();
    const auto& ws = weight.shape();
    if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[0])
        throw std::invalid_argument("linear: shape mismatch " + shape_str(xs) + " x " + shape_str(ws));
    const std::size_t N = xs[0], F = xs[1], K = ws[1];
    if (bias.defined() && bias.numel() != K)
        throw std::invalid_argument("linear: bias length must equal output features");

    std::vector<T> y(N * K);
    gemm_nn(N, K, F, x.data().data(), weight.data().data(), y.data());
    if (bias.defined())
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t j = 0; j < K; ++j) y[n * K + j] += bias.data()[j];

    auto xn = x.node();
    auto wn = weight.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    std::vector<Tensor<T>> parents{x, weight};
    if (bias.defined()) parents.push_back(bias);
    return make_op<T>(
        {N, K}, std::move(y), std::move(parents),
        [=](ts::detail::TensorNode<T>& o) {
            const T* dy = o.grad.data();
            if (xn->tracked()) {
                xn->ensure_grad();
                gemm_nt(N, F, K, dy, wn->data.data(), xn->grad.data(), true);
            }
            if (wn->tracked()) {
                wn->ensure_grad();
                gemm_tn(F, K, N, xn->data.data(), dy, wn->grad.data(), true);
            }
            if (bn && bn->tracked()) {
                bn->ensure_grad();
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t j = 0; j < K; ++j) bn->grad[j] += dy[n * K + j];
            }
        },
        "linear");
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy (mean over batch, max-subtraction stabilized)
// ---------------------------------------------------------------------------

// Row-wise stabilized softmax of an [N,K] buffer.
template <typename T>
std::vector<T> softmax_rows(const std::vector<T>& logits, std::size_t N, std::size_t K) {
    std::vector<T> p(logits.size());
    for (std::size_t n = 0; n < N; ++n) {
        const T* row = logits.data() + n * K;
        T* out = p.data() + n * K;
        T mx = row[0];
        for (std::size_t j = 1; j < K; ++j) mx = std::max(mx, row[j]);
        T z = T(0);
        for (std::size_t j = 0; j < K; ++j) {
            out[j] = std::exp(row[j] - mx);
            z += out[j];
        }
        for (std::size_t j = 0; j < K; ++j) out[j] /= z;
    }
    return p;
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& targets) {
    const auto& ls = logits.shape();
    if (ls.size() != 2) throw std::invalid_argument("softmax_cross_entropy: logits must be [N,K]");
    const std::size_t N = ls[0], K = ls[1];
    if (targets.size() != N)
        throw std::invalid_argument("softmax_cross_entropy: need one target per row");
    for (auto t : targets)
        if (t >= K) throw std::invalid_argument("softmax_cross_entropy: target index " + std::to_string(t) + " out of range");
    if (N == 0) throw std::invalid_argument("softmax_cross_entropy: empty batch");

    auto probs = std::make_shared<std::vector<T>>(softmax_rows(logits.data(), N, K));
    T loss = T(0);
    for (std::size_t n = 0; n < N; ++n) {
        // log-softmax recomputed stably rather than log of the stored ratio
        const T* row = logits.data().data() + n * K;
        T mx = row[0];
        for (std::size_t j = 1; j < K; ++j) mx = std::max(mx, row[j]);
        T z = T(0);
        for (std::size_t j = 0; j < K; ++j) z += std::exp(row[j] - mx);
        loss += -(row[targets[n]] - mx - std::log(z));
    }
    loss /= static_cast<T>(N);

    auto ln = logits.node();
    auto tgt = targets;
    return make_op<T>(
        {1}, {loss}, {logits},
        [=](ts::detail::TensorNode<T>& o) {
            if (!ln->tracked()) return;
            ln->ensure_grad();
            T up = o.grad[0] / static_cast<T>(N);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t j = 0; j < K; ++j) {
                    T g = (*probs)[n * K + j] - (j == tgt[n] ? T(1) : T(0));
                    ln->grad[n * K + j] += up * g;
                }
        },
        "softmax_cross_entropy");
}

}  // namespace nn
}  // namespace ts
