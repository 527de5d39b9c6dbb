#pragma once

// Additive attention gate on a skip connection:
//   q     = psi * relu(Wx * x + Wg * up(g) + bg) + bpsi
//   alpha = sigmoid(q)            (A coefficient channels)
//   gated = alpha (.) x
// `up` is linear resampling of the gating signal onto x's grid. Because Wg is
// a per-voxel linear map it commutes with `up`, so Wg is applied on the
// coarse grid first.

#include <type_traits>
#include <vector>

#include "vesselseg/nn/ops.hpp"

namespace vesselseg::nn {

enum class AlphaMode {
    kClassAveraged, ///< one coefficient per foreground class, averaged, broadcast to every feature channel
    kPerChannel,    ///< one coefficient per skip feature channel
};

/// Non-owning views of one gate's parameters.
template <typename T>
struct GateParamsView {
    int f_l = 0;   ///< skip channels
    int f_g = 0;   ///< gating channels
    int f_int = 0; ///< intermediate channels
    int a = 0;     ///< attention coefficient channels
    AlphaMode mode = AlphaMode::kClassAveraged;
    const T* wx = nullptr;   ///< [f_int][f_l]
    const T* wg = nullptr;   ///< [f_int][f_g]
    const T* bg = nullptr;   ///< [f_int]
    const T* psi = nullptr;  ///< [a][f_int]
    const T* bpsi = nullptr; ///< [a]
};

template <typename T>
struct GateGradView {
    T* wx = nullptr;
    T* wg = nullptr;
    T* bg = nullptr;
    T* psi = nullptr;
    T* bpsi = nullptr;
};

template <typename T>
struct GateCache {
    Tensor<T> x, g;
    Tensor<T> pre;     ///< Wx x + up(Wg g) + bg (before ReLU)
    Tensor<T> s;       ///< relu(pre)
    Tensor<T> coeffs;  ///< sigmoid(q), a channels
    Tensor<T> alpha;   ///< effective coefficient map (1 or f_l channels)
    bool forced_one = false;
};

template <typename T>
struct GateResult {
    Tensor<T> gated;
    Tensor<T> alpha; ///< 1 channel (class-averaged) or f_l channels (per-channel)
};

template <typename T>
GateResult<T> attention_gate_forward(const Tensor<T>& x, const Tensor<T>& g, const GateParamsView<T>& p,
                                     std::type_identity_t<GateCache<T>>* cache = nullptr,
                                     bool force_alpha_one = false) {
    if (x.channels != p.f_l || g.channels != p.f_g) throw InvalidArgument("attention gate: channel mismatch");
    for (int d = 0; d < 3; ++d)
        if (g.dims[d] > x.dims[d]) throw InvalidArgument("attention gate: gating signal finer than skip features");
    if (p.mode == AlphaMode::kPerChannel && p.a != p.f_l)
        throw InvalidArgument("attention gate: per-channel mode needs one coefficient per skip channel");

    Tensor<T> theta = conv1_forward(x, p.wx, static_cast<const T*>(nullptr), p.f_int);
    Tensor<T> phi = linear_upsample_forward(conv1_forward(g, p.wg, static_cast<const T*>(nullptr), p.f_int), x.dims);
    const std::size_t n = x.spatial();
    Tensor<T> pre(p.f_int, x.dims), s(p.f_int, x.dims);
    for (int c = 0; c < p.f_int; ++c)
        for (std::size_t i = 0; i < n; ++i) {
            const T v = theta.data[c * n + i] + phi.data[c * n + i] + p.bg[c];
            pre.data[c * n + i] = v;
            s.data[c * n + i] = v > T{0} ? v : T{0};
        }
    Tensor<T> q = conv1_forward(s, p.psi, p.bpsi, p.a);
    Tensor<T> coeffs(p.a, x.dims);
    for (std::size_t i = 0; i < q.data.size(); ++i) coeffs.data[i] = sigmoid(q.data[i]);

    Tensor<T> alpha;
    if (p.mode == AlphaMode::kClassAveraged) {
        alpha = Tensor<T>(1, x.dims);
        for (std::size_t i = 0; i < n; ++i) {
            T acc = 0;
            for (int c = 0; c < p.a; ++c) acc += coeffs.data[c * n + i];
            alpha.data[i] = acc / static_cast<T>(p.a);
        }
    } else {
        alpha = coeffs;
    }
    if (force_alpha_one) std::fill(alpha.data.begin(), alpha.data.end(), T(1));

    Tensor<T> gated(x.channels, x.dims);
    for (int c = 0; c < x.channels; ++c) {
        const T* a = alpha.channels == 1 ? alpha.ptr(0) : alpha.ptr(c);
        const T* xc = x.ptr(c);
        T* yc = gated.ptr(c);
        for (std::size_t i = 0; i < n; ++i) yc[i] = a[i] * xc[i];
    }
    if (cache) {
        cache->x = x;
        cache->g = g;
        cache->pre = std::move(pre);
        cache->s = std::move(s);
        cache->coeffs = std::move(coeffs);
        cache->alpha = alpha;
        cache->forced_one = force_alpha_one;
    }
    return {std::move(gated), std::move(alpha)};
}

/// Accumulates parameter gradients; returns (dx, dg).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> attention_gate_backward(const Tensor<T>& dgated, const GateCache<T>& c,
                                                        const GateParamsView<T>& p, const GateGradView<T>& gp) {
    const std::size_t n = c.x.spatial();
    Tensor<T> dx(c.x.channels, c.x.dims);
    Tensor<T> dalpha(c.alpha.channels, c.x.dims);
    for (int ch = 0; ch < c.x.channels; ++ch) {
        const T* a = c.alpha.channels == 1 ? c.alpha.ptr(0) : c.alpha.ptr(ch);
        T* da = c.alpha.channels == 1 ? dalpha.ptr(0) : dalpha.ptr(ch);
        const T* xc = c.x.ptr(ch);
        const T* dy = dgated.ptr(ch);
        T* dxc = dx.ptr(ch);
        for (std::size_t i = 0; i < n; ++i) {
            dxc[i] = a[i] * dy[i];
            da[i] += xc[i] * dy[i];
        }
    }
    if (c.forced_one) return {std::move(dx), Tensor<T>(c.g.channels, c.g.dims)};

    Tensor<T> dq(p.a, c.x.dims);
    for (int k = 0; k < p.a; ++k)
        for (std::size_t i = 0; i < n; ++i) {
            const T da = p.mode == AlphaMode::kClassAveraged ? dalpha.data[i] / static_cast<T>(p.a)
                                                             : dalpha.data[k * n + i];
            const T s = c.coeffs.data[k * n + i];
            dq.data[k * n + i] = da * s * (T(1) - s);
        }
    Tensor<T> ds = conv1_backward(dq, c.s, p.psi, gp.psi, gp.bpsi);
    for (std::size_t i = 0; i < ds.data.size(); ++i)
        if (c.pre.data[i] <= T{0}) ds.data[i] = T{0};
    for (int k = 0; k < p.f_int; ++k) {
        T acc = 0;
        for (std::size_t i = 0; i < n; ++i) acc += ds.data[k * n + i];
        gp.bg[k] += acc;
    }
    Tensor<T> dx_theta = conv1_backward(ds, c.x, p.wx, gp.wx, static_cast<T*>(nullptr));
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dx_theta.data[i];
    Tensor<T> dphi_coarse = linear_upsample_backward(ds, c.g.dims);
    Tensor<T> dg = conv1_backward(dphi_coarse, c.g, p.wg, gp.wg, static_cast<T*>(nullptr));
    return {std::move(dx), std::move(dg)};
}

} // namespace vesselseg::nn
