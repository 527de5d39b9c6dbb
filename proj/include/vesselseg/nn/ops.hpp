#pragma once

// Differentiable building blocks with explicit forward/backward passes.
// Backward functions accumulate (+=) into parameter gradients and return or
// overwrite input gradients as documented per function.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "vesselseg/nn/tensor.hpp"

namespace vesselseg::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

// ---------------------------------------------------------------------------
// 3x3x3 convolution, zero padding 1, stride 1, no bias.
//
// Evaluated on the flattened zero-padded grid: for the padded index p of an
// output voxel, tap (dx, dy, dz) reads p + (dz*Hp + dy)*Wp + dx, so every tap
// row of the im2col matrix is a contiguous slice of the padded input.
// Columns that land on the padding ring are computed and discarded.
// ---------------------------------------------------------------------------

inline constexpr int kTaps = 27;
inline constexpr std::int64_t kConvBlock = 4096;

struct PaddedLayout {
    Index3 dims{0, 0, 0};
    std::int64_t wp = 0, hp = 0, dp = 0;
    std::int64_t first = 0, last = 0; ///< padded indices of output voxels (0,0,0) and (W-1,H-1,D-1)
    std::array<std::int64_t, kTaps> taps{};
    std::vector<std::int64_t> out_index; ///< per column in [first, last]: output linear index or -1

    explicit PaddedLayout(const Index3& d) : dims(d) {
        wp = d[0] + 2;
        hp = d[1] + 2;
        dp = d[2] + 2;
        first = (hp + 1) * wp + 1;
        last = ((d[2]) * hp + d[1]) * wp + d[0];
        int t = 0;
        for (std::int64_t dz = -1; dz <= 1; ++dz)
            for (std::int64_t dy = -1; dy <= 1; ++dy)
                for (std::int64_t dx = -1; dx <= 1; ++dx) taps[t++] = (dz * hp + dy) * wp + dx;
        out_index.assign(static_cast<std::size_t>(last - first + 1), -1);
        for (std::int64_t z = 0; z < d[2]; ++z)
            for (std::int64_t y = 0; y < d[1]; ++y)
                for (std::int64_t x = 0; x < d[0]; ++x) {
                    const auto p = ((z + 1) * hp + (y + 1)) * wp + (x + 1);
                    out_index[static_cast<std::size_t>(p - first)] = (z * d[1] + y) * d[0] + x;
                }
    }

    std::int64_t padded_size() const { return wp * hp * dp; }
    std::int64_t columns() const { return last - first + 1; }
};

template <typename T>
std::vector<T> pad_input(const Tensor<T>& x, const PaddedLayout& L) {
    std::vector<T> xp(static_cast<std::size_t>(x.channels * L.padded_size()), T{0});
    const auto W = x.dims[0], H = x.dims[1], D = x.dims[2];
    for (int c = 0; c < x.channels; ++c) {
        const T* src = x.ptr(c);
        T* dst = xp.data() + c * L.padded_size();
        for (std::int64_t z = 0; z < D; ++z)
            for (std::int64_t y = 0; y < H; ++y)
                std::memcpy(dst + ((z + 1) * L.hp + (y + 1)) * L.wp + 1, src + (z * H + y) * W, sizeof(T) * W);
    }
    return xp;
}

template <typename T>
void im2col_block(const std::vector<T>& xp, int cin, const PaddedLayout& L, std::int64_t begin, std::int64_t n,
                  RowMatrix<T>& col) {
    col.resize(cin * kTaps, n);
    for (int c = 0; c < cin; ++c) {
        const T* base = xp.data() + c * L.padded_size() + begin;
        for (int t = 0; t < kTaps; ++t) std::memcpy(col.row(c * kTaps + t).data(), base + L.taps[t], sizeof(T) * n);
    }
}

/// weight: [cout][cin][27]. Returns output; `padded` receives the padded input for backward.
template <typename T>
Tensor<T> conv3_forward(const Tensor<T>& x, const T* weight, int cout, std::vector<T>* padded) {
    const PaddedLayout L(x.dims);
    auto xp = pad_input(x, L);
    Tensor<T> y(cout, x.dims);
    ConstMatMap<T> w(weight, cout, x.channels * kTaps);
    RowMatrix<T> col, blk;
    for (std::int64_t b = L.first; b <= L.last; b += kConvBlock) {
        const auto n = std::min(kConvBlock, L.last - b + 1);
        im2col_block(xp, x.channels, L, b, n, col);
        blk.noalias() = w * col;
        for (std::int64_t q = 0; q < n; ++q) {
            const auto o = L.out_index[static_cast<std::size_t>(b - L.first + q)];
            if (o < 0) continue;
            for (int co = 0; co < cout; ++co) y.data[co * y.spatial() + o] = blk(co, q);
        }
    }
    if (padded) *padded = std::move(xp);
    return y;
}

/// Accumulates dweight; returns dx.
template <typename T>
Tensor<T> conv3_backward(const Tensor<T>& dy, const std::vector<T>& xp, int cin, const T* weight, T* dweight) {
    const PaddedLayout L(dy.dims);
    const int cout = dy.channels;
    ConstMatMap<T> w(weight, cout, cin * kTaps);
    MatMap<T> dw(dweight, cout, cin * kTaps);
    std::vector<T> dxp(static_cast<std::size_t>(cin * L.padded_size()), T{0});
    RowMatrix<T> col, dblk(cout, kConvBlock), dcol;
    for (std::int64_t b = L.first; b <= L.last; b += kConvBlock) {
        const auto n = std::min(kConvBlock, L.last - b + 1);
        dblk.resize(cout, n);
        for (std::int64_t q = 0; q < n; ++q) {
            const auto o = L.out_index[static_cast<std::size_t>(b - L.first + q)];
            for (int co = 0; co < cout; ++co) dblk(co, q) = o < 0 ? T{0} : dy.data[co * dy.spatial() + o];
        }
        im2col_block(xp, cin, L, b, n, col);
        dw.noalias() += dblk * col.transpose();
        dcol.noalias() = w.transpose() * dblk;
        for (int c = 0; c < cin; ++c) {
            T* base = dxp.data() + c * L.padded_size() + b;
            for (int t = 0; t < kTaps; ++t) {
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> dst(base + L.taps[t], n);
                dst += dcol.row(c * kTaps + t);
            }
        }
    }
    Tensor<T> dx(cin, dy.dims);
    const auto W = dy.dims[0], H = dy.dims[1], D = dy.dims[2];
    for (int c = 0; c < cin; ++c)
        for (std::int64_t z = 0; z < D; ++z)
            for (std::int64_t y = 0; y < H; ++y)
                std::memcpy(dx.ptr(c) + (z * H + y) * W,
                            dxp.data() + c * L.padded_size() + ((z + 1) * L.hp + (y + 1)) * L.wp + 1, sizeof(T) * W);
    return dx;
}

// ---------------------------------------------------------------------------
// 1x1x1 convolution (per-voxel linear map), optional bias. weight: [cout][cin].
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv1_forward(const Tensor<T>& x, const T* weight, const T* bias, int cout) {
    Tensor<T> y(cout, x.dims);
    const auto n = static_cast<Eigen::Index>(x.spatial());
    ConstMatMap<T> w(weight, cout, x.channels);
    ConstMatMap<T> xm(x.data.data(), x.channels, n);
    MatMap<T> ym(y.data.data(), cout, n);
    ym.noalias() = w * xm;
    if (bias)
        for (int c = 0; c < cout; ++c) ym.row(c).array() += bias[c];
    return y;
}

/// Accumulates dweight/dbias; returns dx.
template <typename T>
Tensor<T> conv1_backward(const Tensor<T>& dy, const Tensor<T>& x, const T* weight, T* dweight, T* dbias) {
    const auto n = static_cast<Eigen::Index>(x.spatial());
    const int cout = dy.channels;
    ConstMatMap<T> w(weight, cout, x.channels);
    ConstMatMap<T> xm(x.data.data(), x.channels, n);
    ConstMatMap<T> dym(dy.data.data(), cout, n);
    MatMap<T> dw(dweight, cout, x.channels);
    dw.noalias() += dym * xm.transpose();
    if (dbias)
        for (int c = 0; c < cout; ++c) dbias[c] += dym.row(c).sum();
    Tensor<T> dx(x.channels, x.dims);
    MatMap<T> dxm(dx.data.data(), x.channels, n);
    dxm.noalias() = w.transpose() * dym;
    return dx;
}

// ---------------------------------------------------------------------------
// Instance normalisation with affine parameters, fused with ReLU.
// ---------------------------------------------------------------------------

template <typename T>
inline constexpr T kNormEps = T(1e-5);

template <typename T>
struct NormReluCache {
    std::vector<T> xhat;   ///< normalised pre-affine values
    std::vector<T> invstd; ///< per channel
    Tensor<T> out;         ///< post-ReLU output
};

template <typename T>
Tensor<T> norm_relu_forward(const Tensor<T>& x, const T* gamma, const T* beta, NormReluCache<T>* cache) {
    const std::size_t n = x.spatial();
    Tensor<T> y(x.channels, x.dims);
    std::vector<T> xhat(x.data.size()), invstd(static_cast<std::size_t>(x.channels));
    for (int c = 0; c < x.channels; ++c) {
        const T* xc = x.ptr(c);
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += static_cast<double>(xc[i]);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = static_cast<double>(xc[i]) - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(kNormEps<T>)));
        invstd[c] = is;
        T* xh = xhat.data() + c * n;
        T* yc = y.ptr(c);
        const T m = static_cast<T>(mean);
        for (std::size_t i = 0; i < n; ++i) {
            xh[i] = (xc[i] - m) * is;
            const T v = gamma[c] * xh[i] + beta[c];
            yc[i] = v > T{0} ? v : T{0};
        }
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->invstd = std::move(invstd);
        cache->out = y;
    }
    return y;
}

/// dout is the gradient w.r.t. the post-ReLU output. Accumulates dgamma/dbeta; returns dx.
template <typename T>
Tensor<T> norm_relu_backward(const Tensor<T>& dout, const NormReluCache<T>& cache, const T* gamma, T* dgamma,
                             T* dbeta) {
    const std::size_t n = dout.spatial();
    Tensor<T> dx(dout.channels, dout.dims);
    std::vector<T> dxh(n);
    for (int c = 0; c < dout.channels; ++c) {
        const T* dy = dout.ptr(c);
        const T* y = cache.out.ptr(c);
        const T* xh = cache.xhat.data() + c * n;
        double sum_dxh = 0.0, sum_dxh_xh = 0.0, dg = 0.0, db = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const T d = y[i] > T{0} ? dy[i] : T{0};
            dg += static_cast<double>(d) * static_cast<double>(xh[i]);
            db += static_cast<double>(d);
            dxh[i] = d * gamma[c];
            sum_dxh += static_cast<double>(dxh[i]);
            sum_dxh_xh += static_cast<double>(dxh[i]) * static_cast<double>(xh[i]);
        }
        dgamma[c] += static_cast<T>(dg);
        dbeta[c] += static_cast<T>(db);
        const T is = cache.invstd[c];
        const T inv_n = T(1) / static_cast<T>(n);
        const T s1 = static_cast<T>(sum_dxh), s2 = static_cast<T>(sum_dxh_xh);
        T* dxc = dx.ptr(c);
        for (std::size_t i = 0; i < n; ++i) dxc[i] = is * inv_n * (static_cast<T>(n) * dxh[i] - s1 - xh[i] * s2);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// 2x max pooling and 2x nearest upsampling.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> maxpool2_forward(const Tensor<T>& x, std::vector<std::uint32_t>* argmax) {
    for (int a = 0; a < 3; ++a)
        if (x.dims[a] % 2 != 0) throw InvalidArgument("maxpool2: spatial dims must be even");
    const Index3 od{x.dims[0] / 2, x.dims[1] / 2, x.dims[2] / 2};
    Tensor<T> y(x.channels, od);
    if (argmax) argmax->assign(y.data.size(), 0);
    const auto W = x.dims[0], H = x.dims[1];
    std::size_t o = 0;
    for (int c = 0; c < x.channels; ++c) {
        const T* xc = x.ptr(c);
        for (std::int64_t z = 0; z < od[2]; ++z)
            for (std::int64_t yy = 0; yy < od[1]; ++yy)
                for (std::int64_t xx = 0; xx < od[0]; ++xx, ++o) {
                    std::uint32_t best = 0;
                    T bv = T{0};
                    bool first = true;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const auto idx = ((2 * z + dz) * H + (2 * yy + dy)) * W + (2 * xx + dx);
                                if (first || xc[idx] > bv) {
                                    bv = xc[idx];
                                    best = static_cast<std::uint32_t>(idx);
                                    first = false;
                                }
                            }
                    y.data[o] = bv;
                    if (argmax) (*argmax)[o] = best;
                }
    }
    return y;
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& dy, const std::vector<std::uint32_t>& argmax, const Index3& in_dims) {
    Tensor<T> dx(dy.channels, in_dims);
    const std::size_t per = dy.spatial();
    for (int c = 0; c < dy.channels; ++c) {
        T* dxc = dx.ptr(c);
        for (std::size_t o = 0; o < per; ++o) dxc[argmax[c * per + o]] += dy.data[c * per + o];
    }
    return dx;
}

template <typename T>
Tensor<T> upsample2_forward(const Tensor<T>& x) {
    const Index3 od{x.dims[0] * 2, x.dims[1] * 2, x.dims[2] * 2};
    Tensor<T> y(x.channels, od);
    const auto W = x.dims[0], H = x.dims[1];
    for (int c = 0; c < x.channels; ++c) {
        const T* xc = x.ptr(c);
        T* yc = y.ptr(c);
        for (std::int64_t z = 0; z < od[2]; ++z)
            for (std::int64_t yy = 0; yy < od[1]; ++yy)
                for (std::int64_t xx = 0; xx < od[0]; ++xx)
                    yc[(z * od[1] + yy) * od[0] + xx] = xc[((z / 2) * H + yy / 2) * W + xx / 2];
    }
    return y;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& dy) {
    const Index3 id{dy.dims[0] / 2, dy.dims[1] / 2, dy.dims[2] / 2};
    Tensor<T> dx(dy.channels, id);
    for (int c = 0; c < dy.channels; ++c) {
        const T* dyc = dy.ptr(c);
        T* dxc = dx.ptr(c);
        for (std::int64_t z = 0; z < dy.dims[2]; ++z)
            for (std::int64_t yy = 0; yy < dy.dims[1]; ++yy)
                for (std::int64_t xx = 0; xx < dy.dims[0]; ++xx)
                    dxc[((z / 2) * id[1] + yy / 2) * id[0] + xx / 2] += dyc[(z * dy.dims[1] + yy) * dy.dims[0] + xx];
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Separable linear (trilinear) resampling by an integer factor of 1 or 2 per
// axis, half-pixel centres, edge clamped. Used to bring the gating signal onto
// the skip-connection grid; the backward pass is the exact adjoint.
// ---------------------------------------------------------------------------

namespace detail {

// out[o] = sum over taps; for factor 2: o=2k -> 0.75 in[k] + 0.25 in[k-1], o=2k+1 -> 0.75 in[k] + 0.25 in[k+1]
template <typename T, bool Adjoint>
void linear_up_axis(const T* in, T* out, std::int64_t n_in, std::int64_t stride,
                    std::int64_t outer_stride_in, std::int64_t outer_stride_out, std::int64_t outer) {
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t s = 0; s < stride; ++s) {
            const T* ip = in + o * outer_stride_in + s;
            T* op = out + o * outer_stride_out + s;
            for (std::int64_t k = 0; k < n_in; ++k) {
                const auto km = std::max<std::int64_t>(k - 1, 0);
                const auto kp = std::min<std::int64_t>(k + 1, n_in - 1);
                if constexpr (!Adjoint) {
                    op[(2 * k) * stride] = T(0.75) * ip[k * stride] + T(0.25) * ip[km * stride];
                    op[(2 * k + 1) * stride] = T(0.75) * ip[k * stride] + T(0.25) * ip[kp * stride];
                } else {
                    // here `ip` is the gradient on the fine grid and `op` the coarse accumulator
                    const T a = ip[(2 * k) * stride], b = ip[(2 * k + 1) * stride];
                    op[k * stride] += T(0.75) * (a + b);
                    op[km * stride] += T(0.25) * a;
                    op[kp * stride] += T(0.25) * b;
                }
            }
        }
}

} // namespace detail

/// Resample x onto `target` dims where each axis is equal or exactly double.
template <typename T>
Tensor<T> linear_upsample_forward(const Tensor<T>& x, const Index3& target) {
    Tensor<T> cur = x;
    for (int a = 0; a < 3; ++a) {
        if (target[a] == cur.dims[a]) continue;
        if (target[a] != 2 * cur.dims[a]) throw InvalidArgument("gating signal must be equal or 2x coarser per axis");
        Index3 nd = cur.dims;
        nd[a] *= 2;
        Tensor<T> next(cur.channels, nd);
        std::int64_t stride = 1;
        for (int b = 0; b < a; ++b) stride *= cur.dims[b];
        const std::int64_t outer = static_cast<std::int64_t>(cur.data.size()) / (stride * cur.dims[a]);
        detail::linear_up_axis<T, false>(cur.data.data(), next.data.data(), cur.dims[a], stride,
                                         stride * cur.dims[a], stride * nd[a], outer);
        cur = std::move(next);
    }
    return cur;
}

/// Adjoint of linear_upsample_forward: fine-grid gradient -> coarse-grid gradient.
template <typename T>
Tensor<T> linear_upsample_backward(const Tensor<T>& dy, const Index3& coarse) {
    Tensor<T> cur = dy;
    for (int a = 2; a >= 0; --a) {
        if (coarse[a] == cur.dims[a]) continue;
        Index3 nd = cur.dims;
        nd[a] = coarse[a];
        Tensor<T> next(cur.channels, nd);
        std::int64_t stride = 1;
        for (int b = 0; b < a; ++b) stride *= cur.dims[b];
        const std::int64_t outer = static_cast<std::int64_t>(next.data.size()) / (stride * nd[a]);
        detail::linear_up_axis<T, true>(cur.data.data(), next.data.data(), nd[a], stride, stride * cur.dims[a],
                                        stride * nd[a], outer);
        cur = std::move(next);
    }
    return cur;
}

// ---------------------------------------------------------------------------
// Channel concat / split, softmax.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.dims != b.dims) throw InvalidArgument("concat: spatial dims differ");
    Tensor<T> y(a.channels + b.channels, a.dims);
    std::copy(a.data.begin(), a.data.end(), y.data.begin());
    std::copy(b.data.begin(), b.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
    return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& y, int first) {
    Tensor<T> a(first, y.dims), b(y.channels - first, y.dims);
    std::copy(y.data.begin(), y.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()), a.data.begin());
    std::copy(y.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()), y.data.end(), b.data.begin());
    return {std::move(a), std::move(b)};
}

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
    Tensor<T> p(logits.channels, logits.dims);
    const std::size_t n = logits.spatial();
    const int K = logits.channels;
    for (std::size_t i = 0; i < n; ++i) {
        T m = logits.data[i];
        for (int k = 1; k < K; ++k) m = std::max(m, logits.data[k * n + i]);
        T s = 0;
        for (int k = 0; k < K; ++k) {
            const T e = std::exp(logits.data[k * n + i] - m);
            p.data[k * n + i] = e;
            s += e;
        }
        for (int k = 0; k < K; ++k) p.data[k * n + i] /= s;
    }
    return p;
}

/// Gradient w.r.t. logits given probabilities and the gradient w.r.t. probabilities.
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& probs, const Tensor<T>& dprobs) {
    Tensor<T> dl(probs.channels, probs.dims);
    const std::size_t n = probs.spatial();
    const int K = probs.channels;
    for (std::size_t i = 0; i < n; ++i) {
        T dot = 0;
        for (int k = 0; k < K; ++k) dot += probs.data[k * n + i] * dprobs.data[k * n + i];
        for (int k = 0; k < K; ++k) dl.data[k * n + i] = probs.data[k * n + i] * (dprobs.data[k * n + i] - dot);
    }
    return dl;
}

template <typename T>
T sigmoid(T v) {
    return v >= T{0} ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

} // namespace vesselseg::nn
