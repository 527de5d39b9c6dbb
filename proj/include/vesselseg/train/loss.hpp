#pragma once

// Soft Dice over foreground classes (background channel excluded):
//   D_c  = (2 sum p_c g_c + eps) / (sum p_c + sum g_c + eps)
//   loss = 1 - mean_{c >= 1} D_c

#include <cstdint>
#include <span>
#include <vector>

#include "vesselseg/nn/tensor.hpp"

namespace vesselseg {

inline constexpr double kDiceEpsilon = 1e-5;

template <typename T>
nn::Tensor<T> one_hot(std::span<const std::uint8_t> labels, int num_classes, const Index3& dims) {
    nn::Tensor<T> t(num_classes, dims);
    if (labels.size() != t.spatial()) throw InvalidArgument("one_hot: label count does not match dims");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes) throw InvalidArgument("one_hot: label outside class range");
        t.data[labels[i] * t.spatial() + i] = T(1);
    }
    return t;
}

/// Loss value; when `dpred` is non-null it receives d(loss)/d(pred).
template <typename T>
T soft_dice_loss(const nn::Tensor<T>& pred, const nn::Tensor<T>& gt, double epsilon = kDiceEpsilon,
                 nn::Tensor<T>* dpred = nullptr) {
    nn::require_same_shape(pred, gt, "soft_dice_loss");
    if (pred.channels < 2) throw InvalidArgument("soft_dice_loss: need background plus >= 1 foreground channel");
    const std::size_t n = pred.spatial();
    const int fg = pred.channels - 1;
    if (dpred) *dpred = nn::Tensor<T>(pred.channels, pred.dims);
    T total = 0;
    for (int c = 1; c < pred.channels; ++c) {
        const T* p = pred.ptr(c);
        const T* g = gt.ptr(c);
        T spg = 0, sp = 0, sg = 0;
        for (std::size_t i = 0; i < n; ++i) {
            spg += p[i] * g[i];
            sp += p[i];
            sg += g[i];
        }
        const T eps = static_cast<T>(epsilon);
        const T num = T(2) * spg + eps;
        const T den = sp + sg + eps;
        total += num / den;
        if (dpred) {
            T* d = dpred->ptr(c);
            const T scale = T(-1) / (static_cast<T>(fg) * den * den);
            for (std::size_t i = 0; i < n; ++i) d[i] = scale * (T(2) * g[i] * den - num);
        }
    }
    return T(1) - total / static_cast<T>(fg);
}

} // namespace vesselseg
