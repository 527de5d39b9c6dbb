#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "vesselseg/core/errors.hpp"

namespace vesselseg {

/// Adam with decoupled weight decay:
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps) - weight_decay * p
/// The decay term is not multiplied by the learning rate.
template <typename T>
class AdamW {
public:
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-6;

    AdamW() = default;
    AdamW(std::size_t n, double wd) : weight_decay(wd), m_(n, 0.0), v_(n, 0.0) {}

    std::int64_t steps() const { return t_; }

    void step(std::vector<T>& params, const std::vector<T>& grad, double lr) {
        if (params.size() != grad.size()) throw InvalidArgument("optimizer: gradient size mismatch");
        if (m_.size() != params.size()) {
            m_.assign(params.size(), 0.0);
            v_.assign(params.size(), 0.0);
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        const bool no_update = lr == 0.0;
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = static_cast<double>(grad[i]);
            m_[i] = beta1 * m_[i] + (1.0 - beta1) * g;
            v_[i] = beta2 * v_[i] + (1.0 - beta2) * g * g;
            if (no_update && weight_decay == 0.0) continue;
            double p = static_cast<double>(params[i]);
            const double decay = weight_decay * p;
            if (!no_update) p -= lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps);
            p -= decay;
            params[i] = static_cast<T>(p);
        }
    }

private:
    std::vector<double> m_, v_;
    std::int64_t t_ = 0;
};

/// Constant rate, or half-cosine from lr at epoch 0 to 0 at the last epoch.
inline double scheduled_lr(double lr, int epoch, int epochs, bool cosine) {
    if (!cosine || epochs <= 1) return lr;
    return 0.5 * lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(epochs - 1)));
}

} // namespace vesselseg
