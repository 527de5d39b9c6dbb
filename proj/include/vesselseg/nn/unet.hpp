#pragma once

// Plain and attention-gated 3D U-Nets.
//
// Level l has base_channels * 2^l feature channels. Encoder level l: two
// (3x3x3 conv -> instance norm -> ReLU) units, then 2x max pooling into level
// l+1. The deepest level is the bottleneck. Decoder level l: the level-(l+1)
// output is nearest-upsampled 2x and concatenated after the level-l skip
// features (which pass through an attention gate driven by that same
// level-(l+1) output when attention is on), then two conv units. A 1x1x1
// convolution with bias maps level-0 features to class logits; softmax
// gives per-voxel class probabilities.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "vesselseg/nn/attention.hpp"
#include "vesselseg/nn/ops.hpp"
#include "vesselseg/rng.hpp"

namespace vesselseg::nn {

enum class NormKind { kInstance, kBatch };

struct UNetSpec {
    int in_channels = 1;
    int num_classes = 3;
    int depth = 2;
    int base_channels = 8;
    bool attention = true;
    NormKind norm = NormKind::kInstance;
    AlphaMode alpha_mode = AlphaMode::kClassAveraged;

    int channels(int level) const { return base_channels << level; }
    int gate_inter(int level) const { return std::max(1, channels(level) / 2); }
    int gate_coeffs(int level) const {
        return alpha_mode == AlphaMode::kPerChannel ? channels(level) : std::max(1, num_classes - 1);
    }
    /// Spatial dims must be divisible by this.
    std::int64_t divisor() const { return std::int64_t{1} << (depth - 1); }

    void validate() const {
        if (depth < 2) throw InvalidSpec("unet depth must be >= 2");
        if (depth > 8) throw InvalidSpec("unet depth must be <= 8");
        if (base_channels < 1) throw InvalidSpec("unet base_channels must be >= 1");
        if (num_classes < 2) throw InvalidSpec("unet num_classes must be >= 2");
        if (in_channels < 1) throw InvalidSpec("unet in_channels must be >= 1");
        if (norm != NormKind::kInstance)
            throw InvalidSpec("unet: only instance normalisation is supported (training uses per-volume statistics)");
    }

    std::string canonical() const {
        return "unet3d;in=" + std::to_string(in_channels) + ";classes=" + std::to_string(num_classes) +
               ";depth=" + std::to_string(depth) + ";base=" + std::to_string(base_channels) +
               ";attention=" + (attention ? "1" : "0") + ";norm=instance;alpha=" +
               (alpha_mode == AlphaMode::kPerChannel ? "per-channel" : "class-averaged");
    }

    std::uint64_t hash() const { return fnv1a64(canonical()); }

    friend bool operator==(const UNetSpec&, const UNetSpec&) = default;
};

struct ParamEntry {
    std::string name;
    std::vector<std::int64_t> shape;
    std::size_t offset = 0;
    std::size_t size = 0;

    friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

/// Ordered named parameter tensors for one UNetSpec.
inline std::vector<ParamEntry> param_layout(const UNetSpec& spec) {
    spec.validate();
    std::vector<ParamEntry> out;
    std::size_t offset = 0;
    auto add = [&](std::string name, std::vector<std::int64_t> shape) {
        std::size_t n = 1;
        for (auto s : shape) n *= static_cast<std::size_t>(s);
        out.push_back({std::move(name), std::move(shape), offset, n});
        offset += n;
    };
    auto block = [&](const std::string& prefix, int cin, int cout) {
        add(prefix + ".conv1.weight", {cout, cin, 3, 3, 3});
        add(prefix + ".norm1.gamma", {cout});
        add(prefix + ".norm1.beta", {cout});
        add(prefix + ".conv2.weight", {cout, cout, 3, 3, 3});
        add(prefix + ".norm2.gamma", {cout});
        add(prefix + ".norm2.beta", {cout});
    };
    for (int l = 0; l < spec.depth; ++l)
        block("enc" + std::to_string(l), l == 0 ? spec.in_channels : spec.channels(l - 1), spec.channels(l));
    for (int l = spec.depth - 2; l >= 0; --l) {
        if (spec.attention) {
            const std::string g = "gate" + std::to_string(l);
            const int fi = spec.gate_inter(l), a = spec.gate_coeffs(l);
            add(g + ".wx", {fi, spec.channels(l)});
            add(g + ".wg", {fi, spec.channels(l + 1)});
            add(g + ".bg", {fi});
            add(g + ".psi", {a, fi});
            add(g + ".bpsi", {a});
        }
        block("dec" + std::to_string(l), spec.channels(l) + spec.channels(l + 1), spec.channels(l));
    }
    add("head.weight", {spec.num_classes, spec.channels(0)});
    add("head.bias", {spec.num_classes});
    return out;
}

template <typename T>
struct ModelParams {
    UNetSpec spec;
    std::vector<ParamEntry> entries;
    std::vector<T> values;
    std::int64_t epoch = 0;

    const ParamEntry& entry(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return e;
        throw InvalidArgument("unknown parameter tensor: " + name);
    }
    bool has(const std::string& name) const {
        return std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.name == name; });
    }
    std::span<T> tensor(const std::string& name) {
        const auto& e = entry(name);
        return {values.data() + e.offset, e.size};
    }
    std::span<const T> tensor(const std::string& name) const {
        const auto& e = entry(name);
        return {values.data() + e.offset, e.size};
    }
    std::size_t count() const { return values.size(); }

    template <typename U>
    ModelParams<U> cast() const {
        ModelParams<U> out;
        out.spec = spec;
        out.entries = entries;
        out.epoch = epoch;
        out.values.assign(values.begin(), values.end());
        return out;
    }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Deterministic initialisation: He-normal convolutions, unit/zero norms,
/// fan-in scaled gates and head, zero biases.
template <typename T = float>
ModelParams<T> build_unet(const UNetSpec& spec, std::uint64_t init_seed) {
    ModelParams<T> p;
    p.spec = spec;
    p.entries = param_layout(spec);
    p.values.assign(p.entries.empty() ? 0 : p.entries.back().offset + p.entries.back().size, T{0});
    Rng rng(stream_seed(init_seed, "init"));
    std::normal_distribution<double> normal(0.0, 1.0);
    auto ends_with = [](const std::string& s, const std::string& suffix) {
        return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    for (const auto& e : p.entries) {
        T* v = p.values.data() + e.offset;
        if (ends_with(e.name, ".gamma")) {
            std::fill(v, v + e.size, T(1));
            continue;
        }
        if (ends_with(e.name, ".beta") || ends_with(e.name, ".bg") || ends_with(e.name, ".bpsi") ||
            ends_with(e.name, ".bias"))
            continue;
        double fan_in = 1.0;
        for (std::size_t d = 1; d < e.shape.size(); ++d) fan_in *= static_cast<double>(e.shape[d]);
        const double std = ends_with(e.name, ".weight") && e.shape.size() == 5 ? std::sqrt(2.0 / fan_in)
                                                                                : std::sqrt(1.0 / fan_in);
        for (std::size_t i = 0; i < e.size; ++i) v[i] = static_cast<T>(std * normal(rng));
    }
    return p;
}

/// Parameter count without building the layout (closed form).
inline std::size_t unet_parameter_count(const UNetSpec& s) {
    std::size_t total = 0;
    auto block = [&](std::size_t cin, std::size_t c) { total += 27 * cin * c + 2 * c + 27 * c * c + 2 * c; };
    for (int l = 0; l < s.depth; ++l)
        block(static_cast<std::size_t>(l == 0 ? s.in_channels : s.channels(l - 1)), static_cast<std::size_t>(s.channels(l)));
    for (int l = 0; l + 1 < s.depth; ++l) {
        block(static_cast<std::size_t>(s.channels(l) + s.channels(l + 1)), static_cast<std::size_t>(s.channels(l)));
        if (s.attention) {
            const std::size_t fi = static_cast<std::size_t>(s.gate_inter(l)), a = static_cast<std::size_t>(s.gate_coeffs(l));
            total += fi * static_cast<std::size_t>(s.channels(l)) + fi * static_cast<std::size_t>(s.channels(l + 1)) + fi +
                     a * fi + a;
        }
    }
    total += static_cast<std::size_t>(s.channels(0) * s.num_classes + s.num_classes);
    return total;
}

struct ForwardOptions {
    bool force_alpha_one = false;
};

template <typename T>
struct BlockCache {
    int in_channels = 0;
    std::vector<T> padded1, padded2;
    NormReluCache<T> norm1, norm2;
};

template <typename T>
struct UNetCache {
    std::vector<BlockCache<T>> enc, dec; ///< dec indexed by level
    std::vector<std::vector<std::uint32_t>> pool_argmax; ///< [l] pools enc l output into level l+1
    std::vector<GateCache<T>> gates;                     ///< indexed by level
    Tensor<T> head_in;
    Tensor<T> probs;
    std::vector<Tensor<T>> alphas; ///< per gated level
};

/// Forward/backward evaluator for one UNetSpec. Stateless apart from the
/// precomputed parameter offsets; safe to share across threads.
template <typename T>
class UNet {
public:
    explicit UNet(const UNetSpec& spec) : spec_(spec) {
        spec_.validate();
        for (const auto& e : param_layout(spec_)) offsets_[e.name] = e.offset;
    }

    const UNetSpec& spec() const { return spec_; }

    /// Class probabilities, num_classes x input dims.
    Tensor<T> forward(const ModelParams<T>& p, const Tensor<T>& input, UNetCache<T>* cache = nullptr,
                      const ForwardOptions& opt = {}) const {
        check_params(p);
        if (input.channels != spec_.in_channels) throw InvalidArgument("unet_forward: wrong input channel count");
        for (int a = 0; a < 3; ++a)
            if (input.dims[a] % spec_.divisor() != 0)
                throw InvalidArgument("unet_forward: spatial dims must be divisible by 2^(depth-1)");
        const int D = spec_.depth;
        UNetCache<T> local;
        UNetCache<T>& c = cache ? *cache : local;
        c.enc.assign(D, {});
        c.dec.assign(D, {});
        c.pool_argmax.assign(D, {});
        c.gates.assign(D, {});
        c.alphas.clear();

        std::vector<Tensor<T>> enc_out(D);
        Tensor<T> x = input;
        for (int l = 0; l < D; ++l) {
            if (l > 0) x = maxpool2_forward(enc_out[l - 1], &c.pool_argmax[l - 1]);
            enc_out[l] = block_forward(p, "enc" + std::to_string(l), x, spec_.channels(l), c.enc[l]);
        }
        Tensor<T> cur = std::move(enc_out[D - 1]);
        for (int l = D - 2; l >= 0; --l) {
            Tensor<T> skip = std::move(enc_out[l]);
            if (spec_.attention) {
                auto r = attention_gate_forward(skip, cur, gate_view(p, l), &c.gates[l], opt.force_alpha_one);
                skip = std::move(r.gated);
                c.alphas.push_back(std::move(r.alpha));
            }
            Tensor<T> cat = concat_channels(skip, upsample2_forward(cur));
            cur = block_forward(p, "dec" + std::to_string(l), cat, spec_.channels(l), c.dec[l]);
        }
        Tensor<T> logits = conv1_forward(cur, ptr(p, "head.weight"), ptr(p, "head.bias"), spec_.num_classes);
        Tensor<T> probs = softmax_channels(logits);
        if (cache) {
            c.head_in = std::move(cur);
            c.probs = probs;
        }
        return probs;
    }

    /// Accumulates d(loss)/d(params) into `grad` (same layout as p.values).
    void backward(const ModelParams<T>& p, const UNetCache<T>& c, const Tensor<T>& dprobs, std::vector<T>& grad) const {
        check_params(p);
        if (grad.size() != p.values.size()) grad.assign(p.values.size(), T{0});
        const int D = spec_.depth;
        Tensor<T> dlogits = softmax_backward(c.probs, dprobs);
        Tensor<T> dcur = conv1_backward(dlogits, c.head_in, ptr(p, "head.weight"), gptr(grad, "head.weight"),
                                        gptr(grad, "head.bias"));
        std::vector<Tensor<T>> denc(D);
        for (int l = 0; l <= D - 2; ++l) {
            Tensor<T> dcat = block_backward(p, "dec" + std::to_string(l), dcur, c.dec[l], grad);
            auto [dskip, dup] = split_channels(dcat, spec_.channels(l));
            Tensor<T> dg = upsample2_backward(dup);
            if (spec_.attention) {
                auto [dx, dg_gate] = attention_gate_backward(dskip, c.gates[l], gate_view(p, l), gate_grad(grad, l));
                for (std::size_t i = 0; i < dg.data.size(); ++i) dg.data[i] += dg_gate.data[i];
                dskip = std::move(dx);
            }
            denc[l] = std::move(dskip);
            dcur = std::move(dg);
        }
        denc[D - 1] = std::move(dcur);
        for (int l = D - 1; l >= 0; --l) {
            Tensor<T> dx = block_backward(p, "enc" + std::to_string(l), denc[l], c.enc[l], grad);
            if (l > 0) {
                const Tensor<T>& prev = c.enc[l - 1].norm2.out;
                Tensor<T> dprev = maxpool2_backward(dx, c.pool_argmax[l - 1], prev.dims);
                for (std::size_t i = 0; i < dprev.data.size(); ++i) denc[l - 1].data[i] += dprev.data[i];
            }
        }
    }

private:
    UNetSpec spec_;
    std::unordered_map<std::string, std::size_t> offsets_;

    void check_params(const ModelParams<T>& p) const {
        if (!(p.spec == spec_)) throw InvalidArgument("model parameters were built for a different UNetSpec");
    }
    const T* ptr(const ModelParams<T>& p, const std::string& name) const { return p.values.data() + offsets_.at(name); }
    T* gptr(std::vector<T>& g, const std::string& name) const { return g.data() + offsets_.at(name); }

    GateParamsView<T> gate_view(const ModelParams<T>& p, int l) const {
        const std::string g = "gate" + std::to_string(l);
        return {spec_.channels(l), spec_.channels(l + 1), spec_.gate_inter(l), spec_.gate_coeffs(l), spec_.alpha_mode,
                ptr(p, g + ".wx"), ptr(p, g + ".wg"), ptr(p, g + ".bg"), ptr(p, g + ".psi"), ptr(p, g + ".bpsi")};
    }
    GateGradView<T> gate_grad(std::vector<T>& grad, int l) const {
        const std::string g = "gate" + std::to_string(l);
        return {gptr(grad, g + ".wx"), gptr(grad, g + ".wg"), gptr(grad, g + ".bg"), gptr(grad, g + ".psi"),
                gptr(grad, g + ".bpsi")};
    }

    Tensor<T> block_forward(const ModelParams<T>& p, const std::string& prefix, const Tensor<T>& x, int cout,
                            BlockCache<T>& bc) const {
        bc.in_channels = x.channels;
        Tensor<T> h = conv3_forward(x, ptr(p, prefix + ".conv1.weight"), cout, &bc.padded1);
        h = norm_relu_forward(h, ptr(p, prefix + ".norm1.gamma"), ptr(p, prefix + ".norm1.beta"), &bc.norm1);
        h = conv3_forward(h, ptr(p, prefix + ".conv2.weight"), cout, &bc.padded2);
        return norm_relu_forward(h, ptr(p, prefix + ".norm2.gamma"), ptr(p, prefix + ".norm2.beta"), &bc.norm2);
    }

    Tensor<T> block_backward(const ModelParams<T>& p, const std::string& prefix, const Tensor<T>& dout,
                             const BlockCache<T>& bc, std::vector<T>& grad) const {
        Tensor<T> d = norm_relu_backward(dout, bc.norm2, ptr(p, prefix + ".norm2.gamma"),
                                         gptr(grad, prefix + ".norm2.gamma"), gptr(grad, prefix + ".norm2.beta"));
        d = conv3_backward(d, bc.padded2, dout.channels, ptr(p, prefix + ".conv2.weight"),
                           gptr(grad, prefix + ".conv2.weight"));
        d = norm_relu_backward(d, bc.norm1, ptr(p, prefix + ".norm1.gamma"), gptr(grad, prefix + ".norm1.gamma"),
                               gptr(grad, prefix + ".norm1.beta"));
        return conv3_backward(d, bc.padded1, bc.in_channels, ptr(p, prefix + ".conv1.weight"),
                              gptr(grad, prefix + ".conv1.weight"));
    }
};

/// Clamp to [lo, hi] HU and rescale to [0, 1].
inline Tensor<float> normalize_input(const Volume3D& vol, double lo = -200.0, double hi = 500.0) {
    if (!(lo < hi)) throw InvalidArgument("normalize_input: window lo must be < hi");
    Tensor<float> t(1, vol.grid.dims);
    const double scale = 1.0 / (hi - lo);
    for (std::size_t i = 0; i < vol.data.size(); ++i) {
        const double v = std::clamp(static_cast<double>(vol.data[i]), lo, hi);
        t.data[i] = static_cast<float>((v - lo) * scale);
    }
    return t;
}

/// Symmetric zero padding up to the next multiple of `divisor` per axis.
struct PadPlan {
    Index3 before{0, 0, 0};
    Index3 padded{0, 0, 0};
};

inline PadPlan plan_padding(const Index3& dims, std::int64_t divisor) {
    PadPlan p;
    for (int a = 0; a < 3; ++a) {
        const auto target = (dims[a] + divisor - 1) / divisor * divisor;
        p.before[a] = (target - dims[a]) / 2;
        p.padded[a] = target;
    }
    return p;
}

template <typename T>
Tensor<T> pad_tensor(const Tensor<T>& x, const PadPlan& plan, T value) {
    Tensor<T> y(x.channels, plan.padded, value);
    for (int c = 0; c < x.channels; ++c)
        for (std::int64_t z = 0; z < x.dims[2]; ++z)
            for (std::int64_t yy = 0; yy < x.dims[1]; ++yy)
                for (std::int64_t xx = 0; xx < x.dims[0]; ++xx)
                    y.data[c * y.spatial() +
                           static_cast<std::size_t>(((z + plan.before[2]) * plan.padded[1] + yy + plan.before[1]) *
                                                        plan.padded[0] +
                                                    xx + plan.before[0])] =
                        x.data[c * x.spatial() + static_cast<std::size_t>((z * x.dims[1] + yy) * x.dims[0] + xx)];
    return y;
}

template <typename T>
Tensor<T> unpad_tensor(const Tensor<T>& y, const PadPlan& plan, const Index3& dims) {
    Tensor<T> x(y.channels, dims);
    for (int c = 0; c < y.channels; ++c)
        for (std::int64_t z = 0; z < dims[2]; ++z)
            for (std::int64_t yy = 0; yy < dims[1]; ++yy)
                for (std::int64_t xx = 0; xx < dims[0]; ++xx)
                    x.data[c * x.spatial() + static_cast<std::size_t>((z * dims[1] + yy) * dims[0] + xx)] =
                        y.data[c * y.spatial() +
                               static_cast<std::size_t>(((z + plan.before[2]) * plan.padded[1] + yy + plan.before[1]) *
                                                            plan.padded[0] +
                                                        xx + plan.before[0])];
    return x;
}

/// Forward pass on arbitrary dims: pad with `background` to a valid size, run, crop back.
template <typename T>
Tensor<T> predict_probabilities(const UNet<T>& net, const ModelParams<T>& p, const Tensor<T>& input,
                                T background = T{0}) {
    const auto plan = plan_padding(input.dims, net.spec().divisor());
    if (plan.padded == input.dims) return net.forward(p, input);
    return unpad_tensor(net.forward(p, pad_tensor(input, plan, background)), plan, input.dims);
}

/// Per-voxel argmax over classes (lowest class index wins ties).
template <typename T>
std::vector<std::uint8_t> argmax_labels(const Tensor<T>& probs) {
    const std::size_t n = probs.spatial();
    std::vector<std::uint8_t> out(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        int best = 0;
        T bv = probs.data[i];
        for (int k = 1; k < probs.channels; ++k)
            if (probs.data[k * n + i] > bv) {
                bv = probs.data[k * n + i];
                best = k;
            }
        out[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

} // namespace vesselseg::nn
