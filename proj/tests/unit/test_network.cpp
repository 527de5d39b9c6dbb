#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "test_util.hpp"
#include "vesselseg/nn/checkpoint.hpp"
#include "vesselseg/nn/unet.hpp"
#include "vesselseg/train/loss.hpp"

using namespace vesselseg;
using namespace vesselseg::nn;
using namespace vstest;

namespace {

template <typename T>
Tensor<T> random_input(Rng& rng, const Index3& dims, int channels = 1) {
    Tensor<T> t(channels, dims);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : t.data) v = static_cast<T>(u(rng));
    return t;
}

template <typename T>
void randomize(ModelParams<T>& p, Rng& rng, double scale) {
    std::normal_distribution<double> n(0.0, scale);
    for (auto& v : p.values) v = static_cast<T>(n(rng));
}

double sigmoid_d(double v) { return 1.0 / (1.0 + std::exp(-v)); }

} // namespace

// ---------------------------------------------------------------- construction

TEST(BuildUnet, ParameterCountMatchesHandCount) {
    UNetSpec s; // depth 2, base 8, 3 classes, attention
    // enc0: 27*1*8 + 8+8 + 27*8*8 + 8+8                  = 1976
    // enc1: 27*8*16 + 16+16 + 27*16*16 + 16+16           = 10432
    // dec0: 27*24*8 + 8+8 + 27*8*8 + 8+8                 = 6944
    // gate0 (F_int 4, 2 coefficients): 4*8 + 4*16 + 4 + 2*4 + 2 = 110
    // head: 8*3 + 3                                      = 27
    EXPECT_EQ(unet_parameter_count(s), 19489u);
    EXPECT_EQ(build_unet<float>(s, 1).count(), 19489u);
    s.attention = false;
    EXPECT_EQ(unet_parameter_count(s), 19489u - 110u);
    EXPECT_EQ(build_unet<float>(s, 1).count(), 19379u);
}

TEST(BuildUnet, ClosedFormAgreesWithLayoutAcrossSpecs) {
    for (int depth : {2, 3, 4})
        for (int base : {1, 4, 16})
            for (int classes : {2, 3})
                for (bool att : {false, true})
                    for (auto mode : {AlphaMode::kClassAveraged, AlphaMode::kPerChannel}) {
                        UNetSpec s;
                        s.depth = depth;
                        s.base_channels = base;
                        s.num_classes = classes;
                        s.attention = att;
                        s.alpha_mode = mode;
                        const auto layout = param_layout(s);
                        EXPECT_EQ(layout.back().offset + layout.back().size, unet_parameter_count(s));
                    }
}

TEST(BuildUnet, SeedDeterminism) {
    const UNetSpec s;
    EXPECT_EQ(build_unet<float>(s, 4), build_unet<float>(s, 4));
    EXPECT_NE(build_unet<float>(s, 4).values, build_unet<float>(s, 5).values);
}

TEST(BuildUnet, PlainNetHasNoGates) {
    UNetSpec s;
    s.attention = false;
    for (const auto& e : build_unet<float>(s, 0).entries) EXPECT_EQ(e.name.find("gate"), std::string::npos);
    s.attention = true;
    EXPECT_TRUE(build_unet<float>(s, 0).has("gate0.psi"));
}

TEST(BuildUnet, InvalidSpecsThrow) {
    UNetSpec s;
    s.depth = 1;
    EXPECT_THROW(build_unet<float>(s, 0), InvalidSpec);
    s = {};
    s.base_channels = 0;
    EXPECT_THROW(build_unet<float>(s, 0), InvalidSpec);
    s = {};
    s.num_classes = 1;
    EXPECT_THROW(build_unet<float>(s, 0), InvalidSpec);
    s = {};
    s.norm = NormKind::kBatch;
    EXPECT_THROW(build_unet<float>(s, 0), InvalidSpec);
}

// ---------------------------------------------------------------- attention gate

namespace {

struct OwnedGate {
    int f_l, f_g, f_int, a;
    std::vector<double> wx, wg, bg, psi, bpsi;
    AlphaMode mode = AlphaMode::kClassAveraged;

    OwnedGate(int fl, int fg, int fi, int na, Rng& rng, double scale)
        : f_l(fl), f_g(fg), f_int(fi), a(na), wx(fi * fl), wg(fi * fg), bg(fi), psi(na * fi), bpsi(na) {
        std::normal_distribution<double> n(0.0, scale);
        for (auto* v : {&wx, &wg, &bg, &psi, &bpsi})
            for (auto& x : *v) x = n(rng);
    }
    GateParamsView<double> view() const {
        return {f_l, f_g, f_int, a, mode, wx.data(), wg.data(), bg.data(), psi.data(), bpsi.data()};
    }
};

} // namespace

TEST(AttentionGate, AlphaWithinUnitIntervalOverRandomParameters) {
    Rng rng(1);
    for (int trial = 0; trial < 1000; ++trial) {
        OwnedGate g(3, 5, 2, 2, rng, trial % 2 ? 10.0 : 1.0);
        if (trial % 3 == 0) g.mode = AlphaMode::kPerChannel, g.a = 3, g.psi.resize(6), g.bpsi.resize(3);
        const auto x = random_input<double>(rng, {4, 4, 2}, 3);
        const auto gs = random_input<double>(rng, {2, 2, 1}, 5);
        const auto r = attention_gate_forward(x, gs, g.view(), nullptr);
        for (double a : r.alpha.data) {
            ASSERT_GE(a, 0.0);
            ASSERT_LE(a, 1.0);
        }
    }
}

TEST(AttentionGate, SaturatedBiasPassesThroughOrZeroes) {
    Rng rng(2);
    OwnedGate g(2, 4, 3, 2, rng, 1.0);
    std::fill(g.psi.begin(), g.psi.end(), 0.0);
    const auto x = random_input<double>(rng, {4, 4, 4}, 2);
    const auto gs = random_input<double>(rng, {2, 2, 2}, 4);
    std::fill(g.bpsi.begin(), g.bpsi.end(), 20.0);
    auto r = attention_gate_forward(x, gs, g.view(), nullptr);
    for (double a : r.alpha.data) EXPECT_LE(1.0 - a, 1e-8);
    for (std::size_t i = 0; i < x.data.size(); ++i) EXPECT_NEAR(r.gated.data[i], x.data[i], 1e-8);
    std::fill(g.bpsi.begin(), g.bpsi.end(), -20.0);
    r = attention_gate_forward(x, gs, g.view(), nullptr);
    for (double a : r.alpha.data) EXPECT_LE(a, 1e-8);
    for (double v : r.gated.data) EXPECT_LE(std::abs(v), 1e-8);
}

TEST(AttentionGate, TwoCubedMatchesScalarOracle) {
    const double wx = 0.7, wg = -1.3, bg = 0.25, psi = 1.9, bpsi = -0.4;
    std::vector<double> wxv{wx}, wgv{wg}, bgv{bg}, psiv{psi}, bpsiv{bpsi};
    GateParamsView<double> v{1, 1, 1, 1, AlphaMode::kClassAveraged, wxv.data(), wgv.data(), bgv.data(), psiv.data(),
                             bpsiv.data()};
    Tensor<double> x(1, {2, 2, 2}), g(1, {2, 2, 2});
    for (int i = 0; i < 8; ++i) {
        x.data[i] = 0.1 * i - 0.3;
        g.data[i] = 0.05 * (7 - i) * (i % 2 ? 1 : -1);
    }
    const auto r = attention_gate_forward(x, g, v, nullptr);
    for (int i = 0; i < 8; ++i) {
        const double pre = wx * x.data[i] + wg * g.data[i] + bg;
        const double alpha = sigmoid_d(psi * std::max(pre, 0.0) + bpsi);
        EXPECT_NEAR(r.alpha.data[i], alpha, 1e-12);
        EXPECT_NEAR(r.gated.data[i], alpha * x.data[i], 1e-12);
    }
    // a 1x1x1 gating signal is broadcast over the finer grid
    Tensor<double> g1(1, {1, 1, 1}, 0.8);
    const auto r1 = attention_gate_forward(x, g1, v, nullptr);
    for (int i = 0; i < 8; ++i) {
        const double alpha = sigmoid_d(psi * std::max(wx * x.data[i] + wg * 0.8 + bg, 0.0) + bpsi);
        EXPECT_NEAR(r1.alpha.data[i], alpha, 1e-12);
    }
}

TEST(AttentionGate, ShapeMismatchThrows) {
    Rng rng(3);
    OwnedGate g(2, 4, 3, 2, rng, 1.0);
    EXPECT_THROW(attention_gate_forward(Tensor<double>(3, {2, 2, 2}), Tensor<double>(4, {1, 1, 1}), g.view(), nullptr),
                 InvalidArgument);
    EXPECT_THROW(attention_gate_forward(Tensor<double>(2, {2, 2, 2}), Tensor<double>(4, {4, 4, 4}), g.view(), nullptr),
                 InvalidArgument);
}

// ---------------------------------------------------------------- forward

TEST(UnetForward, ProbabilitiesSumToOne) {
    Rng rng(4);
    UNetSpec s;
    auto p = build_unet<float>(s, 3);
    const UNet<float> net(s);
    const auto probs = net.forward(p, random_input<float>(rng, {8, 8, 8}));
    const std::size_t n = probs.spatial();
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (int c = 0; c < 3; ++c) sum += probs.data[c * n + i];
        ASSERT_NEAR(sum, 1.0, 1e-6);
    }
}

TEST(UnetForward, DepthThreeShapeContract) {
    Rng rng(5);
    UNetSpec s;
    s.depth = 3;
    const auto p = build_unet<float>(s, 1);
    const auto probs = UNet<float>(s).forward(p, random_input<float>(rng, {32, 32, 32}));
    EXPECT_EQ(probs.channels, 3);
    EXPECT_EQ(probs.dims, (Index3{32, 32, 32}));
}

TEST(UnetForward, IndivisibleDimsThrowUnlessPadded) {
    Rng rng(6);
    UNetSpec s;
    s.depth = 3;
    const auto p = build_unet<float>(s, 1);
    const UNet<float> net(s);
    const auto x = random_input<float>(rng, {10, 9, 7});
    EXPECT_THROW(net.forward(p, x), InvalidArgument);
    const auto probs = predict_probabilities(net, p, x);
    EXPECT_EQ(probs.dims, x.dims);
}

TEST(UnetForward, Deterministic) {
    Rng rng(7);
    const UNetSpec s;
    const auto p = build_unet<float>(s, 9);
    const auto x = random_input<float>(rng, {8, 8, 4});
    EXPECT_EQ(UNet<float>(s).forward(p, x), UNet<float>(s).forward(p, x));
}

TEST(UnetForward, HeadPermutationPermutesClasses) {
    Rng rng(8);
    const UNetSpec s;
    auto p = build_unet<double>(s, 2);
    randomize(p, rng, 0.3);
    const auto x = random_input<double>(rng, {8, 8, 8});
    const UNet<double> net(s);
    const auto base = net.forward(p, x);
    const int perm[3] = {2, 0, 1}; // new channel c takes old channel perm[c]
    auto q = p;
    const auto w = p.tensor("head.weight");
    const auto b = p.tensor("head.bias");
    auto qw = q.tensor("head.weight");
    auto qb = q.tensor("head.bias");
    const int cin = s.channels(0);
    for (int c = 0; c < 3; ++c) {
        qb[c] = b[perm[c]];
        for (int k = 0; k < cin; ++k) qw[c * cin + k] = w[perm[c] * cin + k];
    }
    const auto permuted = net.forward(q, x);
    const std::size_t n = base.spatial();
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n; ++i) ASSERT_NEAR(permuted.data[c * n + i], base.data[perm[c] * n + i], 1e-12);
}

TEST(UnetForward, ForcedAlphaOneEqualsPlainNet) {
    Rng rng(9);
    UNetSpec att;
    UNetSpec plain = att;
    plain.attention = false;
    auto pa = build_unet<float>(att, 11);
    auto pp = build_unet<float>(plain, 99);
    for (const auto& e : pp.entries) {
        const auto src = pa.tensor(e.name);
        std::copy(src.begin(), src.end(), pp.tensor(e.name).begin());
    }
    const auto x = random_input<float>(rng, {16, 16, 16});
    ForwardOptions forced;
    forced.force_alpha_one = true;
    const auto a = UNet<float>(att).forward(pa, x, nullptr, forced);
    const auto b = UNet<float>(plain).forward(pp, x);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) worst = std::max(worst, double(std::abs(a.data[i] - b.data[i])));
    EXPECT_LT(worst, 1e-6);
}

// ---------------------------------------------------------------- gradients

namespace {

double loss_of(const UNet<double>& net, const ModelParams<double>& p, const Tensor<double>& x,
               const Tensor<double>& gt) {
    return soft_dice_loss(net.forward(p, x), gt);
}

/// Norm-wise relative error between analytic and central-difference gradients
/// over every tensor whose name starts with `prefix`.
double gate_fd_error(UNetSpec s, std::uint64_t seed) {
    Rng rng(seed);
    auto p = build_unet<double>(s, seed);
    // move the gates off their symmetric initialisation
    for (const auto& e : p.entries)
        if (e.name.rfind("gate", 0) == 0)
            for (auto& v : p.tensor(e.name)) v = std::normal_distribution<double>(0.0, 0.5)(rng);
    const auto x = random_input<double>(rng, {8, 8, 8});
    std::vector<std::uint8_t> labels(512);
    for (auto& l : labels) l = static_cast<std::uint8_t>(rng() % s.num_classes);
    const auto gt = one_hot<double>(labels, s.num_classes, {8, 8, 8});
    const UNet<double> net(s);
    UNetCache<double> cache;
    const auto probs = net.forward(p, x, &cache);
    Tensor<double> dprobs;
    soft_dice_loss(probs, gt, kDiceEpsilon, &dprobs);
    std::vector<double> grad;
    net.backward(p, cache, dprobs, grad);
    double num2 = 0.0, diff2 = 0.0, ana2 = 0.0;
    const double h = 1e-5;
    for (const auto& e : p.entries) {
        if (e.name.rfind("gate", 0) != 0) continue;
        for (std::size_t i = 0; i < e.size; ++i) {
            const std::size_t k = e.offset + i;
            const double keep = p.values[k];
            p.values[k] = keep + h;
            const double up = loss_of(net, p, x, gt);
            p.values[k] = keep - h;
            const double down = loss_of(net, p, x, gt);
            p.values[k] = keep;
            const double fd = (up - down) / (2 * h);
            num2 += fd * fd;
            ana2 += grad[k] * grad[k];
            diff2 += (fd - grad[k]) * (fd - grad[k]);
        }
    }
    return std::sqrt(diff2) / std::max({std::sqrt(num2), std::sqrt(ana2), 1e-300});
}

} // namespace

TEST(UnetGradient, GateParametersMatchFiniteDifferences) {
    UNetSpec s;
    s.base_channels = 4;
    EXPECT_LT(gate_fd_error(s, 21), 1e-4);
}

TEST(UnetGradient, PerChannelGateMatchesFiniteDifferences) {
    UNetSpec s;
    s.base_channels = 4;
    s.depth = 3;
    s.alpha_mode = AlphaMode::kPerChannel;
    EXPECT_LT(gate_fd_error(s, 22), 1e-4);
}

// ---------------------------------------------------------------- input normalisation

TEST(NormalizeInput, WindowEndpointsAndMidpoint) {
    Volume3D v(cube_grid(5, 1, 1), std::vector<float>{-200.0f, 500.0f, 150.0f, -1000.0f, 3000.0f});
    const auto t = normalize_input(v);
    EXPECT_EQ(t.data[0], 0.0f);
    EXPECT_EQ(t.data[1], 1.0f);
    EXPECT_FLOAT_EQ(t.data[2], 0.5f); // (150 + 200) / 700
    EXPECT_EQ(t.data[3], 0.0f);
    EXPECT_EQ(t.data[4], 1.0f);
    EXPECT_FLOAT_EQ(normalize_input(v, -100.0, 100.0).data[0], 0.0f);
    EXPECT_THROW(normalize_input(v, 5.0, 5.0), InvalidArgument);
}

// ---------------------------------------------------------------- checkpoints

TEST(Checkpoint, RoundTripIsBitExact) {
    UNetSpec s;
    s.depth = 3;
    s.alpha_mode = AlphaMode::kPerChannel;
    auto p = build_unet<float>(s, 17);
    p.epoch = 42;
    std::stringstream ss;
    write_checkpoint(ss, p);
    const auto q = read_checkpoint<float>(ss);
    EXPECT_EQ(p, q);
    auto d = build_unet<double>(s, 17);
    std::stringstream sd;
    write_checkpoint(sd, d);
    EXPECT_EQ(read_checkpoint<double>(sd), d);
}

TEST(Checkpoint, TruncationAndCorruptionAreReported) {
    const auto p = build_unet<float>(UNetSpec{}, 1);
    std::stringstream ss;
    write_checkpoint(ss, p);
    const std::string full = ss.str();
    std::stringstream cut(full.substr(0, full.size() - 10));
    try {
        read_checkpoint<float>(cut);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("missing bytes"), std::string::npos) << e.what();
    }
    std::string bad = full;
    bad[0] = 'X';
    std::stringstream bs(bad);
    EXPECT_THROW(read_checkpoint<float>(bs), FormatError);
}
