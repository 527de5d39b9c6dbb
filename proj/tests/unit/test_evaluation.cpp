#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "test_util.hpp"
#include "vesselseg/eval/cohort.hpp"
#include "vesselseg/eval/comparison.hpp"
#include "vesselseg/eval/report.hpp"

using namespace vesselseg;
using namespace vstest;

namespace {

struct Counts {
    std::size_t a = 0, b = 0, both = 0;
};

// Brute-force voxel counting over a membership predicate.
template <typename In>
double brute_dice(const LabelMask& x, const LabelMask& y, In in) {
    Counts c;
    const auto d = x.dims();
    for (std::int64_t k = 0; k < d[2]; ++k)
        for (std::int64_t j = 0; j < d[1]; ++j)
            for (std::int64_t i = 0; i < d[0]; ++i) {
                const bool p = in(x.at(i, j, k)), q = in(y.at(i, j, k));
                c.a += p;
                c.b += q;
                c.both += p && q;
            }
    if (c.a + c.b == 0) return 1.0;
    return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.a + c.b);
}

LabelMask ball(std::int64_t n, double r, const std::vector<std::uint8_t>& classes) {
    LabelMask m(cube_grid(n, n, n), classes);
    const double c = 0.5 * static_cast<double>(n - 1);
    for (std::int64_t k = 0; k < n; ++k)
        for (std::int64_t j = 0; j < n; ++j)
            for (std::int64_t i = 0; i < n; ++i) {
                const double d = std::hypot(i - c, j - c, k - c);
                if (d <= r) m.at(i, j, k) = classes.size() > 2 && d <= 0.5 * r ? 1 : classes.size() > 2 ? 2 : 1;
            }
    return m;
}

// 6-neighbour erosion, written out directly.
LabelMask erode(const LabelMask& m) {
    LabelMask out = m;
    const auto d = m.dims();
    const std::int64_t off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (std::int64_t k = 0; k < d[2]; ++k)
        for (std::int64_t j = 0; j < d[1]; ++j)
            for (std::int64_t i = 0; i < d[0]; ++i) {
                if (!m.at(i, j, k)) continue;
                for (const auto& o : off) {
                    const std::int64_t a = i + o[0], b = j + o[1], c = k + o[2];
                    if (a < 0 || b < 0 || c < 0 || a >= d[0] || b >= d[1] || c >= d[2] || !m.at(a, b, c)) {
                        out.at(i, j, k) = 0;
                        break;
                    }
                }
            }
    return out;
}

HuStats stat_with_mean(double mean) {
    HuStats s;
    s.p25 = mean - 1.0;
    s.mean = mean;
    s.p75 = mean + 1.0;
    s.std = 10.0;
    s.voxel_spacing = {0.8, 0.8, 1.25};
    return s;
}

} // namespace

TEST(Dice, SpecExamples) {
    std::vector<std::uint8_t> a{1, 1, 1, 1, 0, 0}, b{0, 0, 1, 1, 1, 1}, z(6, 0);
    EXPECT_EQ(dice(a, b), 0.5);
    EXPECT_EQ(dice(a, a), 1.0);
    EXPECT_EQ(dice(z, z), 1.0);
    EXPECT_EQ(dice(a, z), 0.0);
    std::vector<std::uint8_t> c{0, 0, 0, 0, 1, 1};
    EXPECT_EQ(dice(a, c), 0.0);
    EXPECT_THROW(dice(a, std::vector<std::uint8_t>(5)), InvalidArgument);
}

TEST(Dice, MatchesBruteForceOnRandomMasks) {
    Rng rng(11);
    std::uniform_int_distribution<std::int64_t> side(1, 16);
    std::uniform_real_distribution<double> frac(0.0, 1.0);
    for (int t = 0; t < 200; ++t) {
        const Grid g = cube_grid(side(rng), side(rng), side(rng));
        const bool binary = t % 2 == 0;
        const auto classes = binary ? binary_classes() : aorta_classes();
        const auto x = random_mask(rng, g, classes, frac(rng));
        const auto y = random_mask(rng, g, classes, frac(rng));
        const auto nz = [](std::uint8_t v) { return v != 0; };
        ASSERT_EQ(dice(x, y), brute_dice(x, y, nz));
        ASSERT_EQ(dice(x, y), dice(y, x));
        const auto s = multiclass_dice(x, y);
        ASSERT_EQ(s.entire, brute_dice(x, y, nz));
        if (binary) {
            ASSERT_TRUE(std::isnan(s.lumen));
        } else {
            ASSERT_EQ(s.lumen, brute_dice(x, y, [](std::uint8_t v) { return v == 1; }));
            ASSERT_EQ(s.wall_ilt, brute_dice(x, y, [](std::uint8_t v) { return v == 2; }));
        }
        ASSERT_GE(s.entire, 0.0);
        ASSERT_LE(s.entire, 1.0);
        if (x.count_nonzero()) {
            ASSERT_EQ(dice(x, x), 1.0);
        }
    }
}

TEST(Dice, EntireScoreIgnoresLabelPermutation) {
    Rng rng(12);
    for (int t = 0; t < 20; ++t) {
        const Grid g = cube_grid(7, 6, 5);
        auto x = random_mask(rng, g, aorta_classes(), 0.5), y = random_mask(rng, g, aorta_classes(), 0.5);
        const double before = multiclass_dice(x, y).entire;
        for (auto* m : {&x, &y})
            for (auto& v : m->data()) v = v == 1 ? 2 : v == 2 ? 1 : 0;
        EXPECT_EQ(multiclass_dice(x, y).entire, before);
    }
}

TEST(Dice, SwappedClassesScoreZeroPerClassButOneOverall) {
    LabelMask gt(cube_grid(4, 1, 1), aorta_classes());
    gt.data() = {1, 1, 2, 2};
    LabelMask pred = gt;
    pred.data() = {2, 2, 1, 1};
    const auto s = multiclass_dice(pred, gt);
    EXPECT_EQ(s.lumen, 0.0);
    EXPECT_EQ(s.wall_ilt, 0.0);
    EXPECT_EQ(s.entire, 1.0);
    const auto same = multiclass_dice(gt, gt);
    EXPECT_EQ(same.lumen, 1.0);
    EXPECT_EQ(same.wall_ilt, 1.0);
    LabelMask bin(cube_grid(4, 1, 1), binary_classes());
    EXPECT_THROW(multiclass_dice(bin, gt), InvalidArgument);
}

TEST(Icc, PerfectAgreementIsExactlyOne) {
    const std::vector<std::vector<double>> m{{10, 10}, {20, 20}, {35, 35}};
    const auto r = icc(m);
    EXPECT_EQ(r.value, 1.0);
    EXPECT_FALSE(r.degenerate);
}

TEST(Icc, FourByTwoFixture) {
    // ANOVA-table oracle: MSR 309.5, MSC 0.5, MSE 17/6
    const auto r = icc({{10, 12}, {20, 19}, {30, 33}, {40, 38}});
    EXPECT_NEAR(r.value, 0.9855382967327265, 1e-10);
    EXPECT_NEAR(r.ms_rows, 309.5, 1e-10);
    EXPECT_NEAR(r.ms_cols, 0.5, 1e-10);
    EXPECT_NEAR(r.ms_error, 17.0 / 6.0, 1e-10);
}

TEST(Icc, ScrambledRaterGivesZero) {
    EXPECT_NEAR(icc({{1, 3}, {2, 1}, {3, 4}, {4, 2}}).value, 0.0, 1e-12);
}

TEST(Icc, AffineInvariance) {
    Rng rng(13);
    std::uniform_real_distribution<double> u(0.0, 100.0), alpha(0.1, 10.0), beta(-50.0, 50.0);
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 2 + t % 7, k = 2 + t % 3;
        std::vector<std::vector<double>> m(n, std::vector<double>(k));
        for (auto& row : m)
            for (auto& v : row) v = u(rng);
        auto s = m;
        const double a = alpha(rng), b = beta(rng);
        for (auto& row : s)
            for (auto& v : row) v = a * v + b;
        ASSERT_NEAR(icc(s).value, icc(m).value, 1e-9);
    }
}

TEST(Icc, DegenerateAndInvalidInputs) {
    const auto r = icc({{5, 5}, {5, 5}});
    EXPECT_TRUE(r.degenerate);
    EXPECT_EQ(r.value, 1.0);
    EXPECT_THROW(icc({{1, 2}}), InvalidArgument);
    EXPECT_THROW(icc({{1}, {2}}), InvalidArgument);
    EXPECT_THROW(icc({{1, 2}, {3}}), InvalidArgument);
    EXPECT_THROW(icc({{1, 2}, {3, std::nan("")}}), InvalidArgument);
}

TEST(CohortStats, MeanCiMatchesTDistribution) {
    const std::vector<double> v{1, 2, 3, 4, 5};
    const auto ci = mean_ci95(v);
    EXPECT_DOUBLE_EQ(ci.mean, 3.0);
    EXPECT_NEAR(ci.lo, 1.036756838522439, 1e-12);
    EXPECT_NEAR(ci.hi, 4.9632431614775605, 1e-12);
    EXPECT_THROW(mean_ci95(std::vector<double>{1.0}), InvalidArgument);
}

TEST(CohortStats, WelchMatchesReference) {
    const std::vector<double> a{1, 2, 3, 4, 5}, b{2.5, 4, 6.5, 7, 9, 11};
    const auto r = welch_t_test(a, b);
    EXPECT_NEAR(r.t, -2.5136701969446653, 1e-12);
    EXPECT_NEAR(r.df, 7.6421218246608476, 1e-10);
    EXPECT_NEAR(r.p, 0.03746958280687458, 1e-10);
}

TEST(CohortStats, PermutationTestExactAndSymmetric) {
    const std::vector<double> a{1, 2, 3}, b{4, 5, 6, 7};
    EXPECT_NEAR(permutation_test(a, b), 2.0 / 35.0, 1e-15);
    EXPECT_EQ(permutation_test(a, a), 1.0);
    // large cohorts fall back to Monte Carlo, still deterministic per seed
    std::vector<double> x(20), y(20);
    std::iota(x.begin(), x.end(), 0.0);
    std::iota(y.begin(), y.end(), 0.5);
    const double p = permutation_test(x, y, 4);
    EXPECT_EQ(p, permutation_test(x, y, 4));
    EXPECT_GT(p, 0.5);
}

TEST(CohortStats, CompareCohortsExamples) {
    std::vector<HuStats> same{stat_with_mean(1), stat_with_mean(2), stat_with_mean(3)};
    const auto t = compare_cohorts(same, same, LocationTest::kPermutation);
    for (const auto& r : t.rows) EXPECT_EQ(r.p, 1.0) << r.field;

    std::vector<HuStats> lo, hi;
    for (double e : {-0.01, 0.0, 0.01}) {
        lo.push_back(stat_with_mean(e));
        hi.push_back(stat_with_mean(100 + e));
    }
    const auto w = compare_cohorts(lo, hi);
    EXPECT_LT(w.rows[1].p, 0.001);
    EXPECT_EQ(w.rows[1].field, "Mean HU");
    EXPECT_THROW(compare_cohorts({stat_with_mean(0)}, hi), InvalidArgument);
}

TEST(CohortStats, TableLayout) {
    std::vector<HuStats> a{stat_with_mean(-600), stat_with_mean(-580), stat_with_mean(-590)};
    const auto csv = compare_cohorts(a, a).to_csv();
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "field,Training Cohort (n = 3),Training Cohort 95% CI,Test Cohort (n = 3),Test Cohort 95% CI,p-value");
    EXPECT_NE(csv.find("Mean HU,-590.0,[-614.8 -565.2]"), std::string::npos) << csv;
    EXPECT_NE(csv.find("Voxel Thickness mm,1.25,[1.25 1.25]"), std::string::npos) << csv;
}

TEST(Report, AggregatesMatchRawRows) {
    Rng rng(14);
    MetricsReport rep;
    std::vector<double> entire_a;
    for (int s = 0; s < 6; ++s) {
        const Grid g = cube_grid(8, 8, 8);
        const auto gt = random_mask(rng, g, aorta_classes(), 0.5);
        const auto pa = random_mask(rng, g, aorta_classes(), 0.5);
        const auto pb = random_mask(rng, g, aorta_classes(), 0.5);
        rep.add_scan("S" + std::to_string(s), "a", pa, gt);
        rep.add_scan("S" + std::to_string(s), "b", pb, gt);
        entire_a.push_back(dice(pa, gt));
    }
    EXPECT_EQ(rep.rows.size(), 36u);
    const auto m = rep.aggregate("a", EvalRegion::kEntire);
    double mean = 0.0;
    for (double v : entire_a) mean += v / 6.0;
    double ss = 0.0;
    for (double v : entire_a) ss += (v - mean) * (v - mean);
    EXPECT_NEAR(m.mean, mean, 1e-14);
    EXPECT_NEAR(m.sem, std::sqrt(ss / 5.0 / 6.0), 1e-14);
    EXPECT_EQ(m.n, 6u);
    for (const auto& r : rep.rows) {
        EXPECT_GE(r.dice, 0.0);
        EXPECT_LE(r.dice, 1.0);
    }
    const auto rows = rep.rows_csv();
    EXPECT_EQ(rows.substr(0, rows.find('\n')), "scan_id,region,dice,model_id");
}

TEST(Report, SummaryFormatting) {
    MetricsReport rep;
    rep.rows = {{"S1", EvalRegion::kInnerLumen, 0.97, "m"}, {"S2", EvalRegion::kInnerLumen, 0.966, "m"},
                {"S1", EvalRegion::kEntire, 0.9, "m"}, {"S2", EvalRegion::kEntire, 0.92, "m"}};
    EXPECT_EQ(rep.summary_csv({{"m", "Model"}}),
              "Region,Model\nInner Lumen,96.8 ± 0.2 %\nEntire AAA,91.0 ± 1.0 %\n");
    EXPECT_EQ(format_percent(MeanSem{0.5, 0.0, 1}), "50.0 ± 0.0 %");
}

TEST(Observers, IdenticalSessionScoresOneHundredPercent) {
    ObserverStudy st;
    for (int s = 0; s < 3; ++s) {
        const auto m = ball(12, 3.0 + s, aorta_classes());
        st.scans.push_back({"S" + std::to_string(s), {{"ground", m}, {"session2", m}}});
    }
    const auto t = observer_report(st, "ground");
    EXPECT_EQ(t.to_csv(), "Region,session2\nInner Lumen,100.0 ± 0.0 %\nEntire Aorta,100.0 ± 0.0 %\n"
                          "Outer Wall + ILT Only,100.0 ± 0.0 %\n");
    EXPECT_EQ(observer_icc(st, {"ground", "session2"}).value, 1.0);
}

TEST(Observers, ErodedObserverMatchesMorphologicalOracle) {
    ObserverStudy st;
    std::vector<double> expected;
    for (int s = 0; s < 4; ++s) {
        const auto g = ball(16, 4.0 + s, binary_classes());
        const auto e = erode(g);
        expected.push_back(2.0 * static_cast<double>(e.count_nonzero()) /
                           static_cast<double>(g.count_nonzero() + e.count_nonzero()));
        st.scans.push_back({"S" + std::to_string(s), {{"A", g}, {"B", e}}});
    }
    const auto t = observer_report(st, "A");
    ASSERT_EQ(t.regions.size(), 1u);
    const auto cell = t.cells.at("B").at(EvalRegion::kEntire);
    double mean = 0.0;
    for (double v : expected) mean += v / 4.0;
    EXPECT_NEAR(cell.mean, mean, 1e-14);
    EXPECT_LT(observer_icc(st, {"A", "B"}).value, 1.0);
    EXPECT_GT(observer_icc(st, {"A", "B"}).value, 0.5);
}

TEST(Observers, MissingPairsThrow) {
    ObserverStudy st;
    const auto m = ball(8, 2.0, binary_classes());
    st.scans.push_back({"S0", {{"A", m}, {"B", m}}});
    st.scans.push_back({"S1", {{"A", m}}});
    EXPECT_THROW(observer_report(st, "A"), InvalidArgument);
    EXPECT_THROW(observer_report(st, "C"), InvalidArgument);
    EXPECT_THROW(observer_icc(st, {"A", "B"}), InvalidArgument);
    EXPECT_THROW(observer_report(ObserverStudy{}, "A"), InvalidArgument);
}

TEST(Comparison, HarnessEmitsRegionByModelTable) {
    const auto cohort = make_roi_cohort({2, 1, 2}, 3, toy_roi_spec(16, 5.0));
    ASSERT_EQ(cohort.train.size(), 2u);
    ASSERT_EQ(cohort.test.size(), 2u);
    nn::UNetSpec spec;
    spec.depth = 2;
    spec.base_channels = 4;
    TrainConfig cfg;
    cfg.epochs = 2;
    const auto r = compare_attention_vs_plain(cohort, spec, 1, cfg);
    const auto csv = r.table_csv();
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "Region,Attention U-Net,3D U-Net");
    EXPECT_NE(csv.find("\nInner Lumen,"), std::string::npos);
    EXPECT_NE(csv.find("\nEntire AAA,"), std::string::npos);
    EXPECT_NE(csv.find("\nOuter Wall + ILT Only,"), std::string::npos);
    EXPECT_EQ(r.report.rows.size(), 12u);
    EXPECT_TRUE(r.attention.last.has("gate0.psi"));
    EXPECT_FALSE(r.plain.last.has("gate0.psi"));
}
