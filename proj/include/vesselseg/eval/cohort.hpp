#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "vesselseg/core/stats.hpp"
#include "vesselseg/rng.hpp"

namespace vesselseg {

/// Mean with a two-sided 95% t interval.
struct MeanCi {
    double mean = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

inline MeanCi mean_ci95(std::span<const double> v) {
    if (v.size() < 2) throw InvalidArgument("mean_ci95: need at least 2 values");
    const double n = static_cast<double>(v.size());
    const double m = mean_of(v);
    const double se = std::sqrt(sample_variance(v) / n);
    const boost::math::students_t dist(n - 1.0);
    const double t = boost::math::quantile(boost::math::complement(dist, 0.025));
    return {m, m - t * se, m + t * se};
}

struct WelchResult {
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;
};

inline WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw InvalidArgument("welch_t_test: each cohort needs n >= 2");
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double va = sample_variance(a) / na, vb = sample_variance(b) / nb;
    const double diff = mean_of(a) - mean_of(b);
    WelchResult r;
    const double se2 = va + vb;
    if (se2 == 0.0) {
        r.df = na + nb - 2.0;
        r.t = diff == 0.0 ? 0.0 : std::copysign(INFINITY, diff);
        r.p = diff == 0.0 ? 1.0 : 0.0;
        return r;
    }
    r.t = diff / std::sqrt(se2);
    r.df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    const boost::math::students_t dist(r.df);
    r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t))));
    return r;
}

/// Two-sided permutation test on |mean(a) - mean(b)|. Exact enumeration when
/// the number of relabelings is at most `exact_limit`, otherwise `resamples`
/// random relabelings from `seed` with the (1 + hits) / (1 + N) estimate.
inline double permutation_test(std::span<const double> a, std::span<const double> b, std::uint64_t seed = 0,
                               std::size_t exact_limit = 200000, std::size_t resamples = 20000) {
    if (a.size() < 2 || b.size() < 2) throw InvalidArgument("permutation_test: each cohort needs n >= 2");
    std::vector<double> pooled(a.begin(), a.end());
    pooled.insert(pooled.end(), b.begin(), b.end());
    const std::size_t n = pooled.size(), na = a.size();
    const double total = std::accumulate(pooled.begin(), pooled.end(), 0.0);
    auto stat = [&](double sum_a) {
        return std::fabs(sum_a / static_cast<double>(na) - (total - sum_a) / static_cast<double>(n - na));
    };
    const double observed = stat(std::accumulate(a.begin(), a.end(), 0.0));
    // relative slack so relabelings equal to the observed split count as extreme
    const double thresh = observed - 1e-12 * std::max(1.0, std::fabs(observed));

    double combos = 1.0;
    for (std::size_t i = 0; i < na; ++i) combos = combos * static_cast<double>(n - i) / static_cast<double>(i + 1);
    if (combos <= static_cast<double>(exact_limit)) {
        std::vector<bool> pick(n, false);
        std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(na), true);
        std::size_t hits = 0, count = 0;
        do {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                if (pick[i]) s += pooled[i];
            hits += stat(s) >= thresh;
            ++count;
        } while (std::prev_permutation(pick.begin(), pick.end()));
        return static_cast<double>(hits) / static_cast<double>(count);
    }
    Rng rng = make_stream(seed, "permutation");
    std::vector<std::size_t> idx(n);
    std::size_t hits = 0;
    for (std::size_t r = 0; r < resamples; ++r) {
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::shuffle(idx.begin(), idx.end(), rng);
        double s = 0.0;
        for (std::size_t i = 0; i < na; ++i) s += pooled[idx[i]];
        hits += stat(s) >= thresh;
    }
    return static_cast<double>(hits + 1) / static_cast<double>(resamples + 1);
}

enum class LocationTest { kWelch, kPermutation };

struct CohortRow {
    std::string field;
    MeanCi a, b;
    double p = 1.0;
};

struct CohortTable {
    std::string label_a, label_b;
    std::size_t n_a = 0, n_b = 0;
    std::vector<CohortRow> rows;

    /// Columns: field, cohort A mean, its 95% CI, cohort B mean, its CI, p-value.
    std::string to_csv() const {
        auto num = [](double v, const char* fmt) {
            char buf[64];
            std::snprintf(buf, sizeof buf, fmt, v);
            return std::string(buf);
        };
        auto ci = [&](const MeanCi& m, const char* fmt) { return "[" + num(m.lo, fmt) + " " + num(m.hi, fmt) + "]"; };
        std::ostringstream os;
        os << "field," << label_a << " (n = " << n_a << ")," << label_a << " 95% CI," << label_b << " (n = " << n_b
           << ")," << label_b << " 95% CI,p-value\n";
        for (const auto& r : rows) {
            const char* fmt = r.field.rfind("Voxel", 0) == 0 ? "%.2f" : "%.1f";
            os << r.field << ',' << num(r.a.mean, fmt) << ',' << ci(r.a, fmt) << ',' << num(r.b.mean, fmt) << ','
               << ci(r.b, fmt) << ',' << num(r.p, "%.2f") << '\n';
        }
        return os.str();
    }
};

/// Per-field comparison of two cohorts of scan statistics.
inline CohortTable compare_cohorts(const std::vector<HuStats>& a, const std::vector<HuStats>& b,
                                   LocationTest test = LocationTest::kWelch, std::uint64_t seed = 0,
                                   std::string label_a = "Training Cohort", std::string label_b = "Test Cohort") {
    if (a.size() < 2 || b.size() < 2) throw InvalidArgument("compare_cohorts: each cohort needs n >= 2");
    CohortTable t{std::move(label_a), std::move(label_b), a.size(), b.size(), {}};
    struct Field {
        const char* name;
        double (*get)(const HuStats&);
    };
    const Field fields[] = {
        {"25th Percentile HU", [](const HuStats& s) { return s.p25; }},
        {"Mean HU", [](const HuStats& s) { return s.mean; }},
        {"75th Percentile HU", [](const HuStats& s) { return s.p75; }},
        {"Standard Deviation", [](const HuStats& s) { return s.std; }},
        {"Voxel Length mm", [](const HuStats& s) { return s.voxel_spacing[0]; }},
        {"Voxel Height mm", [](const HuStats& s) { return s.voxel_spacing[1]; }},
        {"Voxel Thickness mm", [](const HuStats& s) { return s.voxel_spacing[2]; }},
    };
    for (const auto& f : fields) {
        std::vector<double> va, vb;
        for (const auto& s : a) va.push_back(f.get(s));
        for (const auto& s : b) vb.push_back(f.get(s));
        CohortRow r;
        r.field = f.name;
        r.a = mean_ci95(va);
        r.b = mean_ci95(vb);
        r.p = test == LocationTest::kWelch ? welch_t_test(va, vb).p : permutation_test(va, vb, seed);
        t.rows.push_back(std::move(r));
    }
    return t;
}

} // namespace vesselseg
