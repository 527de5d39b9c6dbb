#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "vesselseg/core/image.hpp"

namespace vesselseg {

/// Percentile of already-sorted values, linear interpolation between order
/// statistics at rank (n - 1) * q.
inline double percentile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw InvalidArgument("percentile of empty sample");
    if (q < 0.0 || q > 1.0) throw InvalidArgument("percentile fraction outside [0, 1]");
    const double rank = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

inline double mean_of(std::span<const double> v) {
    if (v.empty()) throw InvalidArgument("mean of empty sample");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

/// Sample variance (n - 1 denominator).
inline double sample_variance(std::span<const double> v) {
    if (v.size() < 2) throw InvalidArgument("sample variance needs n >= 2");
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

struct HuStats {
    double p25 = 0.0;
    double mean = 0.0;
    double p75 = 0.0;
    double std = 0.0; ///< population standard deviation
    Vec3 voxel_spacing{1.0, 1.0, 1.0};
};

/// Percentiles, mean and population std over every voxel (air included).
inline HuStats hu_statistics(const Volume3D& vol) {
    if (vol.data.empty()) throw InvalidArgument("hu_statistics: empty volume");
    std::vector<double> v(vol.data.begin(), vol.data.end());
    std::sort(v.begin(), v.end());
    HuStats s;
    s.p25 = percentile_sorted(v, 0.25);
    s.p75 = percentile_sorted(v, 0.75);
    s.mean = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size()));
    s.voxel_spacing = vol.grid.spacing;
    return s;
}

} // namespace vesselseg
