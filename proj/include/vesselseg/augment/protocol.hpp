#pragma once

// 10:1 augmentation protocol: five Gaussian centres on a ring around the
// aorta, each used once divergent and once congruent.

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "vesselseg/augment/divergence.hpp"
#include "vesselseg/rng.hpp"

namespace vesselseg {

struct AugmentConfig {
    double sigma = 30.0;        ///< voxels
    double amplitude = 12.0;    ///< voxels
    double ring_factor = 1.5;   ///< ring radius / mean aortic radius
    double angle_jitter_deg = 0.0;
};

inline constexpr int kAugmentLocations = 5;
inline constexpr int kAugmentPerPatient = 2 * kAugmentLocations;

struct AugmentedPair {
    Volume3D volume;
    LabelMask mask;
    DivergenceSpec spec;
};

struct RingPlacement {
    double centroid_i = 0.0, centroid_j = 0.0;
    double mean_radius = 0.0; ///< sqrt(area / pi) at the widest slice, voxels
    std::int64_t slice = 0;
    std::array<std::array<double, 2>, kAugmentLocations> centres{};
};

/// Gaussian centres at ring_factor x mean radius from the foreground centroid of
/// the widest axial slice, at 0, 72, 144, 216 and 288 degrees (+ optional jitter).
inline RingPlacement ring_placements(const LabelMask& mask, const AugmentConfig& cfg, Rng& rng) {
    const Grid& g = mask.grid();
    std::int64_t best = -1;
    std::size_t best_count = 0;
    for (std::int64_t k = 0; k < g.dims[2]; ++k) {
        std::size_t c = 0;
        for (std::int64_t j = 0; j < g.dims[1]; ++j)
            for (std::int64_t i = 0; i < g.dims[0]; ++i) c += mask.at(i, j, k) != 0;
        if (c > best_count) {
            best_count = c;
            best = k;
        }
    }
    if (best < 0) throw EmptyMaskError("augment: empty mask, cannot place Gaussian centres");
    RingPlacement r;
    r.slice = best;
    double si = 0.0, sj = 0.0;
    for (std::int64_t j = 0; j < g.dims[1]; ++j)
        for (std::int64_t i = 0; i < g.dims[0]; ++i)
            if (mask.at(i, j, best) != 0) {
                si += static_cast<double>(i);
                sj += static_cast<double>(j);
            }
    r.centroid_i = si / static_cast<double>(best_count);
    r.centroid_j = sj / static_cast<double>(best_count);
    r.mean_radius = std::sqrt(static_cast<double>(best_count) / std::numbers::pi);
    const double ring = cfg.ring_factor * r.mean_radius;
    for (int n = 0; n < kAugmentLocations; ++n) {
        double deg = 72.0 * n;
        if (cfg.angle_jitter_deg > 0.0) deg += uniform(rng, -cfg.angle_jitter_deg, cfg.angle_jitter_deg);
        const double th = deg * std::numbers::pi / 180.0;
        r.centres[n] = {r.centroid_i + ring * std::cos(th), r.centroid_j + ring * std::sin(th)};
    }
    return r;
}

/// Exactly ten warped (image, mask) pairs per patient.
inline std::vector<AugmentedPair> augment_patient(const Volume3D& vol, const LabelMask& mask,
                                                  const AugmentConfig& cfg, Rng& rng) {
    if (!same_frame(vol.grid, mask.grid())) throw InvalidArgument("augment_patient: image and mask not co-registered");
    const auto placement = ring_placements(mask, cfg, rng);
    std::vector<AugmentedPair> out;
    out.reserve(kAugmentPerPatient);
    for (const auto& c : placement.centres) {
        for (WarpMode mode : {WarpMode::kDivergent, WarpMode::kCongruent}) {
            DivergenceSpec spec{c[0], c[1], cfg.sigma, cfg.amplitude, mode};
            const auto field = build_divergence_field(vol.grid.dims[0], vol.grid.dims[1], spec);
            out.push_back({warp_slicewise(vol, field), warp_slicewise(mask, field), spec});
        }
    }
    return out;
}

} // namespace vesselseg
