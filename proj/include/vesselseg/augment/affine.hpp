#pragma once

#include <cmath>
#include <numbers>
#include <utility>

#include "vesselseg/augment/warp.hpp"
#include "vesselseg/core/roi.hpp"
#include "vesselseg/rng.hpp"

namespace vesselseg {

/// In-plane similarity transform about the slice centre.
struct AffineSpec {
    double rotation_deg = 0.0; ///< [0, 15]
    double scale = 1.0;        ///< [0.7, 1.3]
    double tx = 0.0;           ///< voxels
    double ty = 0.0;

    void validate() const {
        if (rotation_deg < 0.0 || rotation_deg > 15.0) throw InvalidSpec("affine rotation outside [0, 15] degrees");
        if (scale < 0.7 || scale > 1.3) throw InvalidSpec("affine scale outside [0.7, 1.3]");
    }
};

struct AffineSampler {
    double max_rotation_deg = 15.0;
    double min_scale = 0.7;
    double max_scale = 1.3;
    double translation_fraction = 0.10; ///< of in-plane extent, uniform +/-

    AffineSpec sample(Rng& rng, std::int64_t nx, std::int64_t ny) const {
        AffineSpec s;
        s.rotation_deg = uniform(rng, 0.0, max_rotation_deg);
        s.scale = uniform(rng, min_scale, max_scale);
        const double ax = translation_fraction * static_cast<double>(nx);
        const double ay = translation_fraction * static_cast<double>(ny);
        s.tx = ax > 0 ? uniform(rng, -ax, ax) : 0.0;
        s.ty = ay > 0 ? uniform(rng, -ay, ay) : 0.0;
        return s;
    }
};

/// Forward map x' = c + scale * R(theta) (x - c) + t; sampled backwards.
template <typename T>
Image<T> apply_affine(const Image<T>& src, const AffineSpec& spec, Interp interp, T pad) {
    const double ci = 0.5 * static_cast<double>(src.grid.dims[0] - 1);
    const double cj = 0.5 * static_cast<double>(src.grid.dims[1] - 1);
    const double th = spec.rotation_deg * std::numbers::pi / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    const bool identity = spec.rotation_deg == 0.0 && spec.scale == 1.0 && spec.tx == 0.0 && spec.ty == 0.0;
    return warp_inplane(
        src,
        [&](double i, double j) {
            if (identity) return std::pair{i, j};
            const double u = i - ci - spec.tx, v = j - cj - spec.ty;
            // inverse rotation, then inverse scale
            const double ri = (c * u + s * v) / spec.scale;
            const double rj = (-s * u + c * v) / spec.scale;
            return std::pair{ci + ri, cj + rj};
        },
        interp, pad);
}

struct AffinePair {
    Volume3D volume;
    LabelMask mask;
    AffineSpec spec;
};

/// One random in-plane similarity, shared by image (trilinear) and mask (nearest).
inline AffinePair random_affine(const Volume3D& vol, const LabelMask& mask, const AffineSampler& sampler, Rng& rng) {
    if (!same_frame(vol.grid, mask.grid())) throw InvalidArgument("random_affine: image and mask not co-registered");
    const AffineSpec spec = sampler.sample(rng, vol.grid.dims[0], vol.grid.dims[1]);
    return {apply_affine(vol, spec, Interp::kTrilinear, kPadHu),
            LabelMask(apply_affine(mask.image, spec, Interp::kNearest, std::uint8_t{0}), mask.class_set), spec};
}

} // namespace vesselseg
