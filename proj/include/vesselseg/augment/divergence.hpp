#pragma once

// Divergence transformation: a Gaussian-weighted radial displacement that
// locally stretches (divergent) or compresses (congruent) each axial slice.

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "vesselseg/augment/warp.hpp"
#include "vesselseg/core/image.hpp"
#include "vesselseg/core/roi.hpp"

namespace vesselseg {

enum class WarpMode { kDivergent, kCongruent };

struct DivergenceSpec {
    double center_i = 0.0; ///< in-plane voxel coordinates of the stretch centre
    double center_j = 0.0;
    double sigma = 30.0;     ///< voxels
    double amplitude = 12.0; ///< peak displacement, voxels
    WarpMode mode = WarpMode::kDivergent;

    void validate() const {
        if (!(sigma > 0.0)) throw InvalidSpec("divergence sigma must be > 0");
        if (!(amplitude >= 0.0)) throw InvalidSpec("divergence amplitude must be >= 0");
    }
};

/// exp(-((i - ic)^2 + (j - jc)^2) / (2 sigma^2))
inline double gaussian_weight(double i, double j, const DivergenceSpec& spec) {
    const double di = i - spec.center_i, dj = j - spec.center_j;
    return std::exp(-(di * di + dj * dj) / (2.0 * spec.sigma * spec.sigma));
}

struct DisplacementField2D {
    std::int64_t nx = 0, ny = 0;
    std::vector<double> dx, dy; ///< voxels, x fastest

    DisplacementField2D() = default;
    DisplacementField2D(std::int64_t x, std::int64_t y)
        : nx(x), ny(y), dx(static_cast<std::size_t>(x * y), 0.0), dy(static_cast<std::size_t>(x * y), 0.0) {}

    std::size_t index(std::int64_t i, std::int64_t j) const { return static_cast<std::size_t>(j * nx + i); }

    friend bool operator==(const DisplacementField2D&, const DisplacementField2D&) = default;
};

/// d(p) = s * amplitude * g(p) * u(p), u the unit vector from the centre to p
/// (zero at the centre), s = +1 divergent, -1 congruent.
inline DisplacementField2D build_divergence_field(std::int64_t nx, std::int64_t ny, const DivergenceSpec& spec) {
    spec.validate();
    if (nx < 1 || ny < 1) throw InvalidArgument("displacement field dims must be >= 1");
    DisplacementField2D f(nx, ny);
    const double sign = spec.mode == WarpMode::kDivergent ? 1.0 : -1.0;
    for (std::int64_t j = 0; j < ny; ++j)
        for (std::int64_t i = 0; i < nx; ++i) {
            const double di = static_cast<double>(i) - spec.center_i;
            const double dj = static_cast<double>(j) - spec.center_j;
            const double r = std::hypot(di, dj);
            if (r == 0.0) continue;
            const double mag = spec.amplitude * gaussian_weight(static_cast<double>(i), static_cast<double>(j), spec);
            // sign applied last so divergent and congruent fields are exact negations
            f.dx[f.index(i, j)] = sign * (mag * (di / r));
            f.dy[f.index(i, j)] = sign * (mag * (dj / r));
        }
    return f;
}

/// Apply one in-plane field to every axial slice: out(p) = in(p - d(p)).
template <typename T>
Image<T> warp_slicewise(const Image<T>& src, const DisplacementField2D& field, Interp interp, T pad) {
    if (field.nx != src.grid.dims[0] || field.ny != src.grid.dims[1])
        throw InvalidArgument("warp_slicewise: field dims do not match in-plane dims");
    return warp_inplane(
        src,
        [&](double i, double j) {
            const auto n = field.index(static_cast<std::int64_t>(i), static_cast<std::int64_t>(j));
            return std::pair{i - field.dx[n], j - field.dy[n]};
        },
        interp, pad);
}

inline Volume3D warp_slicewise(const Volume3D& vol, const DisplacementField2D& field,
                               Interp interp = Interp::kTrilinear) {
    return warp_slicewise(vol, field, interp, kPadHu);
}

inline LabelMask warp_slicewise(const LabelMask& mask, const DisplacementField2D& field) {
    return LabelMask(warp_slicewise(mask.image, field, Interp::kNearest, std::uint8_t{0}), mask.class_set);
}

} // namespace vesselseg
