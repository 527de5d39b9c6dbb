#pragma once

#include <cmath>
#include <cstdint>
#include <type_traits>
#include <vector>

#include "vesselseg/core/image.hpp"

namespace vesselseg {

enum class Interp { kTrilinear, kNearest };

/// What to do with sample points that fall outside the source grid.
enum class Boundary {
    kClamp, ///< snap to the nearest edge voxel (extent-preserving resampling)
    kPad,   ///< emit the pad value beyond half a voxel outside the grid
};

namespace detail {

// One axis of a separable axis-aligned resampling: for each output index the
// two source taps and the weight of the upper tap, or a flag for "outside".
struct AxisTaps {
    std::vector<std::int64_t> lo, hi;
    std::vector<double> w;
    std::vector<std::uint8_t> outside;
};

inline AxisTaps axis_taps(std::int64_t n_out, double origin_out, double spacing_out,
                          std::int64_t n_in, double origin_in, double spacing_in, Interp interp,
                          Boundary boundary) {
    AxisTaps t;
    t.lo.resize(n_out);
    t.hi.resize(n_out);
    t.w.resize(n_out);
    t.outside.assign(n_out, 0);
    const double max_index = static_cast<double>(n_in - 1);
    for (std::int64_t o = 0; o < n_out; ++o) {
        double c = (origin_out + o * spacing_out - origin_in) / spacing_in;
        if (boundary == Boundary::kPad && (c < -0.5 || c >= n_in - 0.5)) {
            // Tolerate round-off right at the upper half-voxel edge.
            if (!(c < n_in - 0.5 + 1e-9 && c >= -0.5 - 1e-9)) {
                t.outside[o] = 1;
                t.lo[o] = t.hi[o] = 0;
                t.w[o] = 0.0;
                continue;
            }
        }
        c = std::clamp(c, 0.0, max_index);
        if (interp == Interp::kNearest) {
            auto idx = static_cast<std::int64_t>(std::floor(c + 0.5));
            idx = std::clamp<std::int64_t>(idx, 0, n_in - 1);
            t.lo[o] = t.hi[o] = idx;
            t.w[o] = 0.0;
        } else {
            auto l = static_cast<std::int64_t>(std::floor(c));
            l = std::clamp<std::int64_t>(l, 0, n_in - 1);
            auto h = std::min<std::int64_t>(l + 1, n_in - 1);
            t.lo[o] = l;
            t.hi[o] = h;
            t.w[o] = c - static_cast<double>(l);
            if (h == l) t.w[o] = 0.0;
        }
    }
    return t;
}

} // namespace detail

/// Resample `src` onto an arbitrary axis-aligned `target` grid by physical position.
template <typename T>
Image<T> resample_onto(const Image<T>& src, const Grid& target, Interp interp, T pad,
                       Boundary boundary) {
    if constexpr (std::is_integral_v<T>) {
        if (interp != Interp::kNearest)
            throw InvalidArgument("integer label grids must be resampled with nearest");
    }
    target.validate();
    const Grid& g = src.grid;
    detail::AxisTaps ax[3];
    for (int a = 0; a < 3; ++a)
        ax[a] = detail::axis_taps(target.dims[a], target.origin[a], target.spacing[a], g.dims[a],
                                  g.origin[a], g.spacing[a], interp, boundary);

    Image<T> out(target, pad);
    const auto nx = g.dims[0], ny = g.dims[1];
    auto src_at = [&](std::int64_t i, std::int64_t j, std::int64_t k) -> double {
        return static_cast<double>(src.data[static_cast<std::size_t>((k * ny + j) * nx + i)]);
    };
    std::size_t n = 0;
    for (std::int64_t k = 0; k < target.dims[2]; ++k) {
        for (std::int64_t j = 0; j < target.dims[1]; ++j) {
            for (std::int64_t i = 0; i < target.dims[0]; ++i, ++n) {
                if (ax[0].outside[i] || ax[1].outside[j] || ax[2].outside[k]) continue;
                if (interp == Interp::kNearest) {
                    out.data[n] = src.data[static_cast<std::size_t>(
                        (ax[2].lo[k] * ny + ax[1].lo[j]) * nx + ax[0].lo[i])];
                    continue;
                }
                const double wx = ax[0].w[i], wy = ax[1].w[j], wz = ax[2].w[k];
                const auto x0 = ax[0].lo[i], x1 = ax[0].hi[i];
                const auto y0 = ax[1].lo[j], y1 = ax[1].hi[j];
                const auto z0 = ax[2].lo[k], z1 = ax[2].hi[k];
                const double c00 = src_at(x0, y0, z0) * (1 - wx) + src_at(x1, y0, z0) * wx;
                const double c10 = src_at(x0, y1, z0) * (1 - wx) + src_at(x1, y1, z0) * wx;
                const double c01 = src_at(x0, y0, z1) * (1 - wx) + src_at(x1, y0, z1) * wx;
                const double c11 = src_at(x0, y1, z1) * (1 - wx) + src_at(x1, y1, z1) * wx;
                const double c0 = c00 * (1 - wy) + c10 * wy;
                const double c1 = c01 * (1 - wy) + c11 * wy;
                out.data[n] = static_cast<T>(c0 * (1 - wz) + c1 * wz);
            }
        }
    }
    return out;
}

inline LabelMask resample_onto(const LabelMask& src, const Grid& target) {
    return LabelMask(resample_onto(src.image, target, Interp::kNearest, std::uint8_t{0}, Boundary::kPad),
                     src.class_set);
}

/// Grid with spacing `t` on every axis covering the same physical extent as `g`
/// (voxel corners aligned at the low end). Output dims round half away from zero.
inline Grid isotropic_grid(const Grid& g, double t) {
    if (!(t > 0.0) || !std::isfinite(t)) throw InvalidArgument("target spacing must be > 0");
    Grid out;
    for (int a = 0; a < 3; ++a) {
        out.dims[a] = std::max<std::int64_t>(
            1, std::lround(static_cast<double>(g.dims[a]) * g.spacing[a] / t));
        out.spacing[a] = t;
        out.origin[a] = g.origin[a] - 0.5 * g.spacing[a] + 0.5 * t;
    }
    return out;
}

inline Volume3D resample_isotropic(const Volume3D& vol, double target_spacing,
                                   Interp interp = Interp::kTrilinear) {
    return resample_onto(vol, isotropic_grid(vol.grid, target_spacing), interp, 0.0f,
                         Boundary::kClamp);
}

inline LabelMask resample_isotropic(const LabelMask& mask, double target_spacing) {
    return LabelMask(resample_onto(mask.image, isotropic_grid(mask.grid(), target_spacing),
                                   Interp::kNearest, std::uint8_t{0}, Boundary::kClamp),
                     mask.class_set);
}

/// In-plane grid reduced by `factor` (x and y); z untouched.
inline Grid downsampled_grid(const Grid& g, double factor) {
    if (!(factor >= 1.0) || !std::isfinite(factor))
        throw InvalidArgument("downsample factor must be >= 1");
    Grid out = g;
    for (int a = 0; a < 2; ++a) {
        out.dims[a] = std::max<std::int64_t>(1, std::lround(static_cast<double>(g.dims[a]) / factor));
        out.spacing[a] = g.spacing[a] * factor;
        out.origin[a] = g.origin[a] - 0.5 * g.spacing[a] + 0.5 * out.spacing[a];
    }
    return out;
}

inline Volume3D downsample_inplane(const Volume3D& vol, double factor = 3.2) {
    return resample_onto(vol, downsampled_grid(vol.grid, factor), Interp::kTrilinear, 0.0f,
                         Boundary::kClamp);
}

inline LabelMask downsample_inplane(const LabelMask& mask, double factor = 3.2) {
    return LabelMask(resample_onto(mask.image, downsampled_grid(mask.grid(), factor),
                                   Interp::kNearest, std::uint8_t{0}, Boundary::kClamp),
                     mask.class_set);
}

} // namespace vesselseg
