#pragma once

#include <cmath>
#include <cstdint>
#include <type_traits>

#include "vesselseg/core/image.hpp"
#include "vesselseg/core/resample.hpp"

namespace vesselseg {

/// Backward in-plane warp: out(i, j, k) = src(source(i, j), k) for every axial
/// slice k. Sample points more than half a voxel outside the slice get `pad`;
/// points inside that band are clamped to the edge before interpolation.
template <typename T, typename SourceFn>
Image<T> warp_inplane(const Image<T>& src, SourceFn&& source, Interp interp, T pad) {
    if constexpr (std::is_integral_v<T>) {
        if (interp != Interp::kNearest) throw InvalidArgument("label grids must be warped with nearest");
    }
    const auto nx = src.grid.dims[0], ny = src.grid.dims[1], nz = src.grid.dims[2];
    Image<T> out(src.grid, pad);
    const std::size_t plane = static_cast<std::size_t>(nx * ny);
    for (std::int64_t j = 0; j < ny; ++j) {
        for (std::int64_t i = 0; i < nx; ++i) {
            const auto [si, sj] = source(static_cast<double>(i), static_cast<double>(j));
            if (!(si >= -0.5 && si < nx - 0.5 && sj >= -0.5 && sj < ny - 0.5)) continue;
            const double ci = std::clamp(si, 0.0, static_cast<double>(nx - 1));
            const double cj = std::clamp(sj, 0.0, static_cast<double>(ny - 1));
            const std::size_t dst = static_cast<std::size_t>(j * nx + i);
            if (interp == Interp::kNearest) {
                const auto ni = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(ci + 0.5)), nx - 1);
                const auto nj = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(cj + 0.5)), ny - 1);
                const std::size_t s = static_cast<std::size_t>(nj * nx + ni);
                for (std::int64_t k = 0; k < nz; ++k) out.data[k * plane + dst] = src.data[k * plane + s];
                continue;
            }
            const auto i0 = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(ci)), nx - 1);
            const auto j0 = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(cj)), ny - 1);
            const auto i1 = std::min<std::int64_t>(i0 + 1, nx - 1);
            const auto j1 = std::min<std::int64_t>(j0 + 1, ny - 1);
            const double wi = ci - static_cast<double>(i0), wj = cj - static_cast<double>(j0);
            const std::size_t s00 = static_cast<std::size_t>(j0 * nx + i0);
            const std::size_t s10 = static_cast<std::size_t>(j0 * nx + i1);
            const std::size_t s01 = static_cast<std::size_t>(j1 * nx + i0);
            const std::size_t s11 = static_cast<std::size_t>(j1 * nx + i1);
            for (std::int64_t k = 0; k < nz; ++k) {
                const T* p = src.data.data() + k * plane;
                const double a = static_cast<double>(p[s00]) * (1.0 - wi) + static_cast<double>(p[s10]) * wi;
                const double b = static_cast<double>(p[s01]) * (1.0 - wi) + static_cast<double>(p[s11]) * wi;
                out.data[k * plane + dst] = static_cast<T>(a * (1.0 - wj) + b * wj);
            }
        }
    }
    return out;
}

} // namespace vesselseg
