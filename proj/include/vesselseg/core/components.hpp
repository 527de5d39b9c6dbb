#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <vector>

#include "vesselseg/core/image.hpp"

namespace vesselseg {

enum class Connectivity { k6 = 6, k26 = 26 };

namespace detail {

inline std::vector<Index3> neighbour_offsets(Connectivity c) {
    std::vector<Index3> out;
    for (std::int64_t dz = -1; dz <= 1; ++dz)
        for (std::int64_t dy = -1; dy <= 1; ++dy)
            for (std::int64_t dx = -1; dx <= 1; ++dx) {
                const auto manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (manhattan == 0) continue;
                if (c == Connectivity::k6 && manhattan != 1) continue;
                out.push_back({dx, dy, dz});
            }
    return out;
}

} // namespace detail

/// Component labelling result: ids are 1-based in scan order of first voxel, 0 = background.
struct ComponentLabels {
    Image<std::uint32_t> ids;
    std::vector<std::size_t> sizes; ///< sizes[id - 1]
};

inline ComponentLabels label_components(const LabelMask& mask, Connectivity conn) {
    const Grid& g = mask.grid();
    ComponentLabels out{Image<std::uint32_t>(g, 0u), {}};
    const auto offsets = detail::neighbour_offsets(conn);
    std::vector<std::size_t> stack;
    std::uint32_t next = 0;
    for (std::int64_t k = 0; k < g.dims[2]; ++k)
        for (std::int64_t j = 0; j < g.dims[1]; ++j)
            for (std::int64_t i = 0; i < g.dims[0]; ++i) {
                const auto seed = g.linear(i, j, k);
                if (mask.data()[seed] == 0 || out.ids.data[seed] != 0) continue;
                const std::uint32_t id = ++next;
                std::size_t size = 0;
                out.ids.data[seed] = id;
                stack.push_back(seed);
                while (!stack.empty()) {
                    const auto v = stack.back();
                    stack.pop_back();
                    ++size;
                    const auto vi = static_cast<std::int64_t>(v % g.dims[0]);
                    const auto vj = static_cast<std::int64_t>((v / g.dims[0]) % g.dims[1]);
                    const auto vk = static_cast<std::int64_t>(v / (g.dims[0] * g.dims[1]));
                    for (const auto& o : offsets) {
                        const auto ni = vi + o[0], nj = vj + o[1], nk = vk + o[2];
                        if (!g.contains(ni, nj, nk)) continue;
                        const auto n = g.linear(ni, nj, nk);
                        if (mask.data()[n] == 0 || out.ids.data[n] != 0) continue;
                        out.ids.data[n] = id;
                        stack.push_back(n);
                    }
                }
                out.sizes.push_back(size);
            }
    return out;
}

/// Foreground components as binary masks, largest first, at most `keep_k`.
/// Equal sizes are ordered by their lowest linear voxel index.
inline std::vector<LabelMask> connected_components(const LabelMask& mask, Connectivity conn,
                                                   std::size_t keep_k) {
    const auto labels = label_components(mask, conn);
    std::vector<std::uint32_t> order(labels.sizes.size());
    for (std::size_t n = 0; n < order.size(); ++n) order[n] = static_cast<std::uint32_t>(n + 1);
    // ids are assigned in scan order, so a lower id means a lower first voxel index
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
        return labels.sizes[a - 1] > labels.sizes[b - 1];
    });
    if (order.size() > keep_k) order.resize(keep_k);
    std::vector<LabelMask> out;
    out.reserve(order.size());
    for (auto id : order) {
        LabelMask m(mask.grid(), binary_classes());
        for (std::size_t n = 0; n < m.size(); ++n) m.data()[n] = labels.ids.data[n] == id ? 1 : 0;
        out.push_back(std::move(m));
    }
    return out;
}

/// Number of 8-connected foreground components within axial slice k.
inline std::size_t count_slice_components(const LabelMask& mask, std::int64_t k) {
    const Grid& g = mask.grid();
    const auto nx = g.dims[0], ny = g.dims[1];
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(nx * ny), 0);
    std::vector<std::int64_t> stack;
    std::size_t count = 0;
    for (std::int64_t j = 0; j < ny; ++j)
        for (std::int64_t i = 0; i < nx; ++i) {
            if (mask.at(i, j, k) == 0 || seen[j * nx + i]) continue;
            ++count;
            seen[j * nx + i] = 1;
            stack.push_back(j * nx + i);
            while (!stack.empty()) {
                const auto v = stack.back();
                stack.pop_back();
                const auto vi = v % nx, vj = v / nx;
                for (std::int64_t dj = -1; dj <= 1; ++dj)
                    for (std::int64_t di = -1; di <= 1; ++di) {
                        const auto ni = vi + di, nj = vj + dj;
                        if (ni < 0 || nj < 0 || ni >= nx || nj >= ny) continue;
                        if (mask.at(ni, nj, k) == 0 || seen[nj * nx + ni]) continue;
                        seen[nj * nx + ni] = 1;
                        stack.push_back(nj * nx + ni);
                    }
            }
        }
    return count;
}

/// Tightest box around the foreground, grown by `margin` and clamped to the grid.
inline BoundingBox mask_to_bounding_box(const LabelMask& mask, std::int64_t margin = 0,
                                        std::string frame = {}) {
    const Grid& g = mask.grid();
    Index3 lo{std::numeric_limits<std::int64_t>::max(), std::numeric_limits<std::int64_t>::max(),
              std::numeric_limits<std::int64_t>::max()};
    Index3 hi{-1, -1, -1};
    std::size_t n = 0;
    for (std::int64_t k = 0; k < g.dims[2]; ++k)
        for (std::int64_t j = 0; j < g.dims[1]; ++j)
            for (std::int64_t i = 0; i < g.dims[0]; ++i, ++n) {
                if (mask.data()[n] == 0) continue;
                const Index3 p{i, j, k};
                for (int a = 0; a < 3; ++a) {
                    lo[a] = std::min(lo[a], p[a]);
                    hi[a] = std::max(hi[a], p[a]);
                }
            }
    if (hi[0] < 0) throw EmptyMaskError("mask_to_bounding_box: mask has no foreground");
    BoundingBox box;
    box.frame = std::move(frame);
    for (int a = 0; a < 3; ++a) {
        box.lo[a] = std::max<std::int64_t>(0, lo[a] - margin);
        box.hi[a] = std::min<std::int64_t>(g.dims[a] - 1, hi[a] + margin);
    }
    return box;
}

} // namespace vesselseg
