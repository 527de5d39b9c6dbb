#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "vesselseg/core/image.hpp"

namespace vesselseg {

/// HU used for crop/warp samples that fall outside the source (air).
inline constexpr float kPadHu = -1024.0f;

template <typename T>
struct Cropped {
    Image<T> image;
    /// Where the crop sits in the source frame. May extend beyond the frame;
    /// only the overlapping voxels came from the source.
    BoundingBox placement;
};

namespace detail {
inline std::int64_t floor_div2(std::int64_t v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); }
} // namespace detail

/// In-plane window of `out_xy` voxels centred on the box; z follows the box.
inline BoundingBox roi_window(const BoundingBox& box, std::int64_t out_xy) {
    BoundingBox w;
    w.frame = box.frame;
    for (int a = 0; a < 2; ++a) {
        w.lo[a] = detail::floor_div2(box.lo[a] + box.hi[a] + 1 - out_xy);
        w.hi[a] = w.lo[a] + out_xy - 1;
    }
    w.lo[2] = box.lo[2];
    w.hi[2] = box.hi[2];
    return w;
}

/// Copy the `window` region of `src` (window may overhang the frame).
template <typename T>
Image<T> extract_window(const Image<T>& src, const BoundingBox& window, T pad) {
    Grid g;
    g.spacing = src.grid.spacing;
    for (int a = 0; a < 3; ++a) g.dims[a] = window.extent(a);
    g.origin = src.grid.physical(static_cast<double>(window.lo[0]), static_cast<double>(window.lo[1]),
                                 static_cast<double>(window.lo[2]));
    Image<T> out(g, pad);
    for (std::int64_t k = 0; k < g.dims[2]; ++k) {
        const auto sk = window.lo[2] + k;
        if (sk < 0 || sk >= src.grid.dims[2]) continue;
        for (std::int64_t j = 0; j < g.dims[1]; ++j) {
            const auto sj = window.lo[1] + j;
            if (sj < 0 || sj >= src.grid.dims[1]) continue;
            for (std::int64_t i = 0; i < g.dims[0]; ++i) {
                const auto si = window.lo[0] + i;
                if (si < 0 || si >= src.grid.dims[0]) continue;
                out.at(i, j, k) = src.at(si, sj, sk);
            }
        }
    }
    return out;
}

/// Crop an out_xy x out_xy x Z region centred in-plane on `box`.
template <typename T>
Cropped<T> crop_roi(const Image<T>& src, const BoundingBox& box, std::int64_t out_xy, T pad) {
    if (out_xy < 1) throw InvalidArgument("crop_roi: out_xy must be >= 1");
    if (box.hi[2] < box.lo[2]) throw InvalidArgument("crop_roi: box has zero z-extent");
    box.validate(src.grid.dims);
    const BoundingBox window = roi_window(box, out_xy);
    return {extract_window(src, window, pad), window};
}

inline Cropped<float> crop_roi(const Volume3D& src, const BoundingBox& box, std::int64_t out_xy = 144) {
    return crop_roi(src, box, out_xy, kPadHu);
}

inline std::pair<LabelMask, BoundingBox> crop_roi(const LabelMask& src, const BoundingBox& box,
                                                  std::int64_t out_xy = 144) {
    auto c = crop_roi(src.image, box, out_xy, std::uint8_t{0});
    return {LabelMask(std::move(c.image), src.class_set), c.placement};
}

/// Write the in-frame part of `part` into `canvas` at `placement`.
template <typename T>
void paste(Image<T>& canvas, const Image<T>& part, const BoundingBox& placement) {
    for (int a = 0; a < 3; ++a)
        if (placement.extent(a) != part.grid.dims[a])
            throw InvalidArgument("paste: placement extent does not match part dims");
    for (std::int64_t k = 0; k < part.grid.dims[2]; ++k) {
        const auto ck = placement.lo[2] + k;
        if (ck < 0 || ck >= canvas.grid.dims[2]) continue;
        for (std::int64_t j = 0; j < part.grid.dims[1]; ++j) {
            const auto cj = placement.lo[1] + j;
            if (cj < 0 || cj >= canvas.grid.dims[1]) continue;
            for (std::int64_t i = 0; i < part.grid.dims[0]; ++i) {
                const auto ci = placement.lo[0] + i;
                if (ci < 0 || ci >= canvas.grid.dims[0]) continue;
                canvas.at(ci, cj, ck) = part.at(i, j, k);
            }
        }
    }
}

/// True when `placement` overlaps the frame of size `dims` at all.
inline bool overlaps_frame(const BoundingBox& placement, const Index3& dims) {
    for (int a = 0; a < 3; ++a)
        if (placement.hi[a] < 0 || placement.lo[a] >= dims[a] || placement.lo[a] > placement.hi[a])
            return false;
    return true;
}

} // namespace vesselseg
