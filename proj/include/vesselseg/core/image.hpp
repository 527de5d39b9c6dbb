#pragma once

// Volumetric carriers shared by every module.
//
// Axis order is fixed: x fastest, then y, then z (slowest). Voxel (i, j, k)
// has its centre at origin + (i*sx, j*sy, k*sz) in millimetres; orientation
// is always axis-aligned and positive (readers flip axes to reach it).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "vesselseg/core/errors.hpp"

namespace vesselseg {

using Index3 = std::array<std::int64_t, 3>;
using Vec3 = std::array<double, 3>;

struct Grid {
    Index3 dims{1, 1, 1};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims[0] * dims[1] * dims[2]);
    }

    std::size_t linear(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return static_cast<std::size_t>((k * dims[1] + j) * dims[0] + i);
    }

    bool contains(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
    }

    Vec3 physical(double i, double j, double k) const {
        return {origin[0] + i * spacing[0], origin[1] + j * spacing[1], origin[2] + k * spacing[2]};
    }

    Vec3 continuous_index(const Vec3& p) const {
        return {(p[0] - origin[0]) / spacing[0], (p[1] - origin[1]) / spacing[1],
                (p[2] - origin[2]) / spacing[2]};
    }

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            if (dims[a] < 1) throw InvalidArgument("grid dims must be >= 1");
            if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
                throw InvalidArgument("grid spacing must be finite and > 0");
            if (!std::isfinite(origin[a])) throw InvalidArgument("grid origin must be finite");
        }
    }

    friend bool operator==(const Grid&, const Grid&) = default;
};

/// Same dims and spacing/origin within `tol` millimetres.
inline bool same_frame(const Grid& a, const Grid& b, double tol = 1e-6) {
    for (int d = 0; d < 3; ++d) {
        if (a.dims[d] != b.dims[d]) return false;
        if (std::abs(a.spacing[d] - b.spacing[d]) > tol) return false;
        if (std::abs(a.origin[d] - b.origin[d]) > tol) return false;
    }
    return true;
}

template <typename T>
struct Image {
    using value_type = T;

    Grid grid;
    std::vector<T> data;

    Image() = default;
    explicit Image(const Grid& g, T fill = T{}) : grid(g), data(g.voxel_count(), fill) {
        grid.validate();
    }
    Image(const Grid& g, std::vector<T> values) : grid(g), data(std::move(values)) {
        grid.validate();
        if (data.size() != grid.voxel_count())
            throw InvalidArgument("image data size does not match dims");
    }

    const Index3& dims() const { return grid.dims; }
    std::size_t size() const { return data.size(); }

    T& at(std::int64_t i, std::int64_t j, std::int64_t k) { return data[grid.linear(i, j, k)]; }
    const T& at(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return data[grid.linear(i, j, k)];
    }

    friend bool operator==(const Image&, const Image&) = default;
};

/// HU scalar field.
using Volume3D = Image<float>;

enum Label : std::uint8_t { kBackground = 0, kLumen = 1, kWallIlt = 2 };

/// Label grid with a declared vocabulary. Binary masks use {0, 1}.
struct LabelMask {
    Image<std::uint8_t> image;
    std::vector<std::uint8_t> class_set{0, 1};

    LabelMask() = default;
    LabelMask(const Grid& g, std::vector<std::uint8_t> classes, std::uint8_t fill = 0)
        : image(g, fill), class_set(std::move(classes)) {}
    LabelMask(Image<std::uint8_t> img, std::vector<std::uint8_t> classes)
        : image(std::move(img)), class_set(std::move(classes)) {}

    const Grid& grid() const { return image.grid; }
    const Index3& dims() const { return image.grid.dims; }
    std::vector<std::uint8_t>& data() { return image.data; }
    const std::vector<std::uint8_t>& data() const { return image.data; }
    std::size_t size() const { return image.data.size(); }

    std::uint8_t& at(std::int64_t i, std::int64_t j, std::int64_t k) { return image.at(i, j, k); }
    std::uint8_t at(std::int64_t i, std::int64_t j, std::int64_t k) const { return image.at(i, j, k); }

    bool is_binary() const {
        return class_set == std::vector<std::uint8_t>{0, 1};
    }

    std::size_t count_nonzero() const {
        return static_cast<std::size_t>(
            std::count_if(image.data.begin(), image.data.end(), [](auto v) { return v != 0; }));
    }

    /// Throws when a voxel carries a label outside class_set.
    void validate() const {
        std::array<bool, 256> allowed{};
        for (auto c : class_set) allowed[c] = true;
        for (auto v : image.data)
            if (!allowed[v])
                throw InvalidArgument("label " + std::to_string(int(v)) + " not in class_set");
    }

    friend bool operator==(const LabelMask&, const LabelMask&) = default;
};

inline std::vector<std::uint8_t> binary_classes() { return {0, 1}; }
inline std::vector<std::uint8_t> aorta_classes() { return {0, 1, 2}; }

/// Foreground (any non-zero label) as a {0,1} mask.
inline LabelMask binarize(const LabelMask& m) {
    LabelMask out(m.grid(), binary_classes());
    for (std::size_t n = 0; n < m.size(); ++n) out.data()[n] = m.data()[n] != 0 ? 1 : 0;
    return out;
}

/// Voxels equal to `label` as a {0,1} mask.
inline LabelMask select_label(const LabelMask& m, std::uint8_t label) {
    LabelMask out(m.grid(), binary_classes());
    for (std::size_t n = 0; n < m.size(); ++n) out.data()[n] = m.data()[n] == label ? 1 : 0;
    return out;
}

/// Inclusive voxel-index box. `frame` names the grid it indexes.
struct BoundingBox {
    Index3 lo{0, 0, 0};
    Index3 hi{0, 0, 0};
    std::string frame;

    std::int64_t extent(int axis) const { return hi[axis] - lo[axis] + 1; }

    bool contains(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return i >= lo[0] && i <= hi[0] && j >= lo[1] && j <= hi[1] && k >= lo[2] && k <= hi[2];
    }

    bool contains(const BoundingBox& o) const {
        return contains(o.lo[0], o.lo[1], o.lo[2]) && contains(o.hi[0], o.hi[1], o.hi[2]);
    }

    void validate(const Index3& dims) const {
        for (int a = 0; a < 3; ++a) {
            if (lo[a] > hi[a]) throw InvalidArgument("bounding box lo > hi");
            if (lo[a] < 0 || hi[a] >= dims[a])
                throw InvalidArgument("bounding box outside frame dims");
        }
    }

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

} // namespace vesselseg
