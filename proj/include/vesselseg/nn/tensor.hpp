#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vesselseg/core/errors.hpp"
#include "vesselseg/core/image.hpp"

namespace vesselseg::nn {

/// Channels x spatial feature map, layout [c][z][y][x].
template <typename T>
struct Tensor {
    int channels = 0;
    Index3 dims{0, 0, 0}; ///< (x, y, z)
    std::vector<T> data;

    Tensor() = default;
    Tensor(int c, const Index3& d, T fill = T{})
        : channels(c), dims(d), data(static_cast<std::size_t>(c) * static_cast<std::size_t>(d[0] * d[1] * d[2]), fill) {}

    std::size_t spatial() const { return static_cast<std::size_t>(dims[0] * dims[1] * dims[2]); }
    std::span<T> channel(int c) { return {data.data() + static_cast<std::size_t>(c) * spatial(), spatial()}; }
    std::span<const T> channel(int c) const {
        return {data.data() + static_cast<std::size_t>(c) * spatial(), spatial()};
    }
    T* ptr(int c = 0) { return data.data() + static_cast<std::size_t>(c) * spatial(); }
    const T* ptr(int c = 0) const { return data.data() + static_cast<std::size_t>(c) * spatial(); }

    bool same_shape(const Tensor& o) const { return channels == o.channels && dims == o.dims; }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (!a.same_shape(b)) throw InvalidArgument(std::string(what) + ": tensor shape mismatch");
}

} // namespace vesselseg::nn
