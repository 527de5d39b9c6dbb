#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include "vesselseg/core/image.hpp"
#include "vesselseg/rng.hpp"

namespace vstest {

using namespace vesselseg;

inline Grid cube_grid(std::int64_t nx, std::int64_t ny, std::int64_t nz, Vec3 spacing = {1.0, 1.0, 1.0},
                      Vec3 origin = {0.0, 0.0, 0.0}) {
    return Grid{{nx, ny, nz}, spacing, origin};
}

/// Foreground with probability p; labels drawn uniformly from class_set \ {0}.
inline LabelMask random_mask(Rng& rng, const Grid& g, std::vector<std::uint8_t> classes, double p) {
    LabelMask m(g, classes);
    std::bernoulli_distribution fg(p);
    std::uniform_int_distribution<std::size_t> pick(1, classes.size() - 1);
    for (auto& v : m.data()) v = fg(rng) ? classes[pick(rng)] : 0;
    return m;
}

inline Volume3D random_volume(Rng& rng, const Grid& g, float lo = -1000.0f, float hi = 1000.0f) {
    Volume3D v(g);
    std::uniform_real_distribution<float> d(lo, hi);
    for (auto& x : v.data) x = d(rng);
    return v;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("vesselseg_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace vstest
