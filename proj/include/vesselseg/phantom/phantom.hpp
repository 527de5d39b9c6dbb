#pragma once

// Synthetic paired CTA / non-contrast CT phantoms with analytic label masks.
//
// Geometry (all millimetres, physical frame of the CTA grid):
//  - descending aorta: vertical tube at (desc_x, desc_y) with an aneurysmal
//    bulge of the outer wall, r_o(z) = r_o + A exp(-(z - z0)^2 / (2 sz^2));
//    inside the bulge the lumen drifts towards `crescent_direction_deg`,
//    leaving a crescent of thrombus on the opposite side;
//  - CTA only: a semicircular arch in the (y, z) plane joining the top of the
//    descending tube to an ascending limb, both with the base radii.
// Labels are rasterised by voxel-centre inclusion: 1 inside a lumen, 2 inside
// an outer wall but not a lumen, 0 elsewhere.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "vesselseg/core/image.hpp"
#include "vesselseg/rng.hpp"

namespace vesselseg {

struct TissueHu {
    double mean = 0.0;
    double std = 0.0; ///< extra per-tissue texture noise on top of noise_sigma
};

struct HuTable {
    TissueHu air{-1000.0};
    TissueHu soft_tissue{30.0};
    TissueHu thrombus{40.0};
    TissueHu wall{50.0};
    TissueHu lumen_contrast{300.0};
    TissueHu lumen_noncontrast{45.0};
    TissueHu bone{700.0};
};

enum class DistractorKind { kBone, kOrgan };
enum class DistractorShape { kCylinder, kEllipsoid };

/// Non-aortic primitive. Cylinders run along z through the whole volume.
struct Distractor {
    DistractorKind kind = DistractorKind::kBone;
    DistractorShape shape = DistractorShape::kCylinder;
    Vec3 centre{0, 0, 0};
    Vec3 radii{10, 10, 10};
    double hu = 0.0; ///< used for organs; bones use the table's bone HU
};

struct PhantomSpec {
    Grid cta_grid{{256, 256, 128}, {0.8, 0.8, 1.25}, {0.0, 0.0, 0.0}};
    double nc_z_spacing = 2.5;
    double nc_z_extent = 90.0; ///< non-contrast scans cover z in [origin, origin + extent)

    double desc_x = 102.0, desc_y = 120.0;
    double lumen_radius = 11.0;
    double lumen_taper = 0.0; ///< mm of lumen radius change per mm of z
    double outer_radius = 14.0;
    double wall_thickness = 2.0;
    double bulge_amplitude = 18.0;
    double bulge_z = 40.0;
    double bulge_sigma_z = 15.0;
    double crescent_direction_deg = 200.0;
    double crescent_eccentricity = 0.6; ///< lumen offset / bulge, in [0, 1]

    bool arch = true;
    double arch_z = 105.0;     ///< z of the arch circle centre (top of both limbs)
    double arch_radius = 25.0; ///< half the limb separation along -y
    double ascending_bottom_z = 85.0;

    double body_x = 102.0, body_y = 102.0;
    double body_semi_x = 95.0, body_semi_y = 80.0;
    std::vector<Distractor> distractors{
        {DistractorKind::kBone, DistractorShape::kCylinder, {102.0, 170.0, 0.0}, {12.0, 12.0, 0.0}, 0.0},
        {DistractorKind::kOrgan, DistractorShape::kEllipsoid, {165.0, 140.0, 55.0}, {18.0, 22.0, 40.0}, 60.0},
    };

    HuTable hu;
    double noise_sigma = 20.0;
    std::uint64_t seed = 1;

    double lumen_radius_at(double z) const { return lumen_radius + lumen_taper * z; }

    double bulge_at(double z) const {
        const double d = z - bulge_z;
        return bulge_amplitude * std::exp(-d * d / (2.0 * bulge_sigma_z * bulge_sigma_z));
    }

    double outer_radius_at(double z) const { return outer_radius + bulge_at(z); }

    Grid nc_grid() const {
        Grid g = cta_grid;
        g.spacing[2] = nc_z_spacing;
        g.dims[2] = std::max<std::int64_t>(1, std::lround(nc_z_extent / nc_z_spacing));
        g.origin[2] = cta_grid.origin[2] - 0.5 * cta_grid.spacing[2] + 0.5 * nc_z_spacing;
        return g;
    }

    void validate() const {
        try {
            cta_grid.validate();
        } catch (const InvalidArgument& e) {
            throw InvalidSpec(std::string("phantom grid: ") + e.what());
        }
        if (!(nc_z_spacing > 0.0) || !(nc_z_extent > 0.0)) throw InvalidSpec("phantom nc spacing/extent must be > 0");
        if (!(wall_thickness >= 0.0)) throw InvalidSpec("phantom wall thickness must be >= 0");
        if (!(crescent_eccentricity >= 0.0 && crescent_eccentricity <= 1.0))
            throw InvalidSpec("phantom crescent eccentricity must be in [0, 1]");
        if (!(bulge_amplitude >= 0.0) || !(bulge_sigma_z > 0.0)) throw InvalidSpec("phantom bulge must be >= 0");
        if (!(noise_sigma >= 0.0)) throw InvalidSpec("phantom noise sigma must be >= 0");
        const double z0 = cta_grid.origin[2] - cta_grid.spacing[2];
        const double z1 = cta_grid.origin[2] + cta_grid.spacing[2] * static_cast<double>(cta_grid.dims[2]);
        for (double z = z0; z <= z1; z += 0.25 * cta_grid.spacing[2]) {
            const double rl = lumen_radius_at(z);
            if (!(rl > 0.0)) throw InvalidSpec("phantom lumen radius must be > 0 for all z");
            // lumen plus its offset must stay inside the outer wall minus the wall shell
            const double reach = rl + crescent_eccentricity * bulge_at(z) + wall_thickness;
            if (reach > outer_radius_at(z) + 1e-12)
                throw InvalidSpec("phantom lumen (plus wall) exceeds outer radius at z=" + std::to_string(z));
        }
        if (arch && !(arch_radius > outer_radius)) throw InvalidSpec("phantom arch radius must exceed outer radius");
        for (const auto* t : {&hu.air, &hu.soft_tissue, &hu.thrombus, &hu.wall, &hu.lumen_contrast,
                              &hu.lumen_noncontrast, &hu.bone})
            if (!std::isfinite(t->mean) || !(t->std >= 0.0)) throw InvalidSpec("phantom HU table entries must be finite");
    }
};

enum class Tissue : std::uint8_t { kAir, kSoft, kBone, kOrgan, kThrombus, kWall, kLumen };

struct VoxelClass {
    std::uint8_t label = 0;
    Tissue tissue = Tissue::kAir;
    double organ_hu = 0.0;
};

namespace detail {

// Distance-based membership for one tube cross-section.
struct TubeHit {
    bool in_outer = false;
    bool in_lumen = false;
    bool in_shell = false;
};

inline TubeHit tube_hit(double d_outer, double d_lumen, double r_outer, double r_lumen, double wall) {
    TubeHit h;
    h.in_outer = d_outer <= r_outer;
    h.in_lumen = d_lumen <= r_lumen;
    h.in_shell = h.in_outer && !h.in_lumen && d_outer > r_outer - wall;
    return h;
}

} // namespace detail

/// Analytic classification of a physical point. `with_arch` toggles the
/// CTA-only arch and ascending limb.
inline VoxelClass classify_point(const PhantomSpec& s, double x, double y, double z, bool with_arch) {
    const double r_l = s.lumen_radius_at(z);
    const bool arch = with_arch && s.arch;
    detail::TubeHit hit;
    auto merge = [&](const detail::TubeHit& h) {
        hit.in_outer |= h.in_outer;
        hit.in_lumen |= h.in_lumen;
        hit.in_shell |= h.in_shell;
    };
    if (!arch || z <= s.arch_z) {
        const double phi = s.crescent_direction_deg * std::numbers::pi / 180.0;
        const double off = s.crescent_eccentricity * s.bulge_at(z);
        const double d_o = std::hypot(x - s.desc_x, y - s.desc_y);
        const double d_l = std::hypot(x - s.desc_x - off * std::cos(phi), y - s.desc_y - off * std::sin(phi));
        merge(detail::tube_hit(d_o, d_l, s.outer_radius_at(z), r_l, s.wall_thickness));
    }
    if (arch) {
        const double asc_y = s.desc_y - 2.0 * s.arch_radius;
        const double r_l_arch = s.lumen_radius_at(s.arch_z);
        if (z <= s.arch_z && z >= s.ascending_bottom_z) {
            const double d = std::hypot(x - s.desc_x, y - asc_y);
            merge(detail::tube_hit(d, d, s.outer_radius, r_l_arch, s.wall_thickness));
        }
        if (z > s.arch_z) {
            const double mid_y = s.desc_y - s.arch_radius;
            const double rho = std::hypot(y - mid_y, z - s.arch_z);
            const double d = std::hypot(rho - s.arch_radius, x - s.desc_x);
            merge(detail::tube_hit(d, d, s.outer_radius, r_l_arch, s.wall_thickness));
        }
    }
    VoxelClass c;
    if (hit.in_lumen) {
        c.label = kLumen;
        c.tissue = Tissue::kLumen;
        return c;
    }
    if (hit.in_outer) {
        c.label = kWallIlt;
        c.tissue = hit.in_shell ? Tissue::kWall : Tissue::kThrombus;
        return c;
    }
    for (const auto& d : s.distractors) {
        const double ux = (x - d.centre[0]) / d.radii[0];
        const double uy = (y - d.centre[1]) / d.radii[1];
        double q = ux * ux + uy * uy;
        if (d.shape == DistractorShape::kEllipsoid) {
            const double uz = (z - d.centre[2]) / d.radii[2];
            q += uz * uz;
        }
        if (q <= 1.0) {
            c.tissue = d.kind == DistractorKind::kBone ? Tissue::kBone : Tissue::kOrgan;
            c.organ_hu = d.hu;
            return c;
        }
    }
    const double bx = (x - s.body_x) / s.body_semi_x, by = (y - s.body_y) / s.body_semi_y;
    c.tissue = bx * bx + by * by <= 1.0 ? Tissue::kSoft : Tissue::kAir;
    return c;
}

struct PhantomCase {
    Volume3D cta;
    LabelMask cta_gt; ///< {0, 1, 2} on the CTA grid
    Volume3D nc;
    LabelMask nc_gt; ///< {0, 1, 2} on the non-contrast grid (no arch)
};

namespace detail {

inline void render(const PhantomSpec& s, const Grid& g, bool contrast, bool with_arch, std::uint64_t stream,
                   Volume3D& vol, LabelMask& gt) {
    vol = Volume3D(g, 0.0f);
    gt = LabelMask(g, aorta_classes());
    Rng rng(stream);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto& h = s.hu;
    std::size_t n = 0;
    for (std::int64_t k = 0; k < g.dims[2]; ++k)
        for (std::int64_t j = 0; j < g.dims[1]; ++j)
            for (std::int64_t i = 0; i < g.dims[0]; ++i, ++n) {
                const auto p = g.physical(static_cast<double>(i), static_cast<double>(j), static_cast<double>(k));
                const auto c = classify_point(s, p[0], p[1], p[2], with_arch);
                TissueHu t;
                switch (c.tissue) {
                case Tissue::kAir: t = h.air; break;
                case Tissue::kSoft: t = h.soft_tissue; break;
                case Tissue::kBone: t = h.bone; break;
                case Tissue::kOrgan: t = {c.organ_hu, h.soft_tissue.std}; break;
                case Tissue::kThrombus: t = h.thrombus; break;
                case Tissue::kWall: t = h.wall; break;
                case Tissue::kLumen: t = contrast ? h.lumen_contrast : h.lumen_noncontrast; break;
                }
                // draw both normals unconditionally so the stream layout is geometry independent
                const double n1 = normal(rng), n2 = normal(rng);
                vol.data[n] = static_cast<float>(t.mean + t.std * n1 + s.noise_sigma * n2);
                gt.data()[n] = c.label;
            }
}

} // namespace detail

/// Render the paired CTA (with arch, contrast lumen) and non-contrast scan
/// (descending/abdominal only, coarser z) plus their label masks.
inline PhantomCase generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    PhantomCase out;
    detail::render(spec, spec.cta_grid, true, true, stream_seed(spec.seed, "phantom-cta"), out.cta, out.cta_gt);
    detail::render(spec, spec.nc_grid(), false, false, stream_seed(spec.seed, "phantom-nc"), out.nc, out.nc_gt);
    return out;
}

/// CTA only (skips the non-contrast render).
inline std::pair<Volume3D, LabelMask> generate_cta(const PhantomSpec& spec) {
    spec.validate();
    std::pair<Volume3D, LabelMask> out;
    detail::render(spec, spec.cta_grid, true, true, stream_seed(spec.seed, "phantom-cta"), out.first, out.second);
    return out;
}

/// Default anatomy on a small grid centred on the descending aorta: 32^3 at
/// 2.5 mm covering z in [0, 80) mm, which holds the aneurysmal bulge. Used for
/// ROI-sized training runs.
inline PhantomSpec toy_roi_spec(std::int64_t n = 32, double spacing = 2.5) {
    PhantomSpec s;
    const double half = 0.5 * static_cast<double>(n - 1) * spacing;
    s.cta_grid = Grid{{n, n, n}, {spacing, spacing, spacing}, {s.desc_x - half, s.desc_y - half, 0.5 * spacing}};
    s.arch = false;
    s.nc_z_spacing = 2.0 * spacing;
    s.nc_z_extent = static_cast<double>(n) * spacing;
    return s;
}

/// Per-patient geometric variation applied by generate_cohort_specs.
struct PhantomJitter {
    double centre_mm = 6.0;        ///< uniform +/- on the aortic centre (x, y)
    double radius_fraction = 0.10; ///< uniform +/- relative change of lumen/outer radii
    double bulge_min = 0.5, bulge_max = 1.2; ///< multiplier on bulge amplitude
    double bulge_z_mm = 10.0;
    bool random_crescent_direction = true;
};

struct CohortPatient {
    std::string patient_id;
    PhantomSpec spec;
};

inline std::string patient_id_for(std::size_t index) {
    std::string n = std::to_string(index + 1);
    return "P" + std::string(n.size() < 3 ? 3 - n.size() : 0, '0') + n;
}

/// n geometry-varied specs with distinct ids P001, P002, ...
inline std::vector<CohortPatient> generate_cohort_specs(std::size_t n, const PhantomSpec& base,
                                                        const PhantomJitter& jitter, std::uint64_t seed) {
    if (n < 1) throw InvalidArgument("generate_cohort: n must be >= 1");
    std::vector<CohortPatient> out;
    out.reserve(n);
    for (std::size_t p = 0; p < n; ++p) {
        Rng rng = make_stream(seed, "cohort", p);
        PhantomSpec s = base;
        const double dx = uniform(rng, -jitter.centre_mm, jitter.centre_mm);
        const double dy = uniform(rng, -jitter.centre_mm, jitter.centre_mm);
        s.desc_x += dx;
        s.desc_y += dy;
        const double rf = 1.0 + uniform(rng, -jitter.radius_fraction, jitter.radius_fraction);
        s.lumen_radius *= rf;
        s.outer_radius *= rf;
        s.bulge_amplitude *= uniform(rng, jitter.bulge_min, jitter.bulge_max);
        s.bulge_z += uniform(rng, -jitter.bulge_z_mm, jitter.bulge_z_mm);
        const double dir = uniform(rng, 0.0, 360.0);
        if (jitter.random_crescent_direction) s.crescent_direction_deg = dir;
        s.seed = stream_seed(seed, "phantom-noise", p);
        s.validate();
        out.push_back({patient_id_for(p), std::move(s)});
    }
    return out;
}

} // namespace vesselseg
