#pragma once

// Two-stage cascade. Stage 1 finds the aorta on a coarse in-plane grid and
// turns it into region boxes; stage 2 segments a fixed-size crop around each
// box on the isotropic high-resolution grid; the crops are merged and mapped
// back onto the scan grid.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vesselseg/core/components.hpp"
#include "vesselseg/core/resample.hpp"
#include "vesselseg/core/roi.hpp"
#include "vesselseg/pipeline/model.hpp"

namespace vesselseg {

enum class Modality { kContrast, kNonContrast };
enum class Region { kArch, kDescending };

inline std::string modality_name(Modality m) { return m == Modality::kContrast ? "contrast" : "non_contrast"; }
inline std::string region_name(Region r) { return r == Region::kArch ? "arch" : "descending"; }

inline Modality parse_modality(const std::string& s) {
    if (s == "contrast" || s == "cta") return Modality::kContrast;
    if (s == "non_contrast" || s == "nc" || s == "non-contrast") return Modality::kNonContrast;
    throw InvalidArgument("unknown modality '" + s + "'");
}

inline Region parse_region(const std::string& s) {
    if (s == "arch") return Region::kArch;
    if (s == "descending") return Region::kDescending;
    throw InvalidArgument("unknown region '" + s + "'");
}

struct PipelineConfig {
    double stage2_spacing = 0.0;        ///< mm; 0 -> the scan's in-plane spacing
    std::int64_t lowres_inplane = 160;  ///< stage-1 in-plane size
    std::int64_t roi_xy = 144;          ///< stage-2 crop size
    std::int64_t box_margin = 12;       ///< stage-1 voxels
};

struct ModelBundle {
    Modality modality = Modality::kContrast;
    std::shared_ptr<const SegmentationModel> roi_model;
    std::map<Region, std::shared_ptr<const SegmentationModel>> region_models;

    /// Contrast: arch + descending models with classes {0,1,2}. Non-contrast:
    /// a descending model with classes {0,1}.
    void validate() const {
        if (!roi_model) throw InvalidArgument("model bundle: missing ROI model");
        const int want = modality == Modality::kContrast ? 3 : 2;
        const std::vector<Region> need = modality == Modality::kContrast
                                             ? std::vector<Region>{Region::kArch, Region::kDescending}
                                             : std::vector<Region>{Region::kDescending};
        for (Region r : need) {
            auto it = region_models.find(r);
            if (it == region_models.end() || !it->second)
                throw InvalidArgument("model bundle: missing " + region_name(r) + " model for " +
                                      modality_name(modality));
            if (it->second->num_classes() != want)
                throw InvalidArgument("model bundle: " + region_name(r) + " model has " +
                                      std::to_string(it->second->num_classes()) + " classes, expected " +
                                      std::to_string(want));
        }
    }
};

struct RegionBox {
    Region region = Region::kDescending;
    BoundingBox box;
};

struct RoiDetection {
    std::vector<RegionBox> boxes; ///< high-resolution isotropic frame
    LabelMask lowres_mask;        ///< largest stage-1 component, binary
    Grid highres_grid;
    double factor = 1.0;
    std::vector<std::string> warnings;
};

inline Grid highres_grid_for(const Grid& scan, const PipelineConfig& cfg) {
    return isotropic_grid(scan, cfg.stage2_spacing > 0.0 ? cfg.stage2_spacing : scan.spacing[0]);
}

inline double stage1_factor(const Grid& highres, const PipelineConfig& cfg) {
    if (cfg.lowres_inplane < 1) throw InvalidArgument("pipeline: lowres_inplane must be >= 1");
    const double f = static_cast<double>(highres.dims[0]) / static_cast<double>(cfg.lowres_inplane);
    if (f < 1.0) throw InvalidArgument("pipeline: scan is already smaller than the stage-1 grid");
    return f;
}

/// Map a stage-1 box to the high-resolution frame (z is shared, x/y scaled).
inline BoundingBox lowres_box_to_highres(const BoundingBox& b, double factor, const Index3& highres_dims) {
    BoundingBox out;
    out.frame = "highres";
    for (int a = 0; a < 2; ++a) {
        out.lo[a] = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(static_cast<double>(b.lo[a]) * factor)),
                                             0, highres_dims[a] - 1);
        out.hi[a] = std::clamp<std::int64_t>(
            static_cast<std::int64_t>(std::ceil(static_cast<double>(b.hi[a] + 1) * factor)) - 1, 0, highres_dims[a] - 1);
    }
    out.lo[2] = b.lo[2];
    out.hi[2] = b.hi[2];
    return out;
}

/// Inferior end of the topmost run of slices with >= 2 in-plane components,
/// scanning from the top slice down. -1 when no slice has two components.
inline std::int64_t arch_split_slice(const LabelMask& aorta) {
    std::int64_t k_inf = -1;
    for (std::int64_t k = aorta.dims()[2] - 1; k >= 0; --k) {
        const bool multi = count_slice_components(aorta, k) >= 2;
        if (multi) k_inf = k;
        else if (k_inf >= 0) break;
    }
    return k_inf;
}

namespace detail {

inline LabelMask slab(const LabelMask& m, std::int64_t k0, std::int64_t k1) {
    LabelMask out(m.grid(), m.class_set);
    const auto plane = static_cast<std::size_t>(m.dims()[0] * m.dims()[1]);
    for (std::int64_t k = k0; k <= k1; ++k)
        std::copy_n(m.data().begin() + static_cast<std::ptrdiff_t>(plane * static_cast<std::size_t>(k)), plane,
                    out.data().begin() + static_cast<std::ptrdiff_t>(plane * static_cast<std::size_t>(k)));
    return out;
}

} // namespace detail

/// Stage 1 on an already isotropic high-resolution volume.
inline RoiDetection detect_roi_highres(const Volume3D& highres, const SegmentationModel& roi_model, Modality modality,
                                       const PipelineConfig& cfg = {}) {
    RoiDetection det;
    det.highres_grid = highres.grid;
    det.factor = stage1_factor(highres.grid, cfg);
    const Volume3D low = downsample_inplane(highres, det.factor);
    const nn::Tensor<float> probs = roi_model.predict(low);
    LabelMask fg(low.grid, binary_classes());
    const auto labels = nn::argmax_labels(probs);
    float max_fg = 0.0f;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        fg.data()[i] = labels[i] != 0 ? 1 : 0;
        max_fg = std::max(max_fg, 1.0f - probs.data[i]);
    }
    auto comps = connected_components(fg, Connectivity::k26, 1);
    if (comps.empty())
        throw EmptyMaskError("no aorta found: stage-1 prediction is empty (" + std::to_string(low.grid.dims[0]) + "x" +
                             std::to_string(low.grid.dims[1]) + "x" + std::to_string(low.grid.dims[2]) +
                             " grid, max foreground probability " + std::to_string(max_fg) + ")");
    det.lowres_mask = std::move(comps.front());
    const LabelMask& aorta = det.lowres_mask;

    auto add_box = [&](Region r, const LabelMask& part) {
        const BoundingBox low_box = mask_to_bounding_box(part, cfg.box_margin, "lowres");
        det.boxes.push_back({r, lowres_box_to_highres(low_box, det.factor, highres.grid.dims)});
    };
    if (modality == Modality::kNonContrast) {
        add_box(Region::kDescending, aorta);
        return det;
    }
    const std::int64_t k_inf = arch_split_slice(aorta);
    const std::int64_t nz = aorta.dims()[2];
    if (k_inf < 0) {
        det.warnings.push_back("no slice with two aortic limbs; emitting a single descending box");
        add_box(Region::kDescending, aorta);
        return det;
    }
    const LabelMask arch = detail::slab(aorta, k_inf, nz - 1);
    const LabelMask desc = k_inf > 0 ? detail::slab(aorta, 0, k_inf - 1) : LabelMask{};
    add_box(Region::kArch, arch);
    if (k_inf > 0 && desc.count_nonzero() > 0) add_box(Region::kDescending, desc);
    else det.warnings.push_back("arch run reaches the bottom slice; no descending box");
    return det;
}

inline RoiDetection detect_roi(const Volume3D& vol, const SegmentationModel& roi_model, Modality modality,
                               const PipelineConfig& cfg = {}) {
    return detect_roi_highres(resample_isotropic(vol, highres_grid_for(vol.grid, cfg).spacing[0]), roi_model, modality,
                              cfg);
}

struct RegionPrediction {
    Region region = Region::kDescending;
    BoundingBox box;        ///< detected box, high-res frame
    BoundingBox placement;  ///< crop window, high-res frame (may overhang)
    nn::Tensor<float> probs; ///< over the crop; background one-hot outside `box`
    LabelMask labels;        ///< argmax of probs
    std::vector<std::string> warnings;
};

inline std::vector<std::uint8_t> classes_for(int k) { return k == 2 ? binary_classes() : aorta_classes(); }

/// Stage 2 for one box.
inline RegionPrediction segment_region(const Volume3D& highres, const RegionBox& rb, const SegmentationModel& model,
                                       const PipelineConfig& cfg = {}) {
    const BoundingBox& box = rb.box;
    box.validate(highres.grid.dims);
    RegionPrediction out;
    out.region = rb.region;
    out.box = box;
    if (box.extent(0) > cfg.roi_xy || box.extent(1) > cfg.roi_xy)
        out.warnings.push_back(region_name(rb.region) + " box exceeds the " + std::to_string(cfg.roi_xy) +
                               " voxel crop in-plane; crop is centred and clips the box");
    auto crop = crop_roi(highres, box, cfg.roi_xy);
    out.placement = crop.placement;
    out.probs = model.predict(crop.image);
    const int K = out.probs.channels;
    const std::size_t n = out.probs.spatial();
    const Index3& d = crop.image.grid.dims;
    std::size_t v = 0;
    for (std::int64_t k = 0; k < d[2]; ++k)
        for (std::int64_t j = 0; j < d[1]; ++j)
            for (std::int64_t i = 0; i < d[0]; ++i, ++v) {
                if (box.contains(out.placement.lo[0] + i, out.placement.lo[1] + j, out.placement.lo[2] + k)) continue;
                for (int c = 0; c < K; ++c) out.probs.data[c * n + v] = c == 0 ? 1.0f : 0.0f;
            }
    out.labels = LabelMask(crop.image.grid, classes_for(K));
    out.labels.data() = nn::argmax_labels(out.probs);
    return out;
}

/// Per-voxel maximum over parts of the winning class probability. Ties keep
/// the earlier part unless it voted background and the later one did not.
/// Voxels no part covers are background.
inline LabelMask merge_predictions(const Grid& frame, const std::vector<RegionPrediction>& parts,
                                   const std::vector<std::uint8_t>& class_set) {
    LabelMask out(frame, class_set);
    std::vector<float> best(static_cast<std::size_t>(frame.voxel_count()), -std::numeric_limits<float>::infinity());
    for (const auto& part : parts) {
        if (!overlaps_frame(part.placement, frame.dims))
            throw InvalidArgument("merge_predictions: part placement lies outside the frame");
        const Index3& d = part.labels.dims();
        const std::size_t n = part.probs.spatial();
        std::size_t v = 0;
        for (std::int64_t k = 0; k < d[2]; ++k)
            for (std::int64_t j = 0; j < d[1]; ++j)
                for (std::int64_t i = 0; i < d[0]; ++i, ++v) {
                    const auto fi = part.placement.lo[0] + i, fj = part.placement.lo[1] + j,
                               fk = part.placement.lo[2] + k;
                    if (fi < 0 || fj < 0 || fk < 0 || fi >= frame.dims[0] || fj >= frame.dims[1] || fk >= frame.dims[2])
                        continue;
                    const std::uint8_t lab = part.labels.data()[v];
                    const float p = part.probs.data[lab * n + v];
                    const auto idx = static_cast<std::size_t>(frame.linear(fi, fj, fk));
                    auto& cur = out.data()[idx];
                    if (p > best[idx] || (p == best[idx] && cur == 0 && lab != 0)) {
                        best[idx] = p;
                        cur = lab;
                    }
                }
    }
    return out;
}

/// Label-only parts: each label counts with probability 1.
inline LabelMask merge_predictions(const Grid& frame, const std::vector<std::pair<BoundingBox, LabelMask>>& parts) {
    std::vector<RegionPrediction> full;
    std::vector<std::uint8_t> classes = binary_classes();
    for (const auto& [placement, mask] : parts) {
        RegionPrediction rp;
        rp.placement = placement;
        rp.labels = mask;
        const int K = static_cast<int>(*std::max_element(mask.class_set.begin(), mask.class_set.end())) + 1;
        rp.probs = nn::Tensor<float>(K, mask.dims());
        for (std::size_t i = 0; i < mask.size(); ++i) rp.probs.data[mask.data()[i] * rp.probs.spatial() + i] = 1.0f;
        if (mask.class_set.size() > classes.size()) classes = mask.class_set;
        full.push_back(std::move(rp));
    }
    return merge_predictions(frame, full, classes);
}

struct PipelineResult {
    LabelMask full_mask; ///< scan grid
    std::vector<RegionBox> boxes;
    std::vector<RegionPrediction> regions;
    LabelMask lowres_mask;
    Grid highres_grid;
    std::vector<std::pair<std::string, double>> timing; ///< seconds per stage
    std::vector<std::string> warnings;
};

namespace detail {

template <typename F>
auto tagged(const std::string& stage, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

} // namespace detail

inline PipelineResult run_pipeline(const Volume3D& vol, const ModelBundle& bundle, const PipelineConfig& cfg = {}) {
    detail::tagged("bundle", [&] {
        bundle.validate();
        return 0;
    });
    PipelineResult res;
    using clock = std::chrono::steady_clock;
    auto t = clock::now();
    auto lap = [&](const std::string& stage) {
        const auto now = clock::now();
        res.timing.emplace_back(stage, std::chrono::duration<double>(now - t).count());
        t = now;
    };
    const Volume3D highres = detail::tagged("resample", [&] {
        return resample_isotropic(vol, highres_grid_for(vol.grid, cfg).spacing[0]);
    });
    lap("resample");
    RoiDetection det =
        detail::tagged("detect_roi", [&] { return detect_roi_highres(highres, *bundle.roi_model, bundle.modality, cfg); });
    lap("detect_roi");
    res.boxes = det.boxes;
    res.lowres_mask = std::move(det.lowres_mask);
    res.highres_grid = highres.grid;
    res.warnings = det.warnings;
    for (const auto& rb : res.boxes) {
        const auto& model = *bundle.region_models.at(
            bundle.region_models.count(rb.region) ? rb.region : Region::kDescending);
        const std::string stage = "segment_region:" + region_name(rb.region);
        res.regions.push_back(detail::tagged(stage, [&] { return segment_region(highres, rb, model, cfg); }));
        for (const auto& w : res.regions.back().warnings) res.warnings.push_back(w);
        lap(stage);
    }
    const auto classes = classes_for(bundle.region_models.begin()->second->num_classes());
    res.full_mask = detail::tagged("merge", [&] {
        return resample_onto(merge_predictions(highres.grid, res.regions, classes), vol.grid);
    });
    lap("merge");
    return res;
}

/// Bundle file (JSON): {"schema_version": 1, "modality": "contrast",
/// "roi": "a.ckpt", "regions": {"arch": "b.ckpt", "descending": "c.ckpt"}}.
/// Relative paths resolve against the bundle file's directory.
inline ModelBundle load_bundle(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("bundle: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bundle: invalid JSON in '" + path + "': " + e.what());
    }
    if (j.value("schema_version", 0) != 1) throw FormatError("bundle: unsupported schema_version");
    const auto base = std::filesystem::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        const std::filesystem::path fp(p);
        return (fp.is_absolute() ? fp : base / fp).string();
    };
    ModelBundle b;
    b.modality = parse_modality(j.at("modality").get<std::string>());
    b.roi_model = UNetModel::load(resolve(j.at("roi").get<std::string>()));
    for (const auto& [name, p] : j.at("regions").items())
        b.region_models[parse_region(name)] = UNetModel::load(resolve(p.get<std::string>()));
    b.validate();
    return b;
}

} // namespace vesselseg
