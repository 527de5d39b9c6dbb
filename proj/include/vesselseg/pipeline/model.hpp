#pragma once

#include <memory>
#include <string>

#include "vesselseg/core/resample.hpp"
#include "vesselseg/nn/checkpoint.hpp"
#include "vesselseg/nn/unet.hpp"

namespace vesselseg {

/// Anything that maps a volume to per-voxel class probabilities on the same grid.
class SegmentationModel {
public:
    virtual ~SegmentationModel() = default;
    virtual int num_classes() const = 0;
    /// num_classes x vol dims, probabilities summing to 1 per voxel.
    virtual nn::Tensor<float> predict(const Volume3D& vol) const = 0;
    virtual std::string describe() const = 0;
};

class UNetModel final : public SegmentationModel {
public:
    explicit UNetModel(nn::ModelParams<float> params, double window_lo = -200.0, double window_hi = 500.0)
        : params_(std::move(params)), net_(params_.spec), lo_(window_lo), hi_(window_hi) {}

    static std::shared_ptr<UNetModel> load(const std::string& path) {
        return std::make_shared<UNetModel>(nn::load_checkpoint<float>(path));
    }

    int num_classes() const override { return params_.spec.num_classes; }
    nn::Tensor<float> predict(const Volume3D& vol) const override {
        return nn::predict_probabilities(net_, params_, nn::normalize_input(vol, lo_, hi_));
    }
    std::string describe() const override { return params_.spec.canonical(); }
    const nn::ModelParams<float>& params() const { return params_; }

private:
    nn::ModelParams<float> params_;
    nn::UNet<float> net_;
    double lo_, hi_;
};

/// Ground-truth passthrough: nearest-samples a reference mask at the physical
/// voxel centres of whatever grid it is given. Outside the reference -> background.
class OracleModel final : public SegmentationModel {
public:
    OracleModel(LabelMask reference, bool binary_output)
        : ref_(binary_output ? binarize(reference) : std::move(reference)),
          classes_(binary_output ? 2 : static_cast<int>(ref_.class_set.size())) {}

    int num_classes() const override { return classes_; }
    nn::Tensor<float> predict(const Volume3D& vol) const override {
        const LabelMask m = resample_onto(ref_, vol.grid);
        nn::Tensor<float> t(classes_, vol.grid.dims);
        for (std::size_t i = 0; i < m.size(); ++i) t.data[m.data()[i] * t.spatial() + i] = 1.0f;
        return t;
    }
    std::string describe() const override { return "oracle"; }

private:
    LabelMask ref_;
    int classes_;
};

} // namespace vesselseg
