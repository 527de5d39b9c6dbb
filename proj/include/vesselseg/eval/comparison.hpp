#pragma once

// Attention vs plain U-Net on a phantom ROI cohort: both nets start from the
// same init seed and train with the same config; test-set Dice per region is
// reported as a region x model table.

#include <string>
#include <vector>

#include "vesselseg/eval/report.hpp"
#include "vesselseg/io/manifest.hpp"
#include "vesselseg/phantom/phantom.hpp"
#include "vesselseg/train/trainer.hpp"

namespace vesselseg {

struct RoiCohort {
    std::vector<TrainingSample> train, valid, test;
};

/// Phantom ROIs (toy_roi_spec geometry) split at patient level by group_split.
inline RoiCohort make_roi_cohort(io::SplitCounts counts, std::uint64_t seed, const PhantomSpec& base = toy_roi_spec(),
                                 const PhantomJitter& jitter = {}) {
    const std::size_t n = counts.train + counts.valid + counts.test;
    const auto specs = generate_cohort_specs(n, base, jitter, seed);
    std::vector<std::string> ids;
    for (const auto& s : specs) ids.push_back(s.patient_id);
    const auto manifest = io::group_split(ids, counts, seed);
    RoiCohort c;
    for (const auto& s : specs) {
        auto [vol, gt] = generate_cta(s.spec);
        TrainingSample sample{s.patient_id, std::move(vol), std::move(gt)};
        switch (manifest.find(s.patient_id).cohort) {
        case io::Cohort::kTrain: c.train.push_back(std::move(sample)); break;
        case io::Cohort::kValid: c.valid.push_back(std::move(sample)); break;
        case io::Cohort::kTest: c.test.push_back(std::move(sample)); break;
        }
    }
    return c;
}

/// Per-scan test-set rows for one trained model.
inline void add_test_rows(MetricsReport& report, const std::string& model_id, const nn::ModelParams<float>& params,
                          const std::vector<TrainingSample>& test, double window_lo = -200.0,
                          double window_hi = 500.0) {
    const nn::UNet<float> net(params.spec);
    for (const auto& s : test) {
        auto probs = nn::predict_probabilities(net, params, nn::normalize_input(s.volume, window_lo, window_hi));
        LabelMask pred(s.mask.grid(), s.mask.class_set);
        pred.data() = nn::argmax_labels(probs);
        report.add_scan(s.patient_id, model_id, pred, s.mask);
    }
}

struct ComparisonResult {
    TrainResult attention;
    TrainResult plain;
    MetricsReport report;

    std::string table_csv() const {
        return report.summary_csv({{"attention", "Attention U-Net"}, {"plain", "3D U-Net"}});
    }
};

/// Trains whichever of the two models is not supplied in `reuse_attention`.
inline ComparisonResult compare_attention_vs_plain(const RoiCohort& cohort, nn::UNetSpec spec, std::uint64_t init_seed,
                                                   const TrainConfig& cfg, const TrainResult* reuse_attention = nullptr,
                                                   const EpochCallback& on_epoch = {}) {
    ComparisonResult r;
    spec.attention = true;
    r.attention = reuse_attention ? *reuse_attention : train(nn::build_unet<float>(spec, init_seed), cohort.train,
                                                             cohort.valid, cfg, on_epoch);
    spec.attention = false;
    r.plain = train(nn::build_unet<float>(spec, init_seed), cohort.train, cohort.valid, cfg, on_epoch);
    add_test_rows(r.report, "attention", r.attention.best, cohort.test, cfg.window_lo, cfg.window_hi);
    add_test_rows(r.report, "plain", r.plain.best, cohort.test, cfg.window_lo, cfg.window_hi);
    return r;
}

} // namespace vesselseg
