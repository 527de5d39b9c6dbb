#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "vesselseg/augment/affine.hpp"
#include "vesselseg/eval/dice.hpp"
#include "vesselseg/nn/checkpoint.hpp"
#include "vesselseg/nn/unet.hpp"
#include "vesselseg/rng.hpp"
#include "vesselseg/train/loss.hpp"
#include "vesselseg/train/optimizer.hpp"

namespace vesselseg {

/// One labelled ROI. `patient_id` is the source patient, shared by augmented copies.
struct TrainingSample {
    std::string patient_id;
    Volume3D volume;
    LabelMask mask;
};

struct TrainConfig {
    double learning_rate = 1e-3;
    double weight_decay = 1e-6;
    int batch_size = 2;
    int epochs = 600;
    std::uint64_t seed = 0;
    bool augment_online = false;
    int checkpoint_every = 0; ///< epochs; 0 disables periodic checkpoints
    std::string checkpoint_dir;
    bool cosine_schedule = false;
    double dice_epsilon = kDiceEpsilon;
    double window_lo = -200.0;
    double window_hi = 500.0;

    void validate() const {
        if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0)) throw InvalidArgument("train: rates must be >= 0");
        if (batch_size < 1) throw InvalidArgument("train: batch_size must be >= 1");
        if (epochs < 1) throw InvalidArgument("train: epochs must be >= 1");
        if (checkpoint_every < 0) throw InvalidArgument("train: checkpoint_every must be >= 0");
        if (checkpoint_every > 0 && checkpoint_dir.empty())
            throw InvalidArgument("train: checkpoint_every needs checkpoint_dir");
        if (!(dice_epsilon >= 0.0)) throw InvalidArgument("train: dice_epsilon must be >= 0");
        if (!(window_lo < window_hi)) throw InvalidArgument("train: window_lo must be < window_hi");
    }
};

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;
    DiceScores valid;
    DiceScores train; ///< argmax Dice of the training forward passes during the epoch
};

struct TrainHistory {
    std::vector<EpochRecord> records;
    int best_epoch = 0;
    double best_dice = -1.0;

    std::string to_csv() const;
};

inline std::string format_metric(double v) {
    if (std::isnan(v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline std::string TrainHistory::to_csv() const {
    std::ostringstream os;
    os << "epoch,loss,dice_lumen,dice_wall,dice_combined,train_dice_combined\n";
    for (const auto& r : records)
        os << r.epoch << ',' << format_metric(r.loss) << ',' << format_metric(r.valid.lumen) << ','
           << format_metric(r.valid.wall_ilt) << ',' << format_metric(r.valid.entire) << ','
           << format_metric(r.train.entire) << '\n';
    return os.str();
}

struct TrainResult {
    nn::ModelParams<float> best;  ///< highest validation combined Dice (last epoch if no validation set)
    nn::ModelParams<float> last;
    TrainHistory history;
};

/// Refuses overlapping patient sets.
inline void check_no_leakage(const std::vector<TrainingSample>& a, const std::vector<TrainingSample>& b) {
    std::set<std::string> ids;
    for (const auto& s : a) ids.insert(s.patient_id);
    for (const auto& s : b)
        if (ids.count(s.patient_id))
            throw LeakageError("patient '" + s.patient_id + "' appears in both training and validation sets");
}

namespace detail {

struct Prepared {
    nn::Tensor<float> input;
    std::vector<std::uint8_t> labels;
    nn::PadPlan plan;
    Index3 dims{};
};

inline Prepared prepare(const Volume3D& vol, const LabelMask& mask, std::int64_t divisor, double lo, double hi) {
    if (vol.grid.dims != mask.dims()) throw InvalidArgument("training sample: volume and mask dims differ");
    Prepared p;
    p.dims = vol.grid.dims;
    p.plan = nn::plan_padding(p.dims, divisor);
    p.input = nn::pad_tensor(nn::normalize_input(vol, lo, hi), p.plan, 0.0f);
    nn::Tensor<std::uint8_t> lab(1, p.dims);
    lab.data = mask.data();
    p.labels = nn::pad_tensor(lab, p.plan, std::uint8_t{0}).data;
    return p;
}

inline void accumulate(DiceScores& acc, const DiceScores& s) {
    auto add = [](double& a, double v) { a = std::isnan(a) ? v : a + v; };
    add(acc.lumen, s.lumen);
    add(acc.wall_ilt, s.wall_ilt);
    add(acc.entire, s.entire);
}

inline DiceScores averaged(DiceScores s, std::size_t n) {
    const double k = static_cast<double>(n);
    s.lumen /= k;
    s.wall_ilt /= k;
    s.entire /= k;
    return s;
}

} // namespace detail

/// Mean per-sample argmax Dice. Read-only on the parameters.
inline DiceScores validate(const nn::ModelParams<float>& params, const std::vector<TrainingSample>& dataset,
                           double window_lo = -200.0, double window_hi = 500.0) {
    if (dataset.empty()) throw InvalidArgument("validate: empty dataset");
    const nn::UNet<float> net(params.spec);
    const bool binary = params.spec.num_classes == 2;
    DiceScores acc;
    for (const auto& s : dataset) {
        auto probs = nn::predict_probabilities(net, params, nn::normalize_input(s.volume, window_lo, window_hi));
        const auto pred = nn::argmax_labels(probs);
        detail::accumulate(acc, multiclass_dice(std::span<const std::uint8_t>(pred),
                                                std::span<const std::uint8_t>(s.mask.data()), binary));
    }
    return detail::averaged(acc, dataset.size());
}

using EpochCallback = std::function<void(const EpochRecord&)>;

inline TrainResult train(nn::ModelParams<float> model, const std::vector<TrainingSample>& train_set,
                         const std::vector<TrainingSample>& valid_set, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (train_set.empty()) throw InvalidArgument("train: empty training set");
    check_no_leakage(train_set, valid_set);
    const nn::UNet<float> net(model.spec);
    const int K = model.spec.num_classes;
    const bool binary = K == 2;
    for (const auto& s : train_set)
        for (auto v : s.mask.data())
            if (v >= K) throw InvalidArgument("train: mask label outside the model's class range");

    std::vector<detail::Prepared> fixed;
    if (!cfg.augment_online)
        for (const auto& s : train_set)
            fixed.push_back(detail::prepare(s.volume, s.mask, net.spec().divisor(), cfg.window_lo, cfg.window_hi));

    Rng order_rng = make_stream(cfg.seed, "train");
    Rng aug_rng = make_stream(cfg.seed, "augment");
    const AffineSampler sampler;
    AdamW<float> opt(model.values.size(), cfg.weight_decay);

    TrainResult result;
    std::vector<std::size_t> order(train_set.size());
    std::vector<float> grad(model.values.size());
    nn::UNetCache<float> cache;
    if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), order_rng);
        const double lr = scheduled_lr(cfg.learning_rate, epoch - 1, cfg.epochs, cfg.cosine_schedule);
        double loss_sum = 0.0;
        DiceScores train_acc;
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
            std::fill(grad.begin(), grad.end(), 0.0f);
            for (std::size_t i = b; i < end; ++i) {
                detail::Prepared aug;
                const detail::Prepared* sample = nullptr;
                if (cfg.augment_online) {
                    const auto& s = train_set[order[i]];
                    auto pair = random_affine(s.volume, s.mask, sampler, aug_rng);
                    aug = detail::prepare(pair.volume, pair.mask, net.spec().divisor(), cfg.window_lo, cfg.window_hi);
                    sample = &aug;
                } else {
                    sample = &fixed[order[i]];
                }
                auto probs = net.forward(model, sample->input, &cache);
                const auto gt = one_hot<float>(sample->labels, K, sample->input.dims);
                nn::Tensor<float> dprobs;
                loss_sum += soft_dice_loss(probs, gt, cfg.dice_epsilon, &dprobs);
                net.backward(model, cache, dprobs, grad);
                const auto pred = nn::argmax_labels(probs);
                detail::accumulate(train_acc, multiclass_dice(std::span<const std::uint8_t>(pred),
                                                              std::span<const std::uint8_t>(sample->labels), binary));
            }
            const float inv = 1.0f / static_cast<float>(end - b);
            for (auto& g : grad) g *= inv;
            opt.step(model.values, grad, lr);
        }
        model.epoch = epoch;

        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = loss_sum / static_cast<double>(train_set.size());
        rec.train = detail::averaged(train_acc, train_set.size());
        if (!valid_set.empty()) rec.valid = validate(model, valid_set, cfg.window_lo, cfg.window_hi);
        result.history.records.push_back(rec);

        if (valid_set.empty() || rec.valid.entire > result.history.best_dice) {
            result.history.best_dice = valid_set.empty() ? rec.train.entire : rec.valid.entire;
            result.history.best_epoch = epoch;
            result.best = model;
        }
        if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof name, "epoch_%05d.ckpt", epoch);
            nn::save_checkpoint((std::filesystem::path(cfg.checkpoint_dir) / name).string(), model);
        }
        if (on_epoch) on_epoch(rec);
    }
    result.last = std::move(model);
    return result;
}

} // namespace vesselseg
