#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>

#include "vesselseg/core/errors.hpp"
#include "vesselseg/core/image.hpp"

namespace vesselseg {

/// 2|A n B| / (|A| + |B|) over voxels where the predicates hold. Both empty -> 1.
template <typename PredA, typename PredB>
double dice_where(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, PredA in_a, PredB in_b) {
    if (a.size() != b.size()) throw InvalidArgument("dice: mask size mismatch");
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = in_a(a[i]), y = in_b(b[i]);
        na += x;
        nb += y;
        both += x && y;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

/// Dice of the non-zero voxels of two masks.
inline double dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    auto nz = [](std::uint8_t v) { return v != 0; };
    return dice_where(a, b, nz, nz);
}

inline double dice(const LabelMask& a, const LabelMask& b) {
    if (a.dims() != b.dims()) throw InvalidArgument("dice: mask dims differ");
    return dice(std::span<const std::uint8_t>(a.data()), std::span<const std::uint8_t>(b.data()));
}

/// Dice of one label value.
inline double label_dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, std::uint8_t label) {
    auto eq = [label](std::uint8_t v) { return v == label; };
    return dice_where(a, b, eq, eq);
}

/// Per-region scores. For binary vocabularies lumen and wall_ilt are NaN and
/// `entire` is the single foreground class.
struct DiceScores {
    double lumen = std::numeric_limits<double>::quiet_NaN();
    double wall_ilt = std::numeric_limits<double>::quiet_NaN();
    double entire = std::numeric_limits<double>::quiet_NaN();
};

inline DiceScores multiclass_dice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                                  bool binary_vocabulary) {
    DiceScores s;
    s.entire = dice(pred, gt);
    if (!binary_vocabulary) {
        s.lumen = label_dice(pred, gt, kLumen);
        s.wall_ilt = label_dice(pred, gt, kWallIlt);
    }
    return s;
}

inline DiceScores multiclass_dice(const LabelMask& pred, const LabelMask& gt) {
    if (pred.dims() != gt.dims()) throw InvalidArgument("multiclass_dice: mask dims differ");
    if (pred.class_set != gt.class_set) throw InvalidArgument("multiclass_dice: class vocabularies differ");
    return multiclass_dice(std::span<const std::uint8_t>(pred.data()), std::span<const std::uint8_t>(gt.data()),
                           gt.is_binary());
}

} // namespace vesselseg
