#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vesselseg/core/stats.hpp"
#include "vesselseg/eval/dice.hpp"
#include "vesselseg/eval/icc.hpp"

namespace vesselseg {

enum class EvalRegion { kInnerLumen, kEntire, kWallIlt };

inline std::string region_key(EvalRegion r) {
    switch (r) {
    case EvalRegion::kInnerLumen: return "inner_lumen";
    case EvalRegion::kEntire: return "entire";
    case EvalRegion::kWallIlt: return "wall_ilt";
    }
    return "";
}

/// Display names in report order.
inline std::string region_label(EvalRegion r, bool aneurysm_naming = false) {
    switch (r) {
    case EvalRegion::kInnerLumen: return "Inner Lumen";
    case EvalRegion::kEntire: return aneurysm_naming ? "Entire AAA" : "Entire Aorta";
    case EvalRegion::kWallIlt: return "Outer Wall + ILT Only";
    }
    return "";
}

inline std::vector<EvalRegion> regions_for(bool binary) {
    if (binary) return {EvalRegion::kEntire};
    return {EvalRegion::kInnerLumen, EvalRegion::kEntire, EvalRegion::kWallIlt};
}

struct MeanSem {
    double mean = 0.0;
    double sem = 0.0; ///< 0 for a single value
    std::size_t n = 0;
};

inline MeanSem mean_sem(std::span<const double> v) {
    if (v.empty()) throw InvalidArgument("mean_sem: no values");
    MeanSem m{mean_of(v), 0.0, v.size()};
    if (v.size() > 1) m.sem = std::sqrt(sample_variance(v) / static_cast<double>(v.size()));
    return m;
}

/// "96.8 ± 0.2 %" from fractions.
inline std::string format_percent(const MeanSem& m) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f ± %.1f %%", 100.0 * m.mean, 100.0 * m.sem);
    return buf;
}

struct MetricRow {
    std::string scan_id;
    EvalRegion region = EvalRegion::kEntire;
    double dice = 0.0;
    std::string model_id;
};

/// Per-scan Dice rows and their mean ± s.e.m. aggregates.
struct MetricsReport {
    std::vector<MetricRow> rows;

    void add_scan(const std::string& scan_id, const std::string& model_id, const LabelMask& pred, const LabelMask& gt) {
        const DiceScores d = multiclass_dice(pred, gt);
        for (EvalRegion r : regions_for(gt.is_binary())) {
            const double v = r == EvalRegion::kInnerLumen ? d.lumen : r == EvalRegion::kEntire ? d.entire : d.wall_ilt;
            rows.push_back({scan_id, r, v, model_id});
        }
    }

    std::vector<std::string> models() const {
        std::vector<std::string> out;
        for (const auto& r : rows)
            if (std::find(out.begin(), out.end(), r.model_id) == out.end()) out.push_back(r.model_id);
        return out;
    }

    bool has(const std::string& model, EvalRegion region) const {
        return std::any_of(rows.begin(), rows.end(),
                           [&](const MetricRow& r) { return r.model_id == model && r.region == region; });
    }

    MeanSem aggregate(const std::string& model, EvalRegion region) const {
        std::vector<double> v;
        for (const auto& r : rows)
            if (r.model_id == model && r.region == region) v.push_back(r.dice);
        return mean_sem(v);
    }

    std::string rows_csv() const {
        std::ostringstream os;
        os << "scan_id,region,dice,model_id\n";
        for (const auto& r : rows) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.6f", r.dice);
            os << r.scan_id << ',' << region_key(r.region) << ',' << buf << ',' << r.model_id << '\n';
        }
        return os.str();
    }

    /// Region rows x model columns of mean ± s.e.m.; `labels` renames model columns.
    std::string summary_csv(const std::map<std::string, std::string>& labels = {}, bool aneurysm_naming = true) const {
        const auto ms = models();
        std::ostringstream os;
        os << "Region";
        for (const auto& m : ms) os << ',' << (labels.count(m) ? labels.at(m) : m);
        os << '\n';
        for (EvalRegion r : regions_for(false)) {
            bool any = false;
            for (const auto& m : ms) any = any || has(m, r);
            if (!any) continue;
            os << region_label(r, aneurysm_naming);
            for (const auto& m : ms) os << ',' << (has(m, r) ? format_percent(aggregate(m, r)) : std::string("-"));
            os << '\n';
        }
        return os.str();
    }
};

/// One scan segmented by several observers or sessions.
struct ObserverScan {
    std::string scan_id;
    std::map<std::string, LabelMask> by_observer;
};

struct ObserverStudy {
    std::vector<ObserverScan> scans;
};

struct ObserverTable {
    bool binary = false;
    std::vector<std::string> columns; ///< compared observers, in order
    std::vector<EvalRegion> regions;
    std::map<std::string, std::map<EvalRegion, MeanSem>> cells;

    std::string to_csv(const std::map<std::string, std::string>& labels = {}) const {
        std::ostringstream os;
        os << "Region";
        for (const auto& c : columns) os << ',' << (labels.count(c) ? labels.at(c) : c);
        os << '\n';
        for (EvalRegion r : regions) {
            os << region_label(r);
            for (const auto& c : columns) os << ',' << format_percent(cells.at(c).at(r));
            os << '\n';
        }
        return os.str();
    }
};

/// Dice of every other observer against `ground`, per region, mean ± s.e.m. over scans.
inline ObserverTable observer_report(const ObserverStudy& study, const std::string& ground) {
    if (study.scans.empty()) throw InvalidArgument("observer_report: empty study");
    ObserverTable t;
    for (const auto& [obs, mask] : study.scans.front().by_observer)
        if (obs != ground) t.columns.push_back(obs);
    if (t.columns.empty()) throw InvalidArgument("observer_report: no observer besides the ground");
    const auto g0 = study.scans.front().by_observer.find(ground);
    if (g0 == study.scans.front().by_observer.end())
        throw InvalidArgument("observer_report: scan '" + study.scans.front().scan_id + "' lacks ground '" + ground + "'");
    t.binary = g0->second.is_binary();
    t.regions = regions_for(t.binary);
    std::map<std::string, std::map<EvalRegion, std::vector<double>>> vals;
    for (const auto& scan : study.scans) {
        const auto g = scan.by_observer.find(ground);
        if (g == scan.by_observer.end())
            throw InvalidArgument("observer_report: scan '" + scan.scan_id + "' lacks ground '" + ground + "'");
        for (const auto& c : t.columns) {
            const auto o = scan.by_observer.find(c);
            if (o == scan.by_observer.end())
                throw InvalidArgument("observer_report: scan '" + scan.scan_id + "' lacks observer '" + c + "'");
            const DiceScores d = multiclass_dice(o->second, g->second);
            for (EvalRegion r : t.regions)
                vals[c][r].push_back(r == EvalRegion::kInnerLumen ? d.lumen
                                     : r == EvalRegion::kEntire   ? d.entire
                                                                  : d.wall_ilt);
        }
    }
    for (const auto& c : t.columns)
        for (EvalRegion r : t.regions) t.cells[c][r] = mean_sem(vals[c][r]);
    return t;
}

/// Segmented (non-zero) volume in mm^3.
inline double segmented_volume_mm3(const LabelMask& m) {
    const auto& s = m.grid().spacing;
    return static_cast<double>(m.count_nonzero()) * s[0] * s[1] * s[2];
}

/// ICC over total segmented volume, one column per observer (ground first).
inline IccResult observer_icc(const ObserverStudy& study, const std::vector<std::string>& observers) {
    std::vector<std::vector<double>> m;
    for (const auto& scan : study.scans) {
        std::vector<double> row;
        for (const auto& o : observers) {
            const auto it = scan.by_observer.find(o);
            if (it == scan.by_observer.end())
                throw InvalidArgument("observer_icc: scan '" + scan.scan_id + "' lacks observer '" + o + "'");
            row.push_back(segmented_volume_mm3(it->second));
        }
        m.push_back(std::move(row));
    }
    return icc(m);
}

} // namespace vesselseg
