#pragma once

#include <cmath>
#include <vector>

#include "vesselseg/core/errors.hpp"

namespace vesselseg {

struct IccResult {
    double value = 1.0;
    bool degenerate = false; ///< zero total variance; value reported as 1
    double ms_rows = 0.0;    ///< between scans
    double ms_cols = 0.0;    ///< between raters
    double ms_error = 0.0;
};

/// ICC(2,1): two-way random effects, absolute agreement, single rater.
/// `m[i][j]` is scan i measured by rater j.
inline IccResult icc(const std::vector<std::vector<double>>& m) {
    const std::size_t n = m.size();
    if (n < 2) throw InvalidArgument("icc: need at least 2 scans");
    const std::size_t k = m.front().size();
    if (k < 2) throw InvalidArgument("icc: need at least 2 raters");
    for (const auto& row : m) {
        if (row.size() != k) throw InvalidArgument("icc: ragged measurement matrix");
        for (double v : row)
            if (!std::isfinite(v)) throw InvalidArgument("icc: missing or non-finite measurement");
    }
    const double dn = static_cast<double>(n), dk = static_cast<double>(k);
    double grand = 0.0;
    for (const auto& row : m)
        for (double v : row) grand += v;
    grand /= dn * dk;

    double ss_total = 0.0, ss_rows = 0.0, ss_cols = 0.0;
    std::vector<double> col_mean(k, 0.0);
    for (const auto& row : m) {
        double rm = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            rm += row[j];
            col_mean[j] += row[j] / dn;
            ss_total += (row[j] - grand) * (row[j] - grand);
        }
        rm /= dk;
        ss_rows += dk * (rm - grand) * (rm - grand);
    }
    for (double c : col_mean) ss_cols += dn * (c - grand) * (c - grand);
    const double ss_error = ss_total - ss_rows - ss_cols;

    IccResult r;
    r.ms_rows = ss_rows / (dn - 1.0);
    r.ms_cols = ss_cols / (dk - 1.0);
    r.ms_error = ss_error / ((dn - 1.0) * (dk - 1.0));
    if (ss_total == 0.0) {
        r.degenerate = true;
        r.value = 1.0;
        return r;
    }
    const double denom = r.ms_rows + (dk - 1.0) * r.ms_error + dk * (r.ms_cols - r.ms_error) / dn;
    r.value = (r.ms_rows - r.ms_error) / denom;
    return r;
}

} // namespace vesselseg
