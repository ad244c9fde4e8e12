#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "looptrust/errors.hpp"

namespace looptrust {

/// Quantile by linear interpolation between order statistics (R's type 7).
/// `sorted` must be ascending and non-empty.
inline double quantile_type7(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw InvalidArgument("quantile of an empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct Fences {
    double lower;
    double upper;

    bool outside(double v) const noexcept { return v < lower || v > upper; }
};

/// Tukey fences q1 - 1.5 IQR and q3 + 1.5 IQR.
inline Fences tukey_fences(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const double q1 = quantile_type7(values, 0.25), q3 = quantile_type7(values, 0.75);
    const double iqr = q3 - q1;
    return {q1 - 1.5 * iqr, q3 + 1.5 * iqr};
}

/// Mean of the values inside the Tukey fences.
inline double fenced_mean(const std::vector<double>& values) {
    const Fences f = tukey_fences(values);
    double sum = 0.0;
    std::size_t n = 0;
    for (double v : values)
        if (!f.outside(v)) {
            sum += v;
            ++n;
        }
    return n ? sum / static_cast<double>(n) : 0.0;
}

inline double mean(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

/// Unbiased sample variance (divisor n - 1); 0 for fewer than two values.
inline double sample_variance(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return ss / static_cast<double>(v.size() - 1);
}

}  // namespace looptrust
