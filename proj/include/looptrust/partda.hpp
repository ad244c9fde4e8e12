#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "looptrust/errors.hpp"
#include "looptrust/image.hpp"
#include "looptrust/persistence.hpp"
#include "looptrust/stats.hpp"

namespace looptrust {

struct PartitionStats {
    Role role;
    std::size_t n = 0;
    double mean = 0.0;
    double sample_variance = 0.0;  // divisor n - 1
};

/// Mean and unbiased variance over the pixels of `role`, edge pixels excluded.
inline PartitionStats partition_stats(const GrayImage& img, const PartitionLabeling& lab, const Role& role) {
    std::vector<double> v;
    for (std::size_t i : lab.pixels_with_role(role)) v.push_back(img[i]);
    if (v.size() < 2)
        throw InsufficientPixels(to_string(role) + " has " + std::to_string(v.size()) + " pixels, need at least 2");
    return {role, v.size(), mean(v), sample_variance(v)};
}

/// Upper (1 - alpha) quantile of the chi-square distribution with two degrees of freedom.
inline double chi2_2_quantile(double alpha) { return -2.0 * std::log(alpha); }

/// Standard normal quantile.
inline double normal_quantile(double p) { return boost::math::quantile(boost::math::normal(), p); }

/// Axis-aligned confidence ellipse on the (death, birth) plane.
struct ConfidenceRegion {
    double center_death = 0.0;
    double center_birth = 0.0;
    double var_death = 0.0;  // s^2 of the interior over n_d
    double var_birth = 0.0;  // s^2 of the loop over n_b
    double alpha = 0.05;
    double chi2_quantile = 0.0;
    std::size_t n_death = 0;
    std::size_t n_birth = 0;

    std::pair<double, double> boundary(double theta) const {
        const double r = std::sqrt(chi2_quantile);
        return {center_death + r * std::sqrt(var_death) * std::cos(theta),
                center_birth + r * std::sqrt(var_birth) * std::sin(theta)};
    }

    double mahalanobis2(double death, double birth) const {
        const double dd = death - center_death, db = birth - center_birth;
        return dd * dd / var_death + db * db / var_birth;
    }

    double area() const { return std::numbers::pi * chi2_quantile * std::sqrt(var_death * var_birth); }
};

inline ConfidenceRegion confidence_region(const PartitionStats& interior, const PartitionStats& loop,
                                          double alpha = 0.05) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
    if (interior.n < 2 || loop.n < 2) throw InsufficientPixels("confidence region needs two pixels per partition");
    if (!(interior.sample_variance > 0.0) || !(loop.sample_variance > 0.0))
        throw DegenerateRegion("zero sample variance: the region collapses to its centre");
    ConfidenceRegion r;
    r.center_death = interior.mean;
    r.center_birth = loop.mean;
    r.var_death = interior.sample_variance / static_cast<double>(interior.n);
    r.var_birth = loop.sample_variance / static_cast<double>(loop.n);
    r.alpha = alpha;
    r.chi2_quantile = chi2_2_quantile(alpha);
    r.n_death = interior.n;
    r.n_birth = loop.n;
    return r;
}

inline bool region_contains(const ConfidenceRegion& r, double death, double birth) {
    return r.mahalanobis2(death, birth) <= r.chi2_quantile;
}

struct PersistenceInterval {
    double estimate = 0.0;
    double half_width = 0.0;
};

/// Normal interval for persistence = mean(loop) - mean(interior). Zero variance gives a zero
/// half-width rather than an error, since a point interval is still meaningful here.
inline PersistenceInterval persistence_interval(const PartitionStats& interior, const PartitionStats& loop,
                                                double alpha = 0.05) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
    const double var = loop.sample_variance / static_cast<double>(loop.n) +
                       interior.sample_variance / static_cast<double>(interior.n);
    return {loop.mean - interior.mean, var > 0.0 ? normal_quantile(1.0 - alpha / 2.0) * std::sqrt(var) : 0.0};
}

// ---------------------------------------------------------------------------------------
// Localization and matching

/// Smoothed copy of the image and its diagram, used to break intensity ties.
struct SmoothedHint {
    const GrayImage* image = nullptr;
    const PersistenceDiagram* diagram = nullptr;
};

/// Sorted (value, pixel index) table for repeated exact-value lookups.
class ValueIndex {
public:
    explicit ValueIndex(const GrayImage& img) {
        entries_.reserve(img.size());
        for (std::size_t i = 0; i < img.size(); ++i) entries_.push_back({img[i], i});
        std::sort(entries_.begin(), entries_.end());
    }

    std::vector<std::size_t> find(double value) const {
        auto lo = std::lower_bound(entries_.begin(), entries_.end(), std::pair{value, std::size_t{0}});
        std::vector<std::size_t> out;
        for (; lo != entries_.end() && lo->first == value; ++lo) out.push_back(lo->second);
        return out;
    }

private:
    std::vector<std::pair<double, std::size_t>> entries_;
};

namespace detail {

inline std::vector<Pixel> resolve_ties(const GrayImage& img, std::vector<std::size_t> idx, double value,
                                       const GrayImage* smoothed, std::optional<double> smoothed_target) {
    if (idx.empty()) throw LookupError("no pixel has intensity " + format_real(value));
    if (idx.size() > 1 && smoothed && smoothed_target) {
        std::size_t best = idx.front();
        for (std::size_t i : idx)
            if (std::abs((*smoothed)[i] - *smoothed_target) < std::abs((*smoothed)[best] - *smoothed_target)) best = i;
        idx = {best};
    }
    std::vector<Pixel> out;
    for (std::size_t i : idx) out.push_back(img.pixel(i));
    return out;
}

}  // namespace detail

/// Pixels whose intensity equals `value`. A unique pixel is returned alone. Tied pixels are all
/// returned, unless a smoothed image and the smoothed diagram's matching value are given, in
/// which case the tied pixel whose smoothed intensity is nearest that value is chosen.
inline std::vector<Pixel> localize_value(const GrayImage& img, double value, const GrayImage* smoothed = nullptr,
                                         std::optional<double> smoothed_target = std::nullopt) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < img.size(); ++i)
        if (img[i] == value) idx.push_back(i);
    return detail::resolve_ties(img, std::move(idx), value, smoothed, smoothed_target);
}

struct LoopMatch {
    std::size_t point_index = 0;
    int loop = 0;
};

struct MatchResult {
    std::vector<LoopMatch> pairs;
    std::vector<std::size_t> unmatched;  // H1 point indices

    std::optional<std::size_t> point_for_loop(int loop) const {
        for (const auto& p : pairs)
            if (p.loop == loop) return p.point_index;
        return std::nullopt;
    }
};

/// Pairs H1 diagram points with labelled loops.
///
/// Points are scanned by decreasing persistence. A point matches loop i when some pixel with its
/// birth value lies in Loop(i) and some pixel with its death value lies in Interior(i); among open
/// loops meeting that test the lowest index wins, and the loop is then closed. A point whose
/// (death, birth) exactly repeats an already matched point is treated as a coincidence and left
/// unmatched.
inline MatchResult match_loops(const PersistenceDiagram& diagram, const PartitionLabeling& lab, const GrayImage& img,
                               const SmoothedHint& hint = {}) {
    MatchResult result;
    const int n_loops = lab.loop_count();
    std::vector<bool> closed(static_cast<std::size_t>(n_loops) + 1, false);
    const ValueIndex index(img);
    std::vector<std::pair<double, double>> taken;

    auto roles_of = [&](const std::vector<Pixel>& px, RoleKind kind) {
        std::vector<int> loops;
        for (Pixel p : px) {
            const Role r = lab.role_at(lab.index(p));
            if (r.kind == kind) loops.push_back(r.loop);
        }
        return loops;
    };

    for (std::size_t k : by_decreasing_persistence(diagram, 1)) {
        const DiagramPoint& pt = diagram.points[k];
        std::optional<double> b_target, d_target;
        if (hint.image && hint.diagram) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : hint.diagram->points) {
                if (q.dim != 1 || q.essential) continue;
                const double dist = std::max(std::abs(q.birth - pt.birth), std::abs(q.death - pt.death));
                if (dist < best) {
                    best = dist;
                    b_target = q.birth;
                    d_target = q.death;
                }
            }
        }
        const auto births = detail::resolve_ties(img, index.find(pt.birth), pt.birth, hint.image, b_target);
        const auto deaths = detail::resolve_ties(img, index.find(pt.death), pt.death, hint.image, d_target);
        const auto birth_loops = roles_of(births, RoleKind::Loop);
        const auto death_loops = roles_of(deaths, RoleKind::Interior);

        const bool duplicate = std::find(taken.begin(), taken.end(), std::pair{pt.death, pt.birth}) != taken.end();
        int chosen = 0;
        if (!duplicate)
            for (int i = 1; i <= n_loops && !chosen; ++i)
                if (!closed[static_cast<std::size_t>(i)] &&
                    std::find(birth_loops.begin(), birth_loops.end(), i) != birth_loops.end() &&
                    std::find(death_loops.begin(), death_loops.end(), i) != death_loops.end())
                    chosen = i;
        if (chosen) {
            closed[static_cast<std::size_t>(chosen)] = true;
            taken.push_back({pt.death, pt.birth});
            result.pairs.push_back({k, chosen});
        } else {
            result.unmatched.push_back(k);
        }
    }
    std::sort(result.pairs.begin(), result.pairs.end(),
              [](const LoopMatch& a, const LoopMatch& b) { return a.loop < b.loop; });
    return result;
}

/// parTDA result for one labelled loop.
struct LoopEstimate {
    int loop = 0;
    std::optional<std::size_t> point_index;  // matched diagram point, if any
    PartitionStats interior;
    PartitionStats ring;
    std::optional<ConfidenceRegion> region;  // absent when the variance is zero
    PersistenceInterval persistence;

    double death_estimate() const { return interior.mean; }
    double birth_estimate() const { return ring.mean; }
};

/// Partition-mean estimates and regions for every matched loop.
inline std::vector<LoopEstimate> partda_estimates(const GrayImage& img, const PartitionLabeling& lab,
                                                  const MatchResult& match, double alpha = 0.05) {
    std::vector<LoopEstimate> out;
    for (const auto& m : match.pairs) {
        LoopEstimate e;
        e.loop = m.loop;
        e.point_index = m.point_index;
        e.interior = partition_stats(img, lab, Role::interior_of(m.loop));
        e.ring = partition_stats(img, lab, Role::loop_of(m.loop));
        if (e.interior.sample_variance > 0.0 && e.ring.sample_variance > 0.0)
            e.region = confidence_region(e.interior, e.ring, alpha);
        e.persistence = persistence_interval(e.interior, e.ring, alpha);
        out.push_back(e);
    }
    return out;
}

}  // namespace looptrust
