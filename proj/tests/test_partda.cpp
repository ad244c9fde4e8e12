#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "looptrust/partda.hpp"
#include "looptrust/ring.hpp"

using namespace looptrust;

namespace {

PartitionStats stats(double mean, double var, std::size_t n) { return {Role::other(), n, mean, var}; }

// Standard normal quantile by bisection on erfc.
double z_by_bisection(double p) {
    double lo = -10, hi = 10;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// Chi-square(2) quantile by bisection on the Simpson-integrated density.
double chi2_by_integration(double prob) {
    auto cdf = [](double x) {
        const int n = 2000;
        const double h = x / n;
        double s = 0.0;
        for (int i = 0; i <= n; ++i) {
            const double f = 0.5 * std::exp(-0.5 * i * h);
            s += (i == 0 || i == n ? 1 : (i % 2 ? 4 : 2)) * f;
        }
        return s * h / 3.0;
    };
    double lo = 0, hi = 100;
    for (int i = 0; i < 100; ++i) {
        const double mid = 0.5 * (lo + hi);
        (cdf(mid) < prob ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

PartitionLabeling two_ring_labeling(const RingSpec& spec) { return truth_labeling(spec); }

RingSpec two_rings(double b1, double d1, double b2, double d2) {
    RingSpec s;
    s.width = 70;
    s.height = 40;
    s.mu_background = 0;
    s.rings.push_back(Ring{{18, 20}, 12, 4, b1, d1});
    s.rings.push_back(Ring{{50, 20}, 12, 4, b2, d2});
    return s;
}

}  // namespace

TEST(PartitionStats, HandArithmetic) {
    GrayImage img(2, 2, {1, 2, 3, 4});
    PartitionLabeling lab{2, 2, {0, 0, 0, 0}, {}, {{0, Role::background()}}};
    auto s = partition_stats(img, lab, Role::background());
    EXPECT_EQ(s.n, 4u);
    EXPECT_DOUBLE_EQ(s.mean, 2.5);
    EXPECT_DOUBLE_EQ(s.sample_variance, 5.0 / 3.0);
}

TEST(PartitionStats, ConstantAndEdgesExcluded) {
    GrayImage img(2, 2, {7, 7, 7, 100});
    PartitionLabeling lab{2, 2, {0, 0, 0, 0}, {0, 0, 0, 1}, {{0, Role::background()}}};
    auto s = partition_stats(img, lab, Role::background());
    EXPECT_EQ(s.n, 3u);
    EXPECT_EQ(s.mean, 7.0);
    EXPECT_EQ(s.sample_variance, 0.0);
}

TEST(PartitionStats, TooFewPixels) {
    GrayImage img(2, 2, {1, 2, 3, 4});
    PartitionLabeling lab{2, 2, {0, 0, 0, 1}, {}, {{0, Role::background()}, {1, Role::other()}}};
    EXPECT_THROW(partition_stats(img, lab, Role::other()), InsufficientPixels);
}

TEST(PartitionStats, LoopMeanNearTruth) {
    auto [img, lab] = generate(centered_ring(100, 100, 30, 7, 2000, 3000, 4000, 50.0), 3);
    auto s = partition_stats(img, lab, Role::loop_of(1));
    EXPECT_LT(std::abs(s.mean - 4000), 5 * 50 / std::sqrt(static_cast<double>(s.n)));
}

TEST(ConfidenceRegion, UnitVarianceCircle) {
    auto r = confidence_region(stats(10, 2, 2), stats(20, 2, 2), 0.05);
    EXPECT_NEAR(r.chi2_quantile, chi2_by_integration(0.95), 1e-9);
    EXPECT_NEAR(std::sqrt(r.chi2_quantile), 2.4477, 1e-4);
    for (double t = 0.1; t < 6.2; t += 0.7) {
        auto [d, b] = r.boundary(t);
        EXPECT_NEAR(std::hypot(d - 10, b - 20), std::sqrt(-2 * std::log(0.05)), 1e-12);
    }
}

TEST(ConfidenceRegion, CollapsesAsAlphaGoesToOne) {
    auto r = confidence_region(stats(10, 4, 10), stats(20, 9, 10), 1.0 - 1e-12);
    EXPECT_LT(r.chi2_quantile, 1e-11);
    auto [d, b] = r.boundary(1.0);
    EXPECT_NEAR(d, 10, 1e-5);
    EXPECT_NEAR(b, 20, 1e-5);
}

TEST(ConfidenceRegion, DegenerateAndInvalid) {
    EXPECT_THROW(confidence_region(stats(1, 0, 10), stats(2, 1, 10)), DegenerateRegion);
    EXPECT_THROW(confidence_region(stats(1, 1, 10), stats(2, 1, 10), 0.0), InvalidArgument);
}

TEST(ConfidenceRegion, AreaMatchesPolygonIntegration) {
    auto r = confidence_region(stats(1000, 2500, 2209), stats(3000, 2500, 1512), 0.05);
    const double closed = std::numbers::pi * r.chi2_quantile * std::sqrt(2500.0 * 2500.0) /
                          std::sqrt(2209.0 * 1512.0);
    EXPECT_NEAR(r.area() / closed, 1.0, 1e-12);
    const int n = 200000;
    double shoelace = 0.0;
    auto prev = r.boundary(0.0);
    for (int k = 1; k <= n; ++k) {
        auto cur = r.boundary(2 * std::numbers::pi * k / n);
        shoelace += prev.first * cur.second - cur.first * prev.second;
        prev = cur;
    }
    EXPECT_NEAR(0.5 * shoelace / r.area(), 1.0, 1e-6);
}

TEST(RegionContains, CentreBoundaryOutside) {
    auto r = confidence_region(stats(1000, 900, 100), stats(3000, 1600, 50), 0.05);
    EXPECT_TRUE(region_contains(r, 1000, 3000));
    auto [d, b] = r.boundary(std::numbers::pi / 3);
    EXPECT_NEAR(r.mahalanobis2(d, b), r.chi2_quantile, 1e-9 * r.chi2_quantile);
    EXPECT_TRUE(r.mahalanobis2(d, b) <= r.chi2_quantile * (1 + 1e-9));
    for (double t = 0; t < 6.3; t += 0.05) {
        auto p = r.boundary(t);
        EXPECT_NEAR(r.mahalanobis2(p.first, p.second) / r.chi2_quantile, 1.0, 1e-9);
    }
    EXPECT_FALSE(region_contains(r, 1000, 3000 + 1.001 * std::sqrt(r.chi2_quantile * r.var_birth)));
}

TEST(PersistenceInterval, EstimateAndHalfWidth) {
    auto pi = persistence_interval(stats(1000, 4, 9), stats(3000, 16, 25), 0.05);
    EXPECT_EQ(pi.estimate, 2000.0);
    const double s2 = 400.0;
    const std::size_t n = 300;
    auto eq = persistence_interval(stats(0, s2, n), stats(1, s2, n), 0.05);
    EXPECT_NEAR(eq.half_width, z_by_bisection(0.975) * 20.0 * std::sqrt(2.0 / n), 1e-9);
    EXPECT_NEAR(z_by_bisection(0.975), 1.959964, 1e-6);
    EXPECT_EQ(persistence_interval(stats(1, 0, 5), stats(2, 0, 5)).half_width, 0.0);
}

TEST(MatchLoops, NoiselessRing) {
    auto [img, lab] = generate(centered_ring(40, 40, 12, 4, 0, 1000, 3000, 0.0), 0);
    auto d = compute_diagram(img);
    auto m = match_loops(d, lab, img);
    ASSERT_EQ(m.pairs.size(), 1u);
    EXPECT_EQ(m.pairs[0].loop, 1);
    EXPECT_EQ(d.points[m.pairs[0].point_index].birth, 3000.0);
    EXPECT_TRUE(m.unmatched.empty());
}

TEST(MatchLoops, TwoRingsMatchedToTheirOwnLabels) {
    auto spec = two_rings(3000, 1000, 5000, 2500);
    auto [img, lab] = generate(spec, 0);
    auto d = compute_diagram(img);
    auto m = match_loops(d, lab, img);
    ASSERT_EQ(m.pairs.size(), 2u);
    EXPECT_EQ(d.points[*m.point_for_loop(1)].birth, 3000.0);
    EXPECT_EQ(d.points[*m.point_for_loop(2)].birth, 5000.0);
}

TEST(MatchLoops, DuplicatePointOnlyMatchedOnce) {
    auto spec = two_rings(3000, 1000, 3000, 1000);
    auto [img, lab] = generate(spec, 0);
    auto d = compute_diagram(img);
    ASSERT_EQ(d.of_dim(1).size(), 2u);
    auto m = match_loops(d, lab, img);
    EXPECT_EQ(m.pairs.size(), 1u);
    EXPECT_EQ(m.unmatched.size(), 1u);
}

TEST(MatchLoops, BackgroundNoiseLoopUnmatched) {
    auto spec = centered_ring(60, 40, 12, 4, 0, 1000, 3000, 0.0);
    spec.rings[0].center = {20, 20};
    auto [clean, lab] = generate(spec, 0);
    std::vector<double> v(clean.data().begin(), clean.data().end());
    // a small bright loop in the background around a dark centre
    for (int y = 18; y <= 22; ++y)
        for (int x = 43; x <= 47; ++x) v[clean.index(x, y)] = 500;
    v[clean.index(45, 20)] = 100;
    GrayImage img(60, 40, v);
    auto d = compute_diagram(img);
    ASSERT_EQ(d.of_dim(1).size(), 2u);
    auto m = match_loops(d, lab, img);
    ASSERT_EQ(m.pairs.size(), 1u);
    EXPECT_EQ(d.points[m.pairs[0].point_index].birth, 3000.0);
    ASSERT_EQ(m.unmatched.size(), 1u);
    EXPECT_EQ(d.points[m.unmatched[0]].birth, 500.0);
}

TEST(MatchLoops, NoLoopsIsLegal) {
    GrayImage img(5, 5, 1.0);
    PartitionLabeling lab{5, 5, std::vector<std::uint32_t>(25, 0), {}, {{0, Role::background()}}};
    auto m = match_loops(compute_diagram(img), lab, img);
    EXPECT_TRUE(m.pairs.empty());
}

TEST(LocalizeValue, UniqueTiedAndHinted) {
    GrayImage img(3, 2, {3778, 1, 2, 5, 5, 0});
    auto u = localize_value(img, 3778);
    ASSERT_EQ(u.size(), 1u);
    EXPECT_EQ(u[0], (Pixel{0, 0}));
    EXPECT_EQ(localize_value(img, 5).size(), 2u);
    GrayImage smooth(3, 2, {0, 0, 0, 4.0, 4.6, 0});
    auto h = localize_value(img, 5, &smooth, 4.5);
    ASSERT_EQ(h.size(), 1u);
    EXPECT_EQ(h[0], (Pixel{1, 1}));
    EXPECT_THROW(localize_value(img, 42), LookupError);
}

TEST(MatchLoops, AnyTiedPixelInTheLoopSuffices) {
    // Birth value 3000 also appears once in the background; the loop copy still matches.
    auto [clean, lab] = generate(centered_ring(40, 40, 12, 4, 0, 1000, 3000, 0.0), 0);
    std::vector<double> v(clean.data().begin(), clean.data().end());
    v[clean.index(1, 1)] = 3000;
    GrayImage img(40, 40, v);
    auto m = match_loops(compute_diagram(img), lab, img);
    EXPECT_EQ(m.pairs.size(), 1u);
}

TEST(MatchLoops, HintedMatchingOnTiedImage) {
    auto [img, lab] = generate(centered_ring(40, 40, 12, 4, 0, 1000, 3000, 0.0), 0);
    auto d = compute_diagram(img);
    SmoothedHint hint{&img, &d};
    auto m = match_loops(d, lab, img, hint);
    EXPECT_EQ(m.pairs.size(), 1u);
}

TEST(PartdaEstimates, CoverageSmoke) {
    auto spec = centered_ring(100, 100, 30, 7, 0, 1000, 3000, 150.0);
    auto [img, lab] = generate(spec, 11);
    auto d = compute_diagram(img);
    auto est = partda_estimates(img, lab, match_loops(d, lab, img));
    ASSERT_EQ(est.size(), 1u);
    ASSERT_TRUE(est[0].region.has_value());
    EXPECT_NEAR(est[0].persistence.estimate, 2000, 50);
}
