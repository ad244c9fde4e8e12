#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "looptrust/bottleneck.hpp"
#include "looptrust/ring.hpp"
#include "looptrust/stda.hpp"

using namespace looptrust;

TEST(LocalPolySmooth, ConstantsReproducedAtEveryDegree) {
    GrayImage img(15, 12, 42.0);
    for (int degree : {0, 1, 2}) {
        auto s = local_poly_smooth(img, degree, 0.3);
        for (double v : s.data()) EXPECT_NEAR(v, 42.0, 1e-9);
    }
}

TEST(LocalPolySmooth, QuadraticReproducedByDegreeTwo) {
    const int w = 20, h = 15;
    std::vector<double> v;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) v.push_back(3.0 + 0.5 * x - 2.0 * y + 0.25 * x * x - 0.1 * x * y + 0.3 * y * y);
    GrayImage img(w, h, v);
    auto s = local_poly_smooth(img, 2, 0.3);
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(s[i], img[i], 1e-6 * std::max(1.0, std::abs(img[i])));
}

TEST(LocalPolySmooth, LinearReproducedByDegreeOne) {
    std::vector<double> v;
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 12; ++x) v.push_back(1.0 + 2.0 * x - 0.5 * y);
    GrayImage img(12, 10, v);
    auto s = local_poly_smooth(img, 1, 0.2);
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(s[i], img[i], 1e-9 * std::max(1.0, std::abs(img[i])));
}

TEST(LocalPolySmooth, TinyNeighbourhoodIsRankDeficient) {
    EXPECT_THROW(LocalPolySmoother(10, 10, 2, 0.03), RankDeficiency);
    EXPECT_THROW(LocalPolySmoother(10, 10, 1, 0.005), RankDeficiency);
    EXPECT_THROW(LocalPolySmoother(10, 10, 3, 0.3), InvalidArgument);
    EXPECT_THROW(LocalPolySmoother(10, 10, 2, 1.5), InvalidArgument);
}

TEST(LocalPolySmooth, DenseBatchAgreesWithRows) {
    LocalPolySmoother sm(16, 16, 2, 0.3);
    ASSERT_TRUE(sm.dense_available());
    auto img = generate(centered_ring(16, 16, 5, 2, 0, 1000, 3000, 100.0), 1).first;
    Eigen::MatrixXf col(static_cast<Eigen::Index>(img.size()), 1);
    for (std::size_t i = 0; i < img.size(); ++i) col(static_cast<Eigen::Index>(i), 0) = static_cast<float>(img[i]);
    auto dense = sm.apply_batch(col);
    auto exact = sm.apply(img);
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(dense(static_cast<Eigen::Index>(i), 0), exact[i], 1e-3 * 3000);
}

TEST(LocalPolySmooth, SmoothedRingKeepsOneDominantLoop) {
    LocalPolySmoother sm(100, 100, 2, 0.3);
    auto spec = centered_ring(100, 100, 30, 7, 0, 1000, 3000, 0.0);
    auto clean = sm.apply(generate(spec, 0).first);
    auto truth_h1 = compute_diagram(clean);
    auto idx = by_decreasing_persistence(truth_h1, 1);
    ASSERT_FALSE(idx.empty());
    const double truth_pers = truth_h1.points[idx[0]].persistence();
    spec.sigma = 150.0;
    auto noisy = sm.apply(generate(spec, 9).first);
    auto d = compute_diagram(noisy);
    int dominant = 0;
    for (const auto& p : d.of_dim(1, false)) dominant += p.persistence() > truth_pers / 2;
    EXPECT_EQ(dominant, 1);
}

TEST(StratifiedBootstrap, ConstantSingleStratum) {
    GrayImage img(6, 5, 3.5);
    PartitionLabeling lab{6, 5, std::vector<std::uint32_t>(30, 0), {}, {{0, Role::background()}}};
    EXPECT_EQ(stratified_bootstrap(img, lab, 1), img);
}

TEST(StratifiedBootstrap, ValuesStayInTheirStratum) {
    auto [img, lab] = generate(centered_ring(30, 30, 10, 3, 0, 1000, 3000, 50.0), 2);
    lab.edge.assign(lab.size(), 0);
    lab.edge[lab.index({15, 5})] = 1;  // a loop pixel flagged as edge forms its own stratum
    std::map<std::uint64_t, std::multiset<double>> pools;
    auto key = [&](std::size_t i) -> std::uint64_t { return lab.is_edge(i) ? 99 : lab.label[i]; };
    for (std::size_t i = 0; i < img.size(); ++i) pools[key(i)].insert(img[i]);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto boot = stratified_bootstrap(img, lab, seed);
        for (std::size_t i = 0; i < img.size(); ++i) EXPECT_TRUE(pools[key(i)].count(boot[i]));
        EXPECT_EQ(boot[lab.index({15, 5})], img[lab.index({15, 5})]);
    }
    EXPECT_EQ(stratified_bootstrap(img, lab, 7), stratified_bootstrap(img, lab, 7));
}

TEST(StratifiedBootstrap, StratumMeanPreservedInExpectation) {
    auto [img, lab] = generate(centered_ring(12, 12, 4, 1, 0, 1000, 3000, 200.0), 4);
    const auto loop = lab.pixels_with_role(Role::loop_of(1));
    double orig = 0.0, ss = 0.0;
    for (auto i : loop) orig += img[i];
    orig /= static_cast<double>(loop.size());
    for (auto i : loop) ss += (img[i] - orig) * (img[i] - orig);
    const double pop_var = ss / static_cast<double>(loop.size());
    const int R = 10000;
    double total = 0.0;
    for (int r = 0; r < R; ++r) {
        auto b = stratified_bootstrap(img, lab, split_seed(3, {static_cast<std::uint64_t>(r)}));
        double m = 0.0;
        for (auto i : loop) m += b[i];
        total += m / static_cast<double>(loop.size());
    }
    const double se = std::sqrt(pop_var / static_cast<double>(loop.size()) / R);
    EXPECT_LT(std::abs(total / R - orig), 4 * se);
}

TEST(StdaBand, NoiselessImageHasZeroBand) {
    auto [img, lab] = generate(centered_ring(20, 20, 6, 2, 0, 1000, 3000, 0.0), 0);
    auto band = stda_band(img, lab, 2, 0.3, 100, 0.05, 1);
    EXPECT_EQ(band.c_n, 0.0);
    for (double d : band.distances) EXPECT_EQ(d, 0.0);
}

TEST(StdaBand, QuantileIsTheOrderStatistic) {
    auto [img, lab] = generate(centered_ring(20, 20, 6, 2, 0, 1000, 3000, 100.0), 0);
    auto band = stda_band(img, lab, 2, 0.3, 100, 0.05, 1);
    ASSERT_EQ(band.distances.size(), 100u);
    auto sorted = band.distances;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(band.c_n, sorted[94]);
    for (double d : band.distances) EXPECT_GE(d, 0.0);
    EXPECT_EQ(band_quantile({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 0.05), 10.0);
    EXPECT_EQ(band_quantile({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 0.2), 8.0);
}

TEST(StdaBand, NonDecreasingInNoise) {
    LocalPolySmoother sm(30, 30, 2, 0.3);
    double prev = 0.0;
    for (double sigma : {50.0, 150.0, 250.0, 350.0}) {
        auto [img, lab] = generate(centered_ring(30, 30, 10, 3, 0, 1000, 3000, sigma), 5);
        auto band = stda_band(img, lab, sm, 100, 0.05, 8);
        EXPECT_GE(band.c_n, prev);
        prev = band.c_n;
    }
}

TEST(StdaBand, BottleneckBoundedBySupNorm) {
    LocalPolySmoother sm(24, 24, 2, 0.3);
    auto [img, lab] = generate(centered_ring(24, 24, 8, 3, 0, 1000, 3000, 150.0), 6);
    const auto base = sm.apply(img);
    const auto base_d = compute_diagram(base);
    for (std::uint64_t b = 0; b < 20; ++b) {
        const auto boot = sm.apply(stratified_bootstrap(img, lab, split_seed(1, {b})));
        double sup = 0.0;
        for (std::size_t i = 0; i < boot.size(); ++i) sup = std::max(sup, std::abs(boot[i] - base[i]));
        const auto d = compute_diagram(boot);
        EXPECT_LE(bottleneck_distance(d, base_d, 0), sup + 1e-9);
        EXPECT_LE(bottleneck_distance(d, base_d, 1), sup + 1e-9);
    }
}

TEST(BandToRegions, Examples) {
    PersistenceDiagram d;
    DiagramPoint p;
    p.dim = 1;
    p.death = 1000;
    p.birth = 3000;
    d.points.push_back(p);
    BootstrapBand zero;
    auto r0 = band_to_regions(zero, d);
    ASSERT_EQ(r0.size(), 1u);
    EXPECT_TRUE(r0[0].significant);
    EXPECT_EQ(r0[0].area(), 0.0);
    BootstrapBand wide;
    wide.c_n = 1500;
    auto r1 = band_to_regions(wide, d);
    EXPECT_FALSE(r1[0].significant);
    EXPECT_EQ(r1[0].area(), 9e6);
    EXPECT_TRUE(r1[0].contains(2000, 2000));
}
