#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "looptrust/errors.hpp"
#include "looptrust/image.hpp"
#include "looptrust/rng.hpp"

namespace looptrust {

enum class NoiseFamily { Gaussian };
enum class RingShape { Rectangle, Disk };

struct Ring {
    Pixel center;
    int outer_half_extent = 1;
    int thickness = 1;
    double mu_loop = 0.0;
    double mu_interior = 0.0;
};

/// Piecewise-constant ring pattern plus homoscedastic noise.
struct RingSpec {
    int width = 0;
    int height = 0;
    std::vector<Ring> rings;
    double mu_background = 0.0;
    double sigma = 0.0;
    NoiseFamily noise = NoiseFamily::Gaussian;
    RingShape shape = RingShape::Rectangle;
};

namespace detail {

/// Distance from the ring center used to classify a pixel: Chebyshev for rectangles,
/// Euclidean for disks.
inline double ring_distance(RingShape shape, int dx, int dy) {
    if (shape == RingShape::Rectangle) return std::max(std::abs(dx), std::abs(dy));
    return std::sqrt(static_cast<double>(dx) * dx + static_cast<double>(dy) * dy);
}

}  // namespace detail

inline void validate(const RingSpec& spec) {
    if (spec.width < 2 || spec.height < 2) throw InvalidSpec("image must be at least 2x2");
    if (!(spec.sigma >= 0.0) || !std::isfinite(spec.sigma)) throw InvalidSpec("sigma must be finite and >= 0");
    if (!std::isfinite(spec.mu_background)) throw InvalidSpec("mu_background must be finite");
    for (std::size_t i = 0; i < spec.rings.size(); ++i) {
        const Ring& r = spec.rings[i];
        const std::string tag = "ring " + std::to_string(i + 1);
        if (r.outer_half_extent < 1) throw InvalidSpec(tag + ": outer_half_extent must be positive");
        if (r.thickness < 1) throw InvalidSpec(tag + ": thickness must be positive");
        if (r.thickness >= r.outer_half_extent) throw InvalidSpec(tag + ": thickness must be < outer_half_extent");
        if (!std::isfinite(r.mu_loop) || !std::isfinite(r.mu_interior)) throw InvalidSpec(tag + ": means must be finite");
        const int e = r.outer_half_extent;
        if (r.center.x - e < 1 || r.center.y - e < 1 || r.center.x + e > spec.width - 2 ||
            r.center.y + e > spec.height - 2)
            throw InvalidSpec(tag + " touches the image border");
        for (std::size_t j = 0; j < i; ++j) {
            const Ring& o = spec.rings[j];
            // bounding boxes must be separated by at least one background pixel
            const int gap_x = std::abs(r.center.x - o.center.x) - e - o.outer_half_extent;
            const int gap_y = std::abs(r.center.y - o.center.y) - e - o.outer_half_extent;
            if (gap_x < 2 && gap_y < 2)
                throw InvalidSpec(tag + " overlaps or touches ring " + std::to_string(j + 1));
        }
    }
}

/// Noise-free partition: label 0 is background, ring i (1-based) has loop label 2i-1
/// and interior label 2i.
inline PartitionLabeling truth_labeling(const RingSpec& spec) {
    validate(spec);
    PartitionLabeling lab;
    lab.width = spec.width;
    lab.height = spec.height;
    lab.label.assign(static_cast<std::size_t>(spec.width) * spec.height, 0);
    lab.roles[0] = Role::background();
    for (std::size_t k = 0; k < spec.rings.size(); ++k) {
        const Ring& r = spec.rings[k];
        const int i = static_cast<int>(k) + 1;
        const auto loop_label = static_cast<std::uint32_t>(2 * i - 1);
        const auto interior_label = static_cast<std::uint32_t>(2 * i);
        lab.roles[loop_label] = Role::loop_of(i);
        lab.roles[interior_label] = Role::interior_of(i);
        const int e = r.outer_half_extent;
        for (int y = r.center.y - e; y <= r.center.y + e; ++y) {
            for (int x = r.center.x - e; x <= r.center.x + e; ++x) {
                const double d = detail::ring_distance(spec.shape, x - r.center.x, y - r.center.y);
                const std::size_t idx = static_cast<std::size_t>(y) * spec.width + x;
                if (d <= r.outer_half_extent - r.thickness)
                    lab.label[idx] = interior_label;
                else if (d <= r.outer_half_extent)
                    lab.label[idx] = loop_label;
            }
        }
    }
    return lab;
}

/// Per-pixel mean of the noise-free pattern.
inline GrayImage noise_free_image(const RingSpec& spec, const PartitionLabeling& truth) {
    std::vector<double> values(truth.size(), spec.mu_background);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const Role r = truth.role_at(i);
        if (r.kind == RoleKind::Loop) values[i] = spec.rings[r.loop - 1].mu_loop;
        if (r.kind == RoleKind::Interior) values[i] = spec.rings[r.loop - 1].mu_interior;
    }
    return GrayImage(spec.width, spec.height, std::move(values));
}

/// Draws Z(x,y) = mu_k(x,y) + eps, eps ~ N(0, sigma^2), one draw per pixel in row-major order.
inline std::pair<GrayImage, PartitionLabeling> generate(const RingSpec& spec, std::uint64_t seed) {
    PartitionLabeling truth = truth_labeling(spec);
    GrayImage clean = noise_free_image(spec, truth);
    if (spec.sigma == 0.0) return {std::move(clean), std::move(truth)};

    Rng rng = make_rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> values(clean.data().begin(), clean.data().end());
    for (double& v : values) v += spec.sigma * noise(rng);
    return {GrayImage(spec.width, spec.height, std::move(values)), std::move(truth)};
}

/// Single centered ring, the geometry used by the simulation studies.
inline RingSpec centered_ring(int width, int height, int outer_half_extent, int thickness, double mu_background,
                              double mu_interior, double mu_loop, double sigma,
                              RingShape shape = RingShape::Rectangle) {
    RingSpec spec;
    spec.width = width;
    spec.height = height;
    spec.mu_background = mu_background;
    spec.sigma = sigma;
    spec.shape = shape;
    spec.rings.push_back(Ring{{width / 2, height / 2}, outer_half_extent, thickness, mu_loop, mu_interior});
    return spec;
}

}  // namespace looptrust
