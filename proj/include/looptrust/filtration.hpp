#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <vector>

#include "looptrust/image.hpp"

namespace looptrust {

enum class Direction { UpperLevel, LowerLevel };

/// Simplicial complex on the pixel grid with filtration values.
///
/// Vertices are pixel centers (index y*width + x). Every unit square is split by the
/// diagonal from its top-left to its bottom-right vertex, giving one diagonal edge and two
/// triangles per square (Freudenthal triangulation). A simplex takes the minimum of its
/// vertex intensities under UpperLevel and the maximum under LowerLevel.
struct FilteredComplex {
    int width = 0;
    int height = 0;
    Direction direction = Direction::UpperLevel;

    std::vector<double> vertex_values;
    std::vector<std::array<std::uint32_t, 2>> edges;  // ascending vertex ids
    std::vector<double> edge_values;
    std::vector<std::array<std::uint32_t, 3>> triangles;  // ascending vertex ids
    std::vector<std::array<std::uint32_t, 3>> triangle_edges;  // boundary edge ids
    std::vector<double> triangle_values;

    std::size_t vertex_count() const noexcept { return vertex_values.size(); }
    std::size_t edge_count() const noexcept { return edges.size(); }
    std::size_t triangle_count() const noexcept { return triangles.size(); }
    std::size_t simplex_count() const noexcept { return vertex_count() + edge_count() + triangle_count(); }

    Pixel vertex_pixel(std::uint32_t v) const noexcept {
        return {static_cast<int>(v % static_cast<std::uint32_t>(width)),
                static_cast<int>(v / static_cast<std::uint32_t>(width))};
    }

    /// True when a simplex with value `a` enters strictly before one with value `b`.
    bool enters_before(double a, double b) const noexcept {
        return direction == Direction::UpperLevel ? a > b : a < b;
    }
    /// True when `a` is at least as early as `b` in the sweep (a >= b for UpperLevel).
    bool no_later(double a, double b) const noexcept { return !enters_before(b, a); }
};

/// Reference to a simplex: dimension plus index into the per-dimension arrays.
struct SimplexId {
    std::uint8_t dim = 0;
    std::uint32_t index = 0;

    friend bool operator==(const SimplexId&, const SimplexId&) = default;
};

inline FilteredComplex build_complex(const GrayImage& image, Direction direction = Direction::UpperLevel) {
    FilteredComplex fc;
    fc.width = image.width();
    fc.height = image.height();
    fc.direction = direction;
    const auto w = static_cast<std::uint32_t>(image.width());
    const auto h = static_cast<std::uint32_t>(image.height());
    fc.vertex_values.assign(image.data().begin(), image.data().end());

    auto combine = [direction](double a, double b) {
        return direction == Direction::UpperLevel ? std::min(a, b) : std::max(a, b);
    };
    auto vid = [w](std::uint32_t x, std::uint32_t y) { return y * w + x; };

    // Edge ids are laid out per vertex so triangle boundaries can be found by arithmetic.
    const std::uint32_t no_edge = 0xFFFFFFFFu;
    std::vector<std::uint32_t> right(w * h, no_edge), down(w * h, no_edge), diag(w * h, no_edge);
    const std::size_t n_edges = static_cast<std::size_t>(w - 1) * h + static_cast<std::size_t>(h - 1) * w +
                                static_cast<std::size_t>(w - 1) * (h - 1);
    fc.edges.reserve(n_edges);
    fc.edge_values.reserve(n_edges);
    auto add_edge = [&](std::uint32_t a, std::uint32_t b) {
        fc.edges.push_back({a, b});
        fc.edge_values.push_back(combine(fc.vertex_values[a], fc.vertex_values[b]));
        return static_cast<std::uint32_t>(fc.edges.size() - 1);
    };
    for (std::uint32_t y = 0; y < h; ++y) {
        for (std::uint32_t x = 0; x < w; ++x) {
            const std::uint32_t v = vid(x, y);
            if (x + 1 < w) right[v] = add_edge(v, vid(x + 1, y));
            if (y + 1 < h) down[v] = add_edge(v, vid(x, y + 1));
            if (x + 1 < w && y + 1 < h) diag[v] = add_edge(v, vid(x + 1, y + 1));
        }
    }

    const std::size_t n_tri = 2 * static_cast<std::size_t>(w - 1) * (h - 1);
    fc.triangles.reserve(n_tri);
    fc.triangle_edges.reserve(n_tri);
    fc.triangle_values.reserve(n_tri);
    for (std::uint32_t y = 0; y + 1 < h; ++y) {
        for (std::uint32_t x = 0; x + 1 < w; ++x) {
            const std::uint32_t tl = vid(x, y), tr = vid(x + 1, y), bl = vid(x, y + 1), br = vid(x + 1, y + 1);
            // upper-right triangle {tl, tr, br}
            fc.triangles.push_back({tl, tr, br});
            fc.triangle_edges.push_back({right[tl], down[tr], diag[tl]});
            fc.triangle_values.push_back(combine(combine(fc.vertex_values[tl], fc.vertex_values[tr]),
                                                 fc.vertex_values[br]));
            // lower-left triangle {tl, bl, br}
            fc.triangles.push_back({tl, bl, br});
            fc.triangle_edges.push_back({down[tl], right[bl], diag[tl]});
            fc.triangle_values.push_back(combine(combine(fc.vertex_values[tl], fc.vertex_values[bl]),
                                                 fc.vertex_values[br]));
        }
    }
    return fc;
}

inline double simplex_value(const FilteredComplex& fc, SimplexId s) {
    switch (s.dim) {
        case 0: return fc.vertex_values[s.index];
        case 1: return fc.edge_values[s.index];
        default: return fc.triangle_values[s.index];
    }
}

/// Vertex ids of a simplex, ascending, padded with 0 beyond its dimension.
inline std::array<std::uint32_t, 3> simplex_vertices(const FilteredComplex& fc, SimplexId s) {
    switch (s.dim) {
        case 0: return {s.index, 0, 0};
        case 1: return {fc.edges[s.index][0], fc.edges[s.index][1], 0};
        default: return fc.triangles[s.index];
    }
}

/// Total order of all simplices: by entry value along the sweep, then vertices before edges
/// before triangles, then lexicographically by vertex ids. Faces always precede cofaces.
inline std::vector<SimplexId> filtration_order(const FilteredComplex& fc) {
    struct Key {
        double value;
        std::array<std::uint32_t, 3> verts;
        SimplexId id;
    };
    std::vector<Key> keys;
    keys.reserve(fc.simplex_count());
    const double sign = fc.direction == Direction::UpperLevel ? -1.0 : 1.0;
    for (std::uint32_t v = 0; v < fc.vertex_count(); ++v) keys.push_back({sign * fc.vertex_values[v], {v, 0, 0}, {0, v}});
    for (std::uint32_t e = 0; e < fc.edge_count(); ++e)
        keys.push_back({sign * fc.edge_values[e], {fc.edges[e][0], fc.edges[e][1], 0}, {1, e}});
    for (std::uint32_t t = 0; t < fc.triangle_count(); ++t)
        keys.push_back({sign * fc.triangle_values[t], fc.triangles[t], {2, t}});

    std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
        if (a.value != b.value) return a.value < b.value;
        if (a.id.dim != b.id.dim) return a.id.dim < b.id.dim;
        return a.verts < b.verts;
    });
    std::vector<SimplexId> order;
    order.reserve(keys.size());
    for (const Key& k : keys) order.push_back(k.id);
    return order;
}

/// Debug listing: one "dim, vertex-ids, value" line per simplex in filtration order.
inline void write_complex_dump(const FilteredComplex& fc, std::ostream& out) {
    for (SimplexId s : filtration_order(fc)) {
        auto v = simplex_vertices(fc, s);
        out << int(s.dim) << ", " << v[0];
        for (int k = 1; k <= s.dim; ++k) out << ' ' << v[static_cast<std::size_t>(k)];
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", simplex_value(fc, s));
        out << ", " << buf << '\n';
    }
}

}  // namespace looptrust
