#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "looptrust/filtration.hpp"
#include "looptrust/image.hpp"
#include "looptrust/image_io.hpp"

namespace looptrust {

/// One (death, birth) record. Under the upper-level convention birth >= death.
struct DiagramPoint {
    int dim = 0;
    double death = 0.0;
    double birth = 0.0;
    bool essential = false;
    Pixel birth_vertex;
    std::optional<Pixel> death_vertex;

    double persistence() const noexcept { return std::abs(birth - death); }

    friend bool operator==(const DiagramPoint&, const DiagramPoint&) = default;
};

struct PersistenceDiagram {
    Direction direction = Direction::UpperLevel;
    std::vector<DiagramPoint> points;

    std::vector<DiagramPoint> of_dim(int dim, bool include_essential = true) const {
        std::vector<DiagramPoint> out;
        for (const auto& p : points)
            if (p.dim == dim && (include_essential || !p.essential)) out.push_back(p);
        return out;
    }
    std::size_t count(int dim) const {
        return static_cast<std::size_t>(
            std::count_if(points.begin(), points.end(), [dim](const DiagramPoint& p) { return p.dim == dim; }));
    }
};

namespace detail {

/// Vertex of `verts` whose value equals the simplex value; ties go to the smallest (x, y).
inline Pixel extreme_vertex(const FilteredComplex& fc, const std::uint32_t* verts, int n, double value) {
    std::optional<Pixel> best;
    for (int k = 0; k < n; ++k) {
        if (fc.vertex_values[verts[k]] != value) continue;
        Pixel p = fc.vertex_pixel(verts[k]);
        if (!best || p < *best) best = p;
    }
    return *best;
}

class UnionFind {
public:
    explicit UnionFind(std::size_t n) : parent_(n), rank_(n, 0) { std::iota(parent_.begin(), parent_.end(), 0u); }

    std::uint32_t find(std::uint32_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    /// Links two roots and returns the surviving root.
    std::uint32_t link(std::uint32_t a, std::uint32_t b) {
        if (rank_[a] < rank_[b]) std::swap(a, b);
        parent_[b] = a;
        if (rank_[a] == rank_[b]) ++rank_[a];
        return a;
    }

private:
    std::vector<std::uint32_t> parent_;
    std::vector<std::uint8_t> rank_;
};

}  // namespace detail

/// Persistence pairs of dimensions 0 and 1.
///
/// Dimension 0 is paired with union-find under the elder rule, which is exactly the pairing
/// the boundary-matrix reduction produces for edge columns; those edge columns are thereby
/// cleared. Triangle columns are then reduced over Z/2 in filtration order. Pairs with zero
/// persistence are dropped. The single essential class of dimension 0 is reported with death
/// at the last value of the sweep (the global minimum for UpperLevel).
inline PersistenceDiagram compute_diagram(const FilteredComplex& fc) {
    PersistenceDiagram diagram;
    diagram.direction = fc.direction;

    const std::vector<SimplexId> order = filtration_order(fc);
    const std::size_t nv = fc.vertex_count();
    const std::size_t ne = fc.edge_count();

    std::vector<std::uint32_t> vertex_pos(nv), edge_pos(ne);
    for (std::uint32_t i = 0; i < order.size(); ++i) {
        if (order[i].dim == 0) vertex_pos[order[i].index] = i;
        if (order[i].dim == 1) edge_pos[order[i].index] = i;
    }

    // --- dimension 0
    detail::UnionFind uf(nv);
    std::vector<std::uint32_t> oldest(nv);
    std::iota(oldest.begin(), oldest.end(), 0u);
    std::vector<std::uint8_t> positive_edge(ne, 0);

    for (const SimplexId& s : order) {
        if (s.dim != 1) continue;
        const auto& e = fc.edges[s.index];
        std::uint32_t ra = uf.find(e[0]), rb = uf.find(e[1]);
        if (ra == rb) {
            positive_edge[s.index] = 1;
            continue;
        }
        std::uint32_t elder = oldest[ra], younger = oldest[rb];
        if (vertex_pos[younger] < vertex_pos[elder]) std::swap(elder, younger);
        const double birth = fc.vertex_values[younger];
        const double death = fc.edge_values[s.index];
        if (birth != death) {
            DiagramPoint p;
            p.dim = 0;
            p.birth = birth;
            p.death = death;
            p.birth_vertex = fc.vertex_pixel(younger);
            p.death_vertex = detail::extreme_vertex(fc, e.data(), 2, death);
            diagram.points.push_back(p);
        }
        const std::uint32_t root = uf.link(ra, rb);
        oldest[root] = elder;
    }

    // --- dimension 1: reduce triangle columns
    const std::uint32_t none = 0xFFFFFFFFu;
    std::vector<std::uint32_t> pivot_owner(order.size(), none);  // edge position -> column id
    std::vector<std::vector<std::uint32_t>> columns;
    columns.reserve(fc.triangle_count());
    std::vector<std::uint32_t> scratch;
    std::vector<std::uint8_t> edge_paired(ne, 0);

    for (const SimplexId& s : order) {
        if (s.dim != 2) continue;
        const auto& te = fc.triangle_edges[s.index];
        std::vector<std::uint32_t> col{edge_pos[te[0]], edge_pos[te[1]], edge_pos[te[2]]};
        std::sort(col.begin(), col.end());
        while (!col.empty() && pivot_owner[col.back()] != none) {
            const auto& other = columns[pivot_owner[col.back()]];
            scratch.clear();
            std::set_symmetric_difference(col.begin(), col.end(), other.begin(), other.end(),
                                          std::back_inserter(scratch));
            col.swap(scratch);
        }
        const auto column_id = static_cast<std::uint32_t>(columns.size());
        if (!col.empty()) {
            pivot_owner[col.back()] = column_id;
            const SimplexId creator = order[col.back()];
            edge_paired[creator.index] = 1;
            const double birth = fc.edge_values[creator.index];
            const double death = fc.triangle_values[s.index];
            if (birth != death) {
                DiagramPoint p;
                p.dim = 1;
                p.birth = birth;
                p.death = death;
                p.birth_vertex = detail::extreme_vertex(fc, fc.edges[creator.index].data(), 2, birth);
                p.death_vertex = detail::extreme_vertex(fc, fc.triangles[s.index].data(), 3, death);
                diagram.points.push_back(p);
            }
        }
        columns.push_back(std::move(col));
    }

    // --- essential classes
    const SimplexId last_vertex = [&] {
        for (auto it = order.rbegin(); it != order.rend(); ++it)
            if (it->dim == 0) return *it;
        return order.front();
    }();
    const double sweep_end = fc.vertex_values[last_vertex.index];
    for (std::uint32_t v = 0; v < nv; ++v) {
        if (uf.find(v) != v) continue;
        DiagramPoint p;
        p.dim = 0;
        p.essential = true;
        p.birth = fc.vertex_values[oldest[v]];
        p.death = sweep_end;
        p.birth_vertex = fc.vertex_pixel(oldest[v]);
        diagram.points.push_back(p);
    }
    for (std::uint32_t e = 0; e < ne; ++e) {
        if (!positive_edge[e] || edge_paired[e]) continue;
        DiagramPoint p;
        p.dim = 1;
        p.essential = true;
        p.birth = fc.edge_values[e];
        p.death = sweep_end;
        p.birth_vertex = detail::extreme_vertex(fc, fc.edges[e].data(), 2, p.birth);
        diagram.points.push_back(p);
    }
    return diagram;
}

inline PersistenceDiagram compute_diagram(const GrayImage& image, Direction direction = Direction::UpperLevel) {
    return compute_diagram(build_complex(image, direction));
}

/// Indices of dimension-`dim` points (non-essential), most persistent first; ties keep index order.
inline std::vector<std::size_t> by_decreasing_persistence(const PersistenceDiagram& d, int dim) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < d.points.size(); ++i)
        if (d.points[i].dim == dim && !d.points[i].essential) idx.push_back(i);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return d.points[a].persistence() > d.points[b].persistence();
    });
    return idx;
}

// ---------------------------------------------------------------------------------------
// Diagram CSV

inline const char* kDiagramCsvHeader = "dim,death,birth,essential,birth_x,birth_y,death_x,death_y";

inline std::string diagram_to_csv(const PersistenceDiagram& d) {
    std::string out = std::string(kDiagramCsvHeader) + "\n";
    for (const auto& p : d.points) {
        out += std::to_string(p.dim) + "," + format_real(p.death) + "," + format_real(p.birth) + "," +
               (p.essential ? "1" : "0") + "," + std::to_string(p.birth_vertex.x) + "," +
               std::to_string(p.birth_vertex.y) + ",";
        if (p.death_vertex) out += std::to_string(p.death_vertex->x) + "," + std::to_string(p.death_vertex->y);
        else out += ",";
        out += "\n";
    }
    return out;
}

inline PersistenceDiagram parse_diagram_csv(std::string_view text) {
    PersistenceDiagram d;
    std::size_t pos = 0, row = 0;
    bool header = true;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = detail::trim(text.substr(pos, nl - pos));
        pos = nl + 1;
        ++row;
        if (line.empty()) continue;
        if (header) {
            if (line != kDiagramCsvHeader) throw ParseError("unexpected diagram header", row);
            header = false;
            continue;
        }
        std::vector<std::string_view> cells;
        std::size_t start = 0;
        while (true) {
            std::size_t comma = line.find(',', start);
            cells.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (cells.size() != 8) throw ParseError("expected 8 cells", row);
        auto num = [&](std::size_t c) {
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(cells[c].data(), cells[c].data() + cells[c].size(), v);
            if (ec != std::errc() || ptr != cells[c].data() + cells[c].size() || cells[c].empty())
                throw ParseError("non-numeric cell", row, c + 1);
            return v;
        };
        DiagramPoint p;
        p.dim = static_cast<int>(num(0));
        p.death = num(1);
        p.birth = num(2);
        p.essential = num(3) != 0.0;
        p.birth_vertex = {static_cast<int>(num(4)), static_cast<int>(num(5))};
        if (!cells[6].empty()) p.death_vertex = Pixel{static_cast<int>(num(6)), static_cast<int>(num(7))};
        d.points.push_back(p);
    }
    return d;
}

}  // namespace looptrust
