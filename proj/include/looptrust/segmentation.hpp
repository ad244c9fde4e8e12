#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "looptrust/errors.hpp"
#include "looptrust/image.hpp"
#include "looptrust/image_io.hpp"
#include "looptrust/stats.hpp"

namespace looptrust {

/// Boundary pixels separating partitions. Removing them leaves the partitions as the
/// 4-connected components of the rest of the grid.
struct EdgeSet {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> mask;

    static EdgeSet empty(int w, int h) {
        return {w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0)};
    }

    std::size_t size() const noexcept { return mask.size(); }
    std::size_t index(int x, int y) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x);
    }
    bool contains(Pixel p) const noexcept { return mask[index(p.x, p.y)] != 0; }
    void insert(Pixel p) { mask[index(p.x, p.y)] = 1; }
    std::size_t count() const noexcept { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)); }

    std::vector<Pixel> pixels() const {
        std::vector<Pixel> out;
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (mask[i]) out.push_back({static_cast<int>(i % width), static_cast<int>(i / width)});
        return out;
    }

    friend bool operator==(const EdgeSet&, const EdgeSet&) = default;
};

namespace detail {

inline constexpr std::array<std::array<int, 2>, 4> kNeighbours4{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};

inline int mirror(int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
}

inline std::vector<double> gaussian_smooth(const GrayImage& img, double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) total += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (double& v : k) v /= total;

    const int w = img.width(), h = img.height();
    std::vector<double> tmp(img.size()), out(img.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) s += k[static_cast<std::size_t>(i + radius)] * img(mirror(x + i, w), y);
            tmp[img.index(x, y)] = s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i)
                s += k[static_cast<std::size_t>(i + radius)] * tmp[img.index(x, mirror(y + i, h))];
            out[img.index(x, y)] = s;
        }
    return out;
}

/// Otsu threshold of non-negative values over a 256-bin histogram on [0, max].
inline double otsu_threshold(const std::vector<double>& values) {
    const double top = *std::max_element(values.begin(), values.end());
    if (!(top > 0.0)) return 0.0;
    constexpr int kBins = 256;
    std::array<double, kBins> hist{};
    for (double v : values) hist[static_cast<std::size_t>(std::min(kBins - 1, static_cast<int>(v / top * kBins)))] += 1.0;
    const double n = static_cast<double>(values.size());
    double sum_all = 0.0;
    for (int b = 0; b < kBins; ++b) sum_all += b * hist[static_cast<std::size_t>(b)];
    double w0 = 0.0, sum0 = 0.0, best = -1.0;
    int best_bin = 0;
    for (int b = 0; b < kBins; ++b) {
        w0 += hist[static_cast<std::size_t>(b)];
        sum0 += b * hist[static_cast<std::size_t>(b)];
        const double w1 = n - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (between > best) {
            best = between;
            best_bin = b;
        }
    }
    return (best_bin + 1) * top / kBins;
}

}  // namespace detail

/// Edge pixels from the Laplacian of the Gaussian-smoothed image.
///
/// Gradient-strength maxima across a boundary are where the second derivative changes sign, so
/// a pixel is an edge when its Laplacian has the opposite sign to a 4-neighbour's, it is the
/// member of that pair closer to zero, and its gradient magnitude exceeds the threshold. Taking
/// one pixel from every sign-changing pair keeps the contours closed under 4-connectivity. When
/// no threshold is given, Otsu's method on the gradient-magnitude histogram picks one.
inline EdgeSet detect_edges(const GrayImage& img, double gaussian_sigma = 2.0,
                            std::optional<double> gradient_threshold = std::nullopt) {
    if (!(gaussian_sigma > 0.0)) throw InvalidArgument("gaussian_sigma must be positive");
    if (gradient_threshold && !(*gradient_threshold >= 0.0))
        throw InvalidArgument("gradient_threshold must be non-negative");
    const int w = img.width(), h = img.height();
    const std::vector<double> s = detail::gaussian_smooth(img, gaussian_sigma);
    auto at = [&](int x, int y) { return s[img.index(detail::mirror(x, w), detail::mirror(y, h))]; };

    std::vector<double> lap(img.size()), grad(img.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double c = at(x, y);
            lap[img.index(x, y)] = at(x + 1, y) + at(x - 1, y) + at(x, y + 1) + at(x, y - 1) - 4.0 * c;
            const double gx = 0.5 * (at(x + 1, y) - at(x - 1, y));
            const double gy = 0.5 * (at(x, y + 1) - at(x, y - 1));
            grad[img.index(x, y)] = std::hypot(gx, gy);
        }
    const double threshold = gradient_threshold ? *gradient_threshold : detail::otsu_threshold(grad);

    EdgeSet edges = EdgeSet::empty(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t i = img.index(x, y);
            if (!(grad[i] > threshold)) continue;
            for (auto [dx, dy] : detail::kNeighbours4) {
                const int nx = x + dx, ny = y + dy;
                if (!img.contains(nx, ny)) continue;
                const double other = lap[img.index(nx, ny)];
                if (lap[i] * other < 0.0 && std::abs(lap[i]) <= std::abs(other)) {
                    edges.mask[i] = 1;
                    break;
                }
            }
        }
    return edges;
}

enum class EdgePolicy {
    HoldOut,        // edge pixels carry PartitionLabeling::kUnlabeled
    AssignNearest,  // edge pixels join the nearby region whose trimmed mean is closest
};

struct LabelOptions {
    EdgePolicy edge_policy = EdgePolicy::HoldOut;
    std::size_t min_region_size = 4;  // smaller components are absorbed into the edge set
};

namespace detail {

/// 4-connected components of the pixels where `open` is set. Returns (component id per
/// pixel or -1, component sizes).
inline std::pair<std::vector<int>, std::vector<std::size_t>> components4(int w, int h,
                                                                           const std::vector<std::uint8_t>& open) {
    std::vector<int> comp(open.size(), -1);
    std::vector<std::size_t> sizes;
    std::vector<std::size_t> stack;
    for (std::size_t s = 0; s < open.size(); ++s) {
        if (!open[s] || comp[s] >= 0) continue;
        const int id = static_cast<int>(sizes.size());
        sizes.push_back(0);
        comp[s] = id;
        stack.push_back(s);
        while (!stack.empty()) {
            const std::size_t u = stack.back();
            stack.pop_back();
            ++sizes.back();
            const int x = static_cast<int>(u % w), y = static_cast<int>(u / w);
            for (auto [dx, dy] : kNeighbours4) {
                const int nx = x + dx, ny = y + dy;
                if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                const std::size_t v = static_cast<std::size_t>(ny) * w + nx;
                if (open[v] && comp[v] < 0) {
                    comp[v] = id;
                    stack.push_back(v);
                }
            }
        }
    }
    return {std::move(comp), std::move(sizes)};
}

inline bool on_border(std::size_t i, int w, int h) {
    const int x = static_cast<int>(i % w), y = static_cast<int>(i / w);
    return x == 0 || y == 0 || x == w - 1 || y == h - 1;
}

}  // namespace detail

/// Regions of the complement of the edge set, labelled 0..n_p.
///
/// Label 0 is the largest region touching the image border (the largest region overall if none
/// does); the remaining labels follow raster order of each region's first pixel. All roles are
/// left as Background (label 0, when it touches the border) or Other; see infer_roles.
inline PartitionLabeling label_regions(const EdgeSet& edges, const GrayImage* image, const LabelOptions& opts = {}) {
    const int w = edges.width, h = edges.height;
    std::vector<std::uint8_t> is_edge = edges.mask;
    std::vector<std::uint8_t> open(is_edge.size());
    for (std::size_t i = 0; i < open.size(); ++i) open[i] = !is_edge[i];

    auto [comp, sizes] = detail::components4(w, h, open);
    // absorb speckle into the edge set
    bool absorbed = false;
    for (std::size_t i = 0; i < comp.size(); ++i)
        if (comp[i] >= 0 && sizes[static_cast<std::size_t>(comp[i])] < opts.min_region_size) {
            is_edge[i] = 1;
            open[i] = 0;
            absorbed = true;
        }
    if (absorbed) std::tie(comp, sizes) = detail::components4(w, h, open);
    if (sizes.empty()) throw DegenerateSegmentation("segmentation left no non-edge pixels");

    std::vector<std::uint8_t> touches(sizes.size(), 0);
    for (std::size_t i = 0; i < comp.size(); ++i)
        if (comp[i] >= 0 && detail::on_border(i, w, h)) touches[static_cast<std::size_t>(comp[i])] = 1;
    int root = -1;
    for (int pass = 0; pass < 2 && root < 0; ++pass)
        for (std::size_t c = 0; c < sizes.size(); ++c) {
            if (pass == 0 && !touches[c]) continue;
            if (root < 0 || sizes[c] > sizes[static_cast<std::size_t>(root)]) root = static_cast<int>(c);
        }
    // components are already numbered in raster order of their first pixel
    std::vector<std::uint32_t> relabel(sizes.size());
    std::uint32_t next = 1;
    for (std::size_t c = 0; c < sizes.size(); ++c) relabel[c] = static_cast<int>(c) == root ? 0u : next++;

    PartitionLabeling lab;
    lab.width = w;
    lab.height = h;
    lab.label.assign(comp.size(), PartitionLabeling::kUnlabeled);
    lab.edge = is_edge;
    for (std::size_t i = 0; i < comp.size(); ++i)
        if (comp[i] >= 0) lab.label[i] = relabel[static_cast<std::size_t>(comp[i])];
    for (std::uint32_t l = 0; l < next; ++l) lab.roles[l] = Role::other();
    if (touches[static_cast<std::size_t>(root)]) lab.roles[0] = Role::background();

    if (opts.edge_policy == EdgePolicy::AssignNearest) {
        if (!image) throw InvalidArgument("AssignNearest needs the image");
        std::vector<std::vector<double>> values(next);
        for (std::size_t i = 0; i < comp.size(); ++i)
            if (lab.label[i] != PartitionLabeling::kUnlabeled) values[lab.label[i]].push_back((*image)[i]);
        std::vector<double> trimmed(next);
        for (std::uint32_t l = 0; l < next; ++l) trimmed[l] = fenced_mean(values[l]);

        const std::vector<std::uint32_t> base = lab.label;
        for (std::size_t i = 0; i < comp.size(); ++i) {
            if (!is_edge[i]) continue;
            const int x = static_cast<int>(i % w), y = static_cast<int>(i / w);
            const double z = (*image)[i];
            for (int r = 1; r < std::max(w, h); ++r) {
                std::optional<std::uint32_t> best;
                for (int yy = std::max(0, y - r); yy <= std::min(h - 1, y + r); ++yy)
                    for (int xx = std::max(0, x - r); xx <= std::min(w - 1, x + r); ++xx) {
                        const std::uint32_t l = base[static_cast<std::size_t>(yy) * w + xx];
                        if (l == PartitionLabeling::kUnlabeled) continue;
                        if (!best || std::abs(z - trimmed[l]) < std::abs(z - trimmed[*best]) ||
                            (std::abs(z - trimmed[l]) == std::abs(z - trimmed[*best]) && l < *best))
                            best = l;
                    }
                if (best) {
                    lab.label[i] = *best;
                    break;
                }
            }
        }
    }
    return lab;
}

inline PartitionLabeling label_regions(const EdgeSet& edges, const LabelOptions& opts = {}) {
    return label_regions(edges, nullptr, opts);
}

/// Assigns Background / Loop(i) / Interior(i) roles from region nesting.
///
/// Region A contains region B when B cannot be reached from the image border without entering
/// A. Border-touching regions are Background. A region contained by no other non-background
/// region and containing at least one region is a loop; loops are numbered by ascending label,
/// and every region inside loop i is Interior(i). Anything nested deeper is rejected.
inline PartitionLabeling infer_roles(PartitionLabeling lab) {
    const int w = lab.width, h = lab.height;
    std::vector<std::uint32_t> ids;
    for (const auto& [l, _] : lab.roles) ids.push_back(l);
    for (std::uint32_t l : lab.label)
        if (l != PartitionLabeling::kUnlabeled && !lab.roles.count(l)) {
            lab.roles[l] = Role::other();
            ids.push_back(l);
        }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

    std::map<std::uint32_t, bool> touches;
    std::map<std::uint32_t, bool> present;
    for (std::size_t i = 0; i < lab.size(); ++i) {
        if (lab.label[i] == PartitionLabeling::kUnlabeled) continue;
        present[lab.label[i]] = true;
        if (detail::on_border(i, w, h)) touches[lab.label[i]] = true;
    }

    // containers[b] = non-border regions that enclose b
    std::map<std::uint32_t, std::vector<std::uint32_t>> containers;
    std::vector<std::uint8_t> seen(lab.size());
    std::vector<std::size_t> stack;
    for (std::uint32_t a : ids) {
        if (!present.count(a) || touches.count(a)) continue;
        std::fill(seen.begin(), seen.end(), 0);
        stack.clear();
        for (std::size_t i = 0; i < lab.size(); ++i)
            if (detail::on_border(i, w, h) && lab.label[i] != a) {
                seen[i] = 1;
                stack.push_back(i);
            }
        while (!stack.empty()) {
            const std::size_t u = stack.back();
            stack.pop_back();
            const int x = static_cast<int>(u % w), y = static_cast<int>(u / w);
            for (auto [dx, dy] : detail::kNeighbours4) {
                const int nx = x + dx, ny = y + dy;
                if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                const std::size_t v = static_cast<std::size_t>(ny) * w + nx;
                if (!seen[v] && lab.label[v] != a) {
                    seen[v] = 1;
                    stack.push_back(v);
                }
            }
        }
        std::map<std::uint32_t, bool> reached;
        for (std::size_t i = 0; i < lab.size(); ++i)
            if (seen[i] && lab.label[i] != PartitionLabeling::kUnlabeled) reached[lab.label[i]] = true;
        for (std::uint32_t b : ids)
            if (b != a && present.count(b) && !reached.count(b)) containers[b].push_back(a);
    }

    std::map<std::uint32_t, int> loop_index;
    for (std::uint32_t l : ids) {
        if (touches.count(l) || !present.count(l)) continue;
        if (containers[l].size() >= 2)
            throw UnsupportedNesting("region " + std::to_string(l) + " is nested " +
                                     std::to_string(containers[l].size() + 1) + " levels deep");
    }
    int n_loops = 0;
    for (std::uint32_t l : ids) {
        if (touches.count(l) || !present.count(l) || !containers[l].empty()) continue;
        const bool has_child = std::any_of(ids.begin(), ids.end(), [&](std::uint32_t b) {
            const auto& c = containers[b];
            return std::find(c.begin(), c.end(), l) != c.end();
        });
        if (has_child) loop_index[l] = ++n_loops;
    }
    for (std::uint32_t l : ids) {
        if (touches.count(l)) lab.roles[l] = Role::background();
        else if (loop_index.count(l)) lab.roles[l] = Role::loop_of(loop_index[l]);
        else if (containers[l].size() == 1) lab.roles[l] = Role::interior_of(loop_index.at(containers[l][0]));
        else lab.roles[l] = Role::other();
    }
    return lab;
}

/// Moves boundary outliers into the edge set.
///
/// For each (Loop(i), Interior(i)) pair, pixels outside their partition's Tukey fences and within
/// one diagonal step of an edge pixel are flagged. Partition means are recomputed without
/// flagged pixels, and a flagged pixel joins the edge set when its intensity is at least as close
/// to the other partition's mean as to its own. Edge pixels never enter the statistics.
/// Partitions with fewer than four pixels are skipped, with a note appended to `warnings`.
inline EdgeSet correct_misclassified(const EdgeSet& edges, const GrayImage& img, const PartitionLabeling& lab,
                                     std::vector<std::string>* warnings = nullptr) {
    EdgeSet out = edges;
    const int w = img.width(), h = img.height();
    auto near_edge = [&](std::size_t i) {
        const int x = static_cast<int>(i % w), y = static_cast<int>(i / w);
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int nx = x + dx, ny = y + dy;
                if ((dx || dy) && img.contains(nx, ny) && edges.mask[img.index(nx, ny)]) return true;
            }
        return false;
    };
    auto warn = [&](const std::string& msg) {
        if (warnings) warnings->push_back(msg);
    };

    for (int i = 1; i <= lab.loop_count(); ++i) {
        std::array<std::vector<std::size_t>, 2> part;
        std::array<Role, 2> roles{Role::loop_of(i), Role::interior_of(i)};
        for (int k = 0; k < 2; ++k)
            for (std::size_t p : lab.pixels_with_role(roles[static_cast<std::size_t>(k)]))
                if (!edges.mask[p]) part[static_cast<std::size_t>(k)].push_back(p);

        std::array<std::vector<std::uint8_t>, 2> flagged;
        std::array<bool, 2> usable{};
        for (std::size_t k = 0; k < 2; ++k) {
            flagged[k].assign(part[k].size(), 0);
            usable[k] = part[k].size() >= 4;
            if (!usable[k]) {
                warn("skipping " + to_string(roles[k]) + ": " + std::to_string(part[k].size()) +
                     " pixels, quartiles need at least 4");
                continue;
            }
            std::vector<double> v;
            for (std::size_t p : part[k]) v.push_back(img[p]);
            const Fences f = tukey_fences(v);
            for (std::size_t j = 0; j < part[k].size(); ++j)
                flagged[k][j] = f.outside(v[j]) && near_edge(part[k][j]);
        }
        std::array<double, 2> mu{};
        std::array<bool, 2> has_mean{};
        for (std::size_t k = 0; k < 2; ++k) {
            double s = 0.0;
            std::size_t n = 0;
            for (std::size_t j = 0; j < part[k].size(); ++j)
                if (!flagged[k][j]) {
                    s += img[part[k][j]];
                    ++n;
                }
            has_mean[k] = n > 0;
            mu[k] = n ? s / static_cast<double>(n) : 0.0;
        }
        for (std::size_t k = 0; k < 2; ++k) {
            if (!usable[k] || !has_mean[k] || !has_mean[1 - k]) continue;
            for (std::size_t j = 0; j < part[k].size(); ++j) {
                if (!flagged[k][j]) continue;
                const double z = img[part[k][j]];
                if (std::abs(z - mu[k]) >= std::abs(z - mu[1 - k])) out.mask[part[k][j]] = 1;
            }
        }
    }
    return out;
}

struct SegmentOptions {
    double gaussian_sigma = 2.0;
    std::optional<double> gradient_threshold;
    bool correct = true;  // run the misclassification repair
    LabelOptions label{EdgePolicy::AssignNearest, 4};
};

struct Segmentation {
    EdgeSet edges;  // final edge set (after repair when requested)
    PartitionLabeling labeling;
    std::vector<std::string> warnings;
};

inline Segmentation segment_with_edges(const GrayImage& img, const EdgeSet& detected, const SegmentOptions& opts = {}) {
    Segmentation seg;
    seg.edges = detected;
    seg.labeling = infer_roles(label_regions(seg.edges, &img, opts.label));
    if (opts.correct && seg.labeling.loop_count() > 0) {
        seg.edges = correct_misclassified(seg.edges, img, seg.labeling, &seg.warnings);
        if (seg.edges != detected) seg.labeling = infer_roles(label_regions(seg.edges, &img, opts.label));
    }
    return seg;
}

/// Edge detection, region labelling, role inference and (optionally) boundary repair.
inline Segmentation segment(const GrayImage& img, const SegmentOptions& opts = {}) {
    return segment_with_edges(img, detect_edges(img, opts.gaussian_sigma, opts.gradient_threshold), opts);
}

// ---------------------------------------------------------------------------------------
// Edge mask I/O: PNG (edge = 65535) or CSV of 0/1

inline void save_edge_mask(const EdgeSet& e, const std::filesystem::path& path) {
    if (detail::has_extension(path, ".png")) {
        std::vector<std::uint16_t> v(e.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = e.mask[i] ? 65535 : 0;
        write_png_gray16(path, e.width, e.height, v);
        return;
    }
    std::string csv;
    for (int y = 0; y < e.height; ++y) {
        for (int x = 0; x < e.width; ++x) {
            if (x) csv += ',';
            csv += e.mask[e.index(x, y)] ? '1' : '0';
        }
        csv += '\n';
    }
    detail::write_file(path, csv);
}

inline EdgeSet load_edge_mask(const std::filesystem::path& path) {
    EdgeSet e;
    if (detail::has_extension(path, ".png")) {
        auto raw = read_png_gray(path, e.width, e.height);
        for (auto v : raw) e.mask.push_back(v != 0);
        return e;
    }
    auto rows = detail::parse_csv_numbers<int>(detail::read_file(path));
    e.height = static_cast<int>(rows.size());
    e.width = static_cast<int>(rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            if (rows[r][c] != 0 && rows[r][c] != 1) throw ParseError("edge mask cells must be 0 or 1", r + 1, c + 1);
            e.mask.push_back(static_cast<std::uint8_t>(rows[r][c]));
        }
    return e;
}

}  // namespace looptrust
