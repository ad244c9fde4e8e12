#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "looptrust/errors.hpp"

namespace looptrust {

/// Pixel coordinate: x is the column, y is the row. Ordered lexicographically on (x, y).
struct Pixel {
    int x = 0;
    int y = 0;

    friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

/// Rectangular grid of finite real intensities, stored row-major.
class GrayImage {
public:
    GrayImage() = default;

    GrayImage(int width, int height, std::vector<double> intensity)
        : width_(width), height_(height), data_(std::move(intensity)) {
        if (width < 2 || height < 2)
            throw InvalidArgument("image must be at least 2x2, got " + std::to_string(width) + "x" +
                                  std::to_string(height));
        if (data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
            throw InvalidArgument("intensity array does not match image dimensions");
        for (double v : data_)
            if (!std::isfinite(v)) throw InvalidArgument("image intensities must be finite");
    }

    GrayImage(int width, int height, double fill)
        : GrayImage(width, height,
                    std::vector<double>(static_cast<std::size_t>(std::max(width, 0)) *
                                            static_cast<std::size_t>(std::max(height, 0)),
                                        fill)) {}

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return data_.size(); }

    std::size_t index(int x, int y) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }
    std::size_t index(Pixel p) const noexcept { return index(p.x, p.y); }
    Pixel pixel(std::size_t i) const noexcept {
        return {static_cast<int>(i % static_cast<std::size_t>(width_)),
                static_cast<int>(i / static_cast<std::size_t>(width_))};
    }
    bool contains(int x, int y) const noexcept { return x >= 0 && y >= 0 && x < width_ && y < height_; }

    double operator()(int x, int y) const noexcept { return data_[index(x, y)]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }
    double at(Pixel p) const { return data_.at(index(p)); }

    std::span<const double> data() const noexcept { return data_; }

    double min() const { return *std::min_element(data_.begin(), data_.end()); }
    double max() const { return *std::max_element(data_.begin(), data_.end()); }

    friend bool operator==(const GrayImage&, const GrayImage&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
};

enum class RoleKind : std::uint8_t { Background, Loop, Interior, Other };

/// Role of a partition. `loop` is the 1-based loop index for Loop/Interior, 0 otherwise.
struct Role {
    RoleKind kind = RoleKind::Other;
    int loop = 0;

    static Role background() { return {RoleKind::Background, 0}; }
    static Role loop_of(int i) { return {RoleKind::Loop, i}; }
    static Role interior_of(int i) { return {RoleKind::Interior, i}; }
    static Role other() { return {RoleKind::Other, 0}; }

    friend bool operator==(const Role&, const Role&) = default;
};

inline std::string to_string(const Role& r) {
    switch (r.kind) {
        case RoleKind::Background: return "background";
        case RoleKind::Loop: return "loop:" + std::to_string(r.loop);
        case RoleKind::Interior: return "interior:" + std::to_string(r.loop);
        case RoleKind::Other: return "other";
    }
    return "other";
}

inline Role role_from_string(const std::string& s) {
    if (s == "background") return Role::background();
    if (s == "other") return Role::other();
    auto colon = s.find(':');
    if (colon != std::string::npos) {
        std::string kind = s.substr(0, colon);
        int i = 0;
        try {
            i = std::stoi(s.substr(colon + 1));
        } catch (const std::exception&) {
            throw ParseError("bad role '" + s + "'");
        }
        if (i < 1) throw ParseError("loop index must be >= 1 in role '" + s + "'");
        if (kind == "loop") return Role::loop_of(i);
        if (kind == "interior") return Role::interior_of(i);
    }
    throw ParseError("unknown role '" + s + "'");
}

/// Per-pixel region labels with a role for each label.
///
/// Edge pixels (boundaries found by segmentation) are flagged in `edge` and excluded from
/// partition statistics. An edge pixel either keeps the label of the region it was assigned
/// to, or carries `kUnlabeled` when held out entirely.
struct PartitionLabeling {
    static constexpr std::uint32_t kUnlabeled = std::numeric_limits<std::uint32_t>::max();

    int width = 0;
    int height = 0;
    std::vector<std::uint32_t> label;
    std::vector<std::uint8_t> edge;  // empty, or one flag per pixel
    std::map<std::uint32_t, Role> roles;

    std::size_t size() const noexcept { return label.size(); }
    std::size_t index(Pixel p) const noexcept {
        return static_cast<std::size_t>(p.y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(p.x);
    }
    bool is_edge(std::size_t i) const noexcept { return !edge.empty() && edge[i] != 0; }

    Role role_at(std::size_t i) const {
        if (label[i] == kUnlabeled) return Role::other();
        auto it = roles.find(label[i]);
        return it == roles.end() ? Role::other() : it->second;
    }

    int loop_count() const {
        int n = 0;
        for (const auto& [_, r] : roles)
            if (r.kind == RoleKind::Loop) n = std::max(n, r.loop);
        return n;
    }

    /// Pixel indices whose label carries `role`. Edge pixels are skipped unless requested.
    std::vector<std::size_t> pixels_with_role(const Role& role, bool include_edges = false) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < label.size(); ++i) {
            if (!include_edges && is_edge(i)) continue;
            if (label[i] == kUnlabeled) continue;
            auto it = roles.find(label[i]);
            if (it != roles.end() && it->second == role) out.push_back(i);
        }
        return out;
    }

    friend bool operator==(const PartitionLabeling&, const PartitionLabeling&) = default;
};

}  // namespace looptrust
