#pragma once

#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "looptrust/image_io.hpp"
#include "looptrust/partda.hpp"
#include "looptrust/ring.hpp"
#include "looptrust/stda.hpp"

namespace looptrust {

// ---------------------------------------------------------------------------------------
// Ring specs as JSON
//
// {"width": 100, "height": 100, "mu_background": 1000, "sigma": 150, "shape": "rectangle",
//  "rings": [{"center": [50, 50], "outer_half_extent": 30, "thickness": 7,
//             "mu_loop": 3000, "mu_interior": 1000}]}
// A ring without "center" is placed at the image centre.

inline RingSpec ring_spec_from_json(const nlohmann::json& j) {
    RingSpec spec;
    try {
        if (!j.is_object()) throw InvalidSpec("spec must be a JSON object");
        spec.width = j.at("width").get<int>();
        spec.height = j.at("height").get<int>();
        spec.mu_background = j.value("mu_background", 0.0);
        spec.sigma = j.value("sigma", 0.0);
        const std::string shape = j.value("shape", std::string("rectangle"));
        if (shape == "rectangle")
            spec.shape = RingShape::Rectangle;
        else if (shape == "disk")
            spec.shape = RingShape::Disk;
        else
            throw InvalidSpec("unknown shape '" + shape + "'");
        const std::string noise = j.value("noise", std::string("gaussian"));
        if (noise != "gaussian") throw InvalidSpec("unknown noise family '" + noise + "'");
        for (const auto& r : j.value("rings", nlohmann::json::array())) {
            Ring ring;
            if (r.contains("center")) {
                ring.center = {r.at("center").at(0).get<int>(), r.at("center").at(1).get<int>()};
            } else {
                ring.center = {spec.width / 2, spec.height / 2};
            }
            ring.outer_half_extent = r.at("outer_half_extent").get<int>();
            ring.thickness = r.at("thickness").get<int>();
            ring.mu_loop = r.at("mu_loop").get<double>();
            ring.mu_interior = r.at("mu_interior").get<double>();
            spec.rings.push_back(ring);
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidSpec(std::string("malformed spec: ") + e.what());
    }
    validate(spec);
    return spec;
}

inline nlohmann::json ring_spec_to_json(const RingSpec& spec) {
    nlohmann::json j;
    j["width"] = spec.width;
    j["height"] = spec.height;
    j["mu_background"] = spec.mu_background;
    j["sigma"] = spec.sigma;
    j["shape"] = spec.shape == RingShape::Rectangle ? "rectangle" : "disk";
    j["noise"] = "gaussian";
    j["rings"] = nlohmann::json::array();
    for (const auto& r : spec.rings)
        j["rings"].push_back({{"center", {r.center.x, r.center.y}},
                              {"outer_half_extent", r.outer_half_extent},
                              {"thickness", r.thickness},
                              {"mu_loop", r.mu_loop},
                              {"mu_interior", r.mu_interior}});
    return j;
}

// ---------------------------------------------------------------------------------------
// parTDA reports

inline constexpr const char* kLoopsCsvHeader =
    "loop,point_index,ttda_death,ttda_birth,death_estimate,birth_estimate,n_death,n_birth,var_death,var_birth,"
    "region_area,degenerate,persistence_estimate,persistence_half_width";

/// One row per matched loop: the tTDA point next to the parTDA estimate.
inline std::string loops_to_csv(const PersistenceDiagram& diagram, const std::vector<LoopEstimate>& est) {
    std::ostringstream out;
    out << kLoopsCsvHeader << '\n';
    for (const auto& e : est) {
        const DiagramPoint& p = diagram.points.at(*e.point_index);
        out << e.loop << ',' << *e.point_index << ',' << format_real(p.death) << ',' << format_real(p.birth) << ','
            << format_real(e.death_estimate()) << ',' << format_real(e.birth_estimate()) << ',' << e.interior.n << ','
            << e.ring.n << ',' << format_real(e.interior.sample_variance) << ','
            << format_real(e.ring.sample_variance) << ',' << (e.region ? format_real(e.region->area()) : "0") << ','
            << (e.region ? 0 : 1) << ',' << format_real(e.persistence.estimate) << ','
            << format_real(e.persistence.half_width) << '\n';
    }
    return out.str();
}

/// Confidence ellipses with a sampled boundary for plotting. Zero-variance loops are reported
/// as degenerate points.
inline nlohmann::json regions_to_json(const std::vector<LoopEstimate>& est, double alpha, int boundary_points = 64) {
    nlohmann::json j;
    j["alpha"] = alpha;
    j["chi2_quantile"] = chi2_2_quantile(alpha);
    j["regions"] = nlohmann::json::array();
    for (const auto& e : est) {
        nlohmann::json r;
        r["loop"] = e.loop;
        r["center"] = {{"death", e.death_estimate()}, {"birth", e.birth_estimate()}};
        r["n_death"] = e.interior.n;
        r["n_birth"] = e.ring.n;
        r["persistence"] = {{"estimate", e.persistence.estimate}, {"half_width", e.persistence.half_width}};
        if (e.region) {
            r["degenerate"] = false;
            r["var_death"] = e.region->var_death;
            r["var_birth"] = e.region->var_birth;
            r["area"] = e.region->area();
            nlohmann::json b = nlohmann::json::array();
            for (int k = 0; k < boundary_points; ++k) {
                auto [d, bb] = e.region->boundary(2.0 * std::numbers::pi * k / boundary_points);
                b.push_back({d, bb});
            }
            r["boundary"] = b;
        } else {
            r["degenerate"] = true;
            r["notice"] = "zero sample variance: the region collapses to its centre";
            r["area"] = 0.0;
        }
        j["regions"].push_back(r);
    }
    return j;
}

/// sTDA band and the square region around every H1 point of the smoothed image.
inline nlohmann::json band_to_json(const BootstrapBand& band, const std::vector<SquareRegion>& regions) {
    nlohmann::json j;
    j["c_n"] = band.c_n;
    j["alpha"] = band.alpha;
    j["B"] = band.B;
    j["distances"] = band.distances;
    j["regions"] = nlohmann::json::array();
    for (const auto& r : regions)
        j["regions"].push_back({{"death", r.death},
                                {"birth", r.birth},
                                {"half_side", r.c_n},
                                {"area", r.area()},
                                {"significant", r.significant}});
    return j;
}

}  // namespace looptrust
