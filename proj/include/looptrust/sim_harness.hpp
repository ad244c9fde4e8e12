#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "looptrust/image_io.hpp"
#include "looptrust/partda.hpp"
#include "looptrust/persistence.hpp"
#include "looptrust/ring.hpp"
#include "looptrust/rng.hpp"
#include "looptrust/segmentation.hpp"
#include "looptrust/stda.hpp"

#ifndef LOOPTRUST_VERSION
#define LOOPTRUST_VERSION "0.1.0"
#endif

namespace looptrust {

inline constexpr const char* kVersion = LOOPTRUST_VERSION;

enum class Study { Coverage, Bias, Misclassification };
enum class Method { tTDA, parTDA, sTDA };

class UnknownStudy : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

inline std::string to_string(Study s) {
    switch (s) {
        case Study::Coverage: return "coverage";
        case Study::Bias: return "bias";
        case Study::Misclassification: return "misclassification";
    }
    return "?";
}

inline Study study_from_string(const std::string& s) {
    std::string l = s;
    std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (l == "coverage") return Study::Coverage;
    if (l == "bias") return Study::Bias;
    if (l == "misclassification") return Study::Misclassification;
    throw UnknownStudy("unknown study '" + s + "' (expected coverage, bias or misclassification)");
}

inline std::string to_string(Method m) {
    switch (m) {
        case Method::tTDA: return "tTDA";
        case Method::parTDA: return "parTDA";
        case Method::sTDA: return "sTDA";
    }
    return "?";
}

inline Method method_from_string(const std::string& s) {
    std::string l = s;
    std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (l == "ttda") return Method::tTDA;
    if (l == "partda") return Method::parTDA;
    if (l == "stda") return Method::sTDA;
    throw InvalidArgument("unknown method '" + s + "'");
}

struct StudyConfig {
    Study study = Study::Coverage;
    int replicates = 500;
    std::vector<double> sigmas{50, 150, 250, 350};
    double mu_background = 1000.0;
    double mu_interior = 1000.0;  // true death
    double mu_loop = 3000.0;      // true birth
    double alpha = 0.05;
    std::uint64_t master_seed = 20240501;
    std::vector<Method> methods{Method::tTDA, Method::parTDA, Method::sTDA};

    // ring geometry (coverage and misclassification studies; bias thickness levels use the
    // same image size and extent)
    int width = 100;
    int height = 100;
    int outer_half_extent = 30;
    int thickness = 7;

    // bias study factor levels
    std::vector<int> thickness_levels{2, 7, 11, 16};
    std::vector<int> dimension_levels{20, 50, 100, 150};
    double dimension_extent_fraction = 0.3;     // outer half-extent / dimension
    double dimension_thickness_fraction = 0.07;  // thickness / dimension

    // misclassification study
    int misclassified_pixels = 6;

    // coverage study: true partitions by default, edge-detected ones when set
    bool estimated_segmentation = false;
    double gaussian_sigma = 2.0;

    // sTDA
    int stda_degree = 2;
    double stda_bandwidth = 0.3;
    int bootstrap_B = 300;

    int threads = 0;  // 0 = all available cores

    void validate() const {
        if (replicates < 1) throw InvalidArgument("replicates must be at least 1");
        if (sigmas.empty()) throw InvalidArgument("sigmas must not be empty");
        for (double s : sigmas)
            if (!(s >= 0.0) || !std::isfinite(s)) throw InvalidArgument("sigmas must be finite and non-negative");
        if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
        if (methods.empty()) throw InvalidArgument("methods must not be empty");
        if (bootstrap_B < 1) throw InvalidArgument("bootstrap_B must be positive");
        if (study == Study::Bias && (thickness_levels.empty() || dimension_levels.empty()))
            throw InvalidArgument("bias study needs thickness and dimension levels");
        if (misclassified_pixels < 0) throw InvalidArgument("misclassified_pixels must be non-negative");
    }
};

/// Defaults for each study.
inline StudyConfig default_config(Study study) {
    StudyConfig c;
    c.study = study;
    if (study == Study::Bias) {
        c.replicates = 1000;
        c.sigmas = {250};
        c.mu_background = 2000;
        c.mu_interior = 3000;
        c.mu_loop = 4000;
        c.methods = {Method::tTDA, Method::parTDA};
    } else if (study == Study::Misclassification) {
        c.sigmas = {10, 50, 100, 200, 300};
        c.mu_background = 0;
        c.methods = {Method::parTDA};
    }
    return c;
}

// ---------------------------------------------------------------------------------------
// JSON config

inline nlohmann::json to_json(const StudyConfig& c) {
    nlohmann::json j;
    j["study"] = to_string(c.study);
    j["replicates"] = c.replicates;
    j["sigmas"] = c.sigmas;
    j["truth"] = {{"mu_background", c.mu_background}, {"mu_interior", c.mu_interior}, {"mu_loop", c.mu_loop}};
    j["alpha"] = c.alpha;
    j["master_seed"] = c.master_seed;
    std::vector<std::string> m;
    for (auto x : c.methods) m.push_back(to_string(x));
    j["methods"] = m;
    j["geometry"] = {{"width", c.width},
                     {"height", c.height},
                     {"outer_half_extent", c.outer_half_extent},
                     {"thickness", c.thickness}};
    j["thickness_levels"] = c.thickness_levels;
    j["dimension_levels"] = c.dimension_levels;
    j["dimension_extent_fraction"] = c.dimension_extent_fraction;
    j["dimension_thickness_fraction"] = c.dimension_thickness_fraction;
    j["misclassified_pixels"] = c.misclassified_pixels;
    j["estimated_segmentation"] = c.estimated_segmentation;
    j["gaussian_sigma"] = c.gaussian_sigma;
    j["stda"] = {{"degree", c.stda_degree}, {"bandwidth", c.stda_bandwidth}, {"B", c.bootstrap_B}};
    return j;
}

/// Reads a config. Fields absent from `j` keep the defaults of the named study.
inline StudyConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw InvalidArgument("study config must be a JSON object");
    if (!j.contains("study")) throw InvalidArgument("study config needs a \"study\" field");
    StudyConfig c = default_config(study_from_string(j.at("study").get<std::string>()));
    try {
        auto get = [&](const nlohmann::json& obj, const char* key, auto& field) {
            if (obj.contains(key)) field = obj.at(key).get<std::remove_reference_t<decltype(field)>>();
        };
        get(j, "replicates", c.replicates);
        get(j, "sigmas", c.sigmas);
        if (j.contains("truth")) {
            const auto& t = j.at("truth");
            get(t, "mu_background", c.mu_background);
            get(t, "mu_interior", c.mu_interior);
            get(t, "mu_loop", c.mu_loop);
        }
        get(j, "alpha", c.alpha);
        get(j, "master_seed", c.master_seed);
        if (j.contains("methods")) {
            c.methods.clear();
            for (const auto& m : j.at("methods")) c.methods.push_back(method_from_string(m.get<std::string>()));
        }
        if (j.contains("geometry")) {
            const auto& g = j.at("geometry");
            get(g, "width", c.width);
            get(g, "height", c.height);
            get(g, "outer_half_extent", c.outer_half_extent);
            get(g, "thickness", c.thickness);
        }
        get(j, "thickness_levels", c.thickness_levels);
        get(j, "dimension_levels", c.dimension_levels);
        get(j, "dimension_extent_fraction", c.dimension_extent_fraction);
        get(j, "dimension_thickness_fraction", c.dimension_thickness_fraction);
        get(j, "misclassified_pixels", c.misclassified_pixels);
        get(j, "estimated_segmentation", c.estimated_segmentation);
        get(j, "gaussian_sigma", c.gaussian_sigma);
        if (j.contains("stda")) {
            const auto& s = j.at("stda");
            get(s, "degree", c.stda_degree);
            get(s, "bandwidth", c.stda_bandwidth);
            get(s, "B", c.bootstrap_B);
        }
        get(j, "threads", c.threads);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("bad study config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------------------
// Results

struct CellRecord {
    std::size_t cell = 0;
    std::string factor;  // sigma, thickness or dimension
    double level = 0.0;
    double sigma = 0.0;
    int width = 0;
    int thickness = 0;
    std::string method;
    std::string branch = "-";  // misclassified / corrected in the misclassification study
    std::size_t n_replicates = 0;
    std::size_t n_missing = 0;  // replicates without an estimate (no matched loop, no H1 point)
    double truth_death = 0.0;
    double truth_birth = 0.0;
    double mean_estimate_death = 0.0;
    double mean_estimate_birth = 0.0;
    double bias_death = 0.0;  // mean estimate minus truth
    double bias_birth = 0.0;
    double sd_death = 0.0;
    double sd_birth = 0.0;
    std::optional<double> coverage;
    std::optional<double> coverage_se;
    std::optional<double> mean_area;
    std::optional<double> area_se;
    double mean_n_death = 0.0;  // pixels behind the estimate (partition sizes)
    double mean_n_birth = 0.0;
    std::optional<double> mean_p_b;  // tTDA birth proportion diagnostic
};

/// What one method produced on one replicate.
struct ReplicateOutcome {
    bool present = false;
    double death = 0.0;
    double birth = 0.0;
    bool covered = false;
    std::optional<double> area;
    double n_death = 0.0;
    double n_birth = 0.0;
    std::optional<double> p_b;

    friend bool operator==(const ReplicateOutcome&, const ReplicateOutcome&) = default;
};

struct ReplicateRecord {
    std::size_t cell = 0;
    std::size_t replicate = 0;
    std::string method;
    std::string branch = "-";
    ReplicateOutcome outcome;
};

struct StudyResult {
    StudyConfig config;
    std::vector<CellRecord> cells;
    std::vector<ReplicateRecord> replicates;  // cell-major, then method, then replicate
    double wall_seconds = 0.0;
    int threads_used = 1;
};

namespace detail {

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

/// Runs job(i) for i in [0, n) on `threads` workers. Jobs write to their own slots, so the
/// outcome does not depend on scheduling. The first exception is rethrown.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& job) {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                job(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next = n;
                return;
            }
        }
    };
    const int t = std::max(1, std::min<int>(threads, static_cast<int>(std::max<std::size_t>(n, 1))));
    if (t == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int k = 0; k < t; ++k) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (error) std::rethrow_exception(error);
}

inline std::optional<std::size_t> most_persistent_h1(const PersistenceDiagram& d) {
    auto idx = by_decreasing_persistence(d, 1);
    if (idx.empty()) return std::nullopt;
    return idx.front();
}

/// Fills the aggregate fields of `rec` from per-replicate outcomes.
inline void aggregate(CellRecord& rec, const std::vector<ReplicateOutcome>& outs, bool has_region) {
    rec.n_replicates = outs.size();
    std::vector<double> d, b, areas, nd, nb, pb;
    std::size_t covered = 0;
    for (const auto& o : outs) {
        if (!o.present) {
            ++rec.n_missing;
            continue;
        }
        d.push_back(o.death);
        b.push_back(o.birth);
        nd.push_back(o.n_death);
        nb.push_back(o.n_birth);
        if (o.area) areas.push_back(*o.area);
        if (o.p_b) pb.push_back(*o.p_b);
        covered += o.covered;
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    rec.mean_estimate_death = d.empty() ? nan : mean(d);
    rec.mean_estimate_birth = b.empty() ? nan : mean(b);
    rec.bias_death = rec.mean_estimate_death - rec.truth_death;
    rec.bias_birth = rec.mean_estimate_birth - rec.truth_birth;
    rec.sd_death = std::sqrt(sample_variance(d));
    rec.sd_birth = std::sqrt(sample_variance(b));
    rec.mean_n_death = nd.empty() ? 0.0 : mean(nd);
    rec.mean_n_birth = nb.empty() ? 0.0 : mean(nb);
    if (!pb.empty()) rec.mean_p_b = mean(pb);
    if (has_region) {
        // missing replicates count as not covered
        const double R = static_cast<double>(outs.size());
        const double p = static_cast<double>(covered) / R;
        rec.coverage = p;
        rec.coverage_se = std::sqrt(p * (1.0 - p) / R);
        if (!areas.empty()) {
            rec.mean_area = mean(areas);
            rec.area_se = std::sqrt(sample_variance(areas) / static_cast<double>(areas.size()));
        }
    }
}

/// parTDA outcome from the partitions of loop `loop`. A zero-variance region degenerates to
/// its centre, which covers the truth only on exact equality.
inline ReplicateOutcome partda_outcome(const GrayImage& img, const PartitionLabeling& lab, int loop, double alpha,
                                       double truth_death, double truth_birth) {
    ReplicateOutcome o;
    PartitionStats in, ring;
    try {
        in = partition_stats(img, lab, Role::interior_of(loop));
        ring = partition_stats(img, lab, Role::loop_of(loop));
    } catch (const InsufficientPixels&) {
        return o;
    }
    o.present = true;
    o.death = in.mean;
    o.birth = ring.mean;
    o.n_death = static_cast<double>(in.n);
    o.n_birth = static_cast<double>(ring.n);
    if (in.sample_variance > 0.0 && ring.sample_variance > 0.0) {
        const auto r = confidence_region(in, ring, alpha);
        o.covered = region_contains(r, truth_death, truth_birth);
        o.area = r.area();
    } else {
        o.covered = in.mean == truth_death && ring.mean == truth_birth;
        o.area = 0.0;
    }
    return o;
}

/// tTDA outcome: the diagram point matched to loop 1, or the most persistent H1 point when
/// nothing matched. p_b = 1 - |loop pixels with value >= b| / n_b uses `truth`.
inline ReplicateOutcome ttda_outcome(const GrayImage& img, const PersistenceDiagram& diagram,
                                     const MatchResult& match, const PartitionLabeling* truth) {
    ReplicateOutcome o;
    auto k = match.point_for_loop(1);
    if (!k) k = most_persistent_h1(diagram);
    if (!k) return o;
    const DiagramPoint& p = diagram.points[*k];
    o.present = true;
    o.death = p.death;
    o.birth = p.birth;
    if (truth) {
        const auto loop = truth->pixels_with_role(Role::loop_of(1));
        const auto interior = truth->pixels_with_role(Role::interior_of(1));
        std::size_t above = 0;
        for (auto i : loop) above += img[i] >= p.birth;
        o.n_birth = static_cast<double>(loop.size());
        o.n_death = static_cast<double>(interior.size());
        if (!loop.empty()) o.p_b = 1.0 - static_cast<double>(above) / static_cast<double>(loop.size());
    }
    return o;
}

}  // namespace detail

/// Edge set of a centered rectangle ring with `moved` interior pixels misplaced onto the loop
/// side: both true boundaries are drawn one pixel outside each partition edge (on the interior's
/// outermost ring and just outside the loop), then the top interior edge is pushed one row
/// inwards over `moved` columns.
inline EdgeSet misclassified_edge_set(const RingSpec& spec, int moved) {
    if (spec.rings.size() != 1 || spec.shape != RingShape::Rectangle)
        throw InvalidArgument("misclassified edge set needs one rectangle ring");
    const Ring& r = spec.rings.front();
    const int inner = r.outer_half_extent - r.thickness;  // interior's outermost Chebyshev ring
    if (inner < 2 || moved > 2 * inner - 1) throw InvalidArgument("ring too small for the misclassified edge set");
    auto e = EdgeSet::empty(spec.width, spec.height);
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
            const int d = std::max(std::abs(x - r.center.x), std::abs(y - r.center.y));
            if (d == inner || d == r.outer_half_extent + 1) e.insert({x, y});
        }
    const int x0 = r.center.x - moved / 2;
    for (int x = x0; x < x0 + moved; ++x) {
        e.mask[e.index(x, r.center.y - inner)] = 0;
        e.insert({x, r.center.y - inner + 1});
    }
    return e;
}

// ---------------------------------------------------------------------------------------
// Studies

namespace detail {

inline std::uint64_t replicate_seed(const StudyConfig& c, std::size_t cell, int rep) {
    return split_seed(c.master_seed, {static_cast<std::uint64_t>(cell), static_cast<std::uint64_t>(rep)});
}

inline bool has_method(const StudyConfig& c, Method m) {
    return std::find(c.methods.begin(), c.methods.end(), m) != c.methods.end();
}

inline void keep(StudyResult& r, const CellRecord& rec, const std::vector<ReplicateOutcome>& outs) {
    for (std::size_t i = 0; i < outs.size(); ++i) r.replicates.push_back({rec.cell, i, rec.method, rec.branch, outs[i]});
}

template <typename Clock>
double seconds_since(typename Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace detail

/// Coverage study: coverage and area of parTDA ellipses (truth (mu_interior, mu_loop)) and sTDA
/// squares (truth: most persistent H1 point of the smoothed noiseless image), plus tTDA point
/// estimates. Cell c is the c-th sigma.
inline StudyResult run_coverage_study(const StudyConfig& config) {
    if (config.study != Study::Coverage) throw InvalidArgument("run_coverage_study needs a coverage config");
    config.validate();
    using Clock = std::chrono::steady_clock;
    const auto t0 = Clock::now();
    StudyResult result;
    result.config = config;
    result.threads_used = detail::resolve_threads(config.threads);

    const bool want_t = detail::has_method(config, Method::tTDA);
    const bool want_p = detail::has_method(config, Method::parTDA);
    const bool want_s = detail::has_method(config, Method::sTDA);

    auto spec_for = [&](double sigma) {
        return centered_ring(config.width, config.height, config.outer_half_extent, config.thickness,
                             config.mu_background, config.mu_interior, config.mu_loop, sigma);
    };
    validate(spec_for(0.0));

    std::unique_ptr<LocalPolySmoother> smoother;
    double smooth_d = 0.0, smooth_b = 0.0;
    if (want_s) {
        smoother = std::make_unique<LocalPolySmoother>(config.width, config.height, config.stda_degree,
                                                       config.stda_bandwidth);
        const auto clean = smoother->apply(generate(spec_for(0.0), 0).first);
        const auto d = compute_diagram(clean);
        const auto k = detail::most_persistent_h1(d);
        if (!k) throw DegenerateRegion("smoothed noiseless image has no loop");
        smooth_d = d.points[*k].death;
        smooth_b = d.points[*k].birth;
    }

    const std::size_t n_cells = config.sigmas.size();
    const auto R = static_cast<std::size_t>(config.replicates);
    struct Slot {
        ReplicateOutcome t, p, s;
    };
    std::vector<Slot> slots(n_cells * R);
    SegmentOptions seg_opts;
    seg_opts.gaussian_sigma = config.gaussian_sigma;

    detail::parallel_for(slots.size(), result.threads_used, [&](std::size_t job) {
        const std::size_t cell = job / R;
        const int rep = static_cast<int>(job % R);
        const std::uint64_t seed = detail::replicate_seed(config, cell, rep);
        auto [img, truth] = generate(spec_for(config.sigmas[cell]), seed);
        PartitionLabeling lab = config.estimated_segmentation ? segment(img, seg_opts).labeling : truth;
        Slot& slot = slots[job];
        if (want_t || want_p) {
            const auto diagram = compute_diagram(img);
            const auto match = match_loops(diagram, lab, img);
            if (want_t) slot.t = detail::ttda_outcome(img, diagram, match, &truth);
            if (want_p && match.point_for_loop(1))
                slot.p = detail::partda_outcome(img, lab, 1, config.alpha, config.mu_interior, config.mu_loop);
        }
        if (want_s) {
            const auto sm = smoother->apply(img);
            const auto d = compute_diagram(sm);
            const auto k = detail::most_persistent_h1(d);
            const auto band =
                stda_band(img, lab, *smoother, config.bootstrap_B, config.alpha, split_seed(seed, {1}));
            ReplicateOutcome& o = slot.s;
            o.area = 4.0 * band.c_n * band.c_n;
            if (k) {
                o.present = true;
                o.death = d.points[*k].death;
                o.birth = d.points[*k].birth;
                o.covered = std::abs(o.death - smooth_d) <= band.c_n && std::abs(o.birth - smooth_b) <= band.c_n;
            }
            o.n_death = o.n_birth = static_cast<double>(img.size());
        }
    });

    for (std::size_t cell = 0; cell < n_cells; ++cell) {
        for (Method m : config.methods) {
            CellRecord rec;
            rec.cell = cell;
            rec.factor = "sigma";
            rec.level = config.sigmas[cell];
            rec.sigma = config.sigmas[cell];
            rec.width = config.width;
            rec.thickness = config.thickness;
            rec.method = to_string(m);
            rec.truth_death = m == Method::sTDA ? smooth_d : config.mu_interior;
            rec.truth_birth = m == Method::sTDA ? smooth_b : config.mu_loop;
            std::vector<ReplicateOutcome> outs;
            for (std::size_t r = 0; r < R; ++r) {
                const Slot& s = slots[cell * R + r];
                outs.push_back(m == Method::tTDA ? s.t : m == Method::parTDA ? s.p : s.s);
            }
            detail::aggregate(rec, outs, m != Method::tTDA);
            detail::keep(result, rec, outs);
            result.cells.push_back(std::move(rec));
        }
    }
    result.wall_seconds = detail::seconds_since<Clock>(t0);
    return result;
}

/// Geometry of one bias-study factor level.
struct BiasLevel {
    std::string factor;
    int level = 0;
    int dimension = 0;
    int outer_half_extent = 0;
    int thickness = 0;
};

/// Thickness levels at the configured image size and extent, then dimension levels with extent
/// and thickness scaled in proportion to the image side.
inline std::vector<BiasLevel> bias_levels(const StudyConfig& c) {
    std::vector<BiasLevel> out;
    for (int t : c.thickness_levels) out.push_back({"thickness", t, c.width, c.outer_half_extent, t});
    for (int dim : c.dimension_levels) {
        const int ext = std::max(2, static_cast<int>(std::lround(c.dimension_extent_fraction * dim)));
        const int th = std::max(1, static_cast<int>(std::lround(c.dimension_thickness_fraction * dim)));
        out.push_back({"dimension", dim, dim, ext, th});
    }
    return out;
}

/// Bias study: tTDA and parTDA point estimates per factor level under the true partitions.
/// Cells run over sigmas (outer) and factor levels (inner).
inline StudyResult run_bias_study(const StudyConfig& config) {
    if (config.study != Study::Bias) throw InvalidArgument("run_bias_study needs a bias config");
    config.validate();
    using Clock = std::chrono::steady_clock;
    const auto t0 = Clock::now();
    StudyResult result;
    result.config = config;
    result.threads_used = detail::resolve_threads(config.threads);
    const auto levels = bias_levels(config);
    auto spec_for = [&](const BiasLevel& l, double sigma) {
        return centered_ring(l.dimension, l.dimension, l.outer_half_extent, l.thickness, config.mu_background,
                             config.mu_interior, config.mu_loop, sigma);
    };
    for (const auto& l : levels) validate(spec_for(l, 0.0));

    const std::size_t n_cells = config.sigmas.size() * levels.size();
    const auto R = static_cast<std::size_t>(config.replicates);
    struct Slot {
        ReplicateOutcome t, p;
    };
    std::vector<Slot> slots(n_cells * R);
    const bool want_t = detail::has_method(config, Method::tTDA);
    const bool want_p = detail::has_method(config, Method::parTDA);

    detail::parallel_for(slots.size(), result.threads_used, [&](std::size_t job) {
        const std::size_t cell = job / R;
        const int rep = static_cast<int>(job % R);
        const auto& l = levels[cell % levels.size()];
        const double sigma = config.sigmas[cell / levels.size()];
        auto [img, truth] = generate(spec_for(l, sigma), detail::replicate_seed(config, cell, rep));
        if (want_t) {
            const auto diagram = compute_diagram(img);
            slots[job].t = detail::ttda_outcome(img, diagram, match_loops(diagram, truth, img), &truth);
        }
        if (want_p) slots[job].p = detail::partda_outcome(img, truth, 1, config.alpha, config.mu_interior, config.mu_loop);
    });

    for (std::size_t cell = 0; cell < n_cells; ++cell) {
        const auto& l = levels[cell % levels.size()];
        for (Method m : config.methods) {
            if (m == Method::sTDA) continue;
            CellRecord rec;
            rec.cell = cell;
            rec.factor = l.factor;
            rec.level = l.level;
            rec.sigma = config.sigmas[cell / levels.size()];
            rec.width = l.dimension;
            rec.thickness = l.thickness;
            rec.method = to_string(m);
            rec.truth_death = config.mu_interior;
            rec.truth_birth = config.mu_loop;
            std::vector<ReplicateOutcome> outs;
            for (std::size_t r = 0; r < R; ++r) outs.push_back(m == Method::tTDA ? slots[cell * R + r].t : slots[cell * R + r].p);
            detail::aggregate(rec, outs, m == Method::parTDA);
            detail::keep(result, rec, outs);
            result.cells.push_back(std::move(rec));
        }
    }
    result.wall_seconds = detail::seconds_since<Clock>(t0);
    return result;
}

/// Misclassification study: parTDA coverage with a deliberately corrupted edge set and with the same edge
/// set after correct_misclassified. Cell c is the c-th sigma.
inline StudyResult run_misclassification_study(const StudyConfig& config) {
    if (config.study != Study::Misclassification)
        throw InvalidArgument("run_misclassification_study needs a misclassification config");
    config.validate();
    using Clock = std::chrono::steady_clock;
    const auto t0 = Clock::now();
    StudyResult result;
    result.config = config;
    result.threads_used = detail::resolve_threads(config.threads);
    auto spec_for = [&](double sigma) {
        return centered_ring(config.width, config.height, config.outer_half_extent, config.thickness,
                             config.mu_background, config.mu_interior, config.mu_loop, sigma);
    };
    validate(spec_for(0.0));
    const EdgeSet bad = misclassified_edge_set(spec_for(0.0), config.misclassified_pixels);
    const LabelOptions label_opts{EdgePolicy::AssignNearest, 4};

    const std::size_t n_cells = config.sigmas.size();
    const auto R = static_cast<std::size_t>(config.replicates);
    struct Slot {
        ReplicateOutcome before, after;
    };
    std::vector<Slot> slots(n_cells * R);
    detail::parallel_for(slots.size(), result.threads_used, [&](std::size_t job) {
        const std::size_t cell = job / R;
        const int rep = static_cast<int>(job % R);
        auto [img, truth] = generate(spec_for(config.sigmas[cell]), detail::replicate_seed(config, cell, rep));
        const auto lab = infer_roles(label_regions(bad, &img, label_opts));
        slots[job].before = detail::partda_outcome(img, lab, 1, config.alpha, config.mu_interior, config.mu_loop);
        const EdgeSet fixed = correct_misclassified(bad, img, lab);
        const auto lab2 = fixed == bad ? lab : infer_roles(label_regions(fixed, &img, label_opts));
        slots[job].after = detail::partda_outcome(img, lab2, 1, config.alpha, config.mu_interior, config.mu_loop);
    });

    for (std::size_t cell = 0; cell < n_cells; ++cell)
        for (const char* branch : {"misclassified", "corrected"}) {
            CellRecord rec;
            rec.cell = cell;
            rec.factor = "sigma";
            rec.level = rec.sigma = config.sigmas[cell];
            rec.width = config.width;
            rec.thickness = config.thickness;
            rec.method = "parTDA";
            rec.branch = branch;
            rec.truth_death = config.mu_interior;
            rec.truth_birth = config.mu_loop;
            const bool before = std::string(branch) == "misclassified";
            std::vector<ReplicateOutcome> outs;
            for (std::size_t r = 0; r < R; ++r)
                outs.push_back(before ? slots[cell * R + r].before : slots[cell * R + r].after);
            detail::aggregate(rec, outs, true);
            detail::keep(result, rec, outs);
            result.cells.push_back(std::move(rec));
        }
    result.wall_seconds = detail::seconds_since<Clock>(t0);
    return result;
}

inline StudyResult run_study(const StudyConfig& config) {
    switch (config.study) {
        case Study::Coverage: return run_coverage_study(config);
        case Study::Bias: return run_bias_study(config);
        case Study::Misclassification: return run_misclassification_study(config);
    }
    throw UnknownStudy("unknown study");
}

// ---------------------------------------------------------------------------------------
// Output

inline constexpr const char* kStudyCsvHeader =
    "study,cell,factor,level,sigma,width,thickness,method,branch,n_replicates,n_missing,truth_death,truth_birth,"
    "mean_estimate_death,mean_estimate_birth,bias_death,bias_birth,sd_death,sd_birth,coverage,coverage_se,"
    "mean_area,area_se,mean_n_death,mean_n_birth,mean_p_b";

/// Tidy CSV, one row per cell and method; absent values are written as NA.
inline std::string study_to_csv(const StudyResult& r) {
    auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string("NA"); };
    std::ostringstream out;
    out << kStudyCsvHeader << '\n';
    for (const auto& c : r.cells) {
        out << to_string(r.config.study) << ',' << c.cell << ',' << c.factor << ',' << format_real(c.level) << ','
            << format_real(c.sigma) << ',' << c.width << ',' << c.thickness << ',' << c.method << ',' << c.branch
            << ',' << c.n_replicates << ',' << c.n_missing << ',' << format_real(c.truth_death) << ','
            << format_real(c.truth_birth) << ',' << format_real(c.mean_estimate_death) << ','
            << format_real(c.mean_estimate_birth) << ',' << format_real(c.bias_death) << ','
            << format_real(c.bias_birth) << ',' << format_real(c.sd_death) << ',' << format_real(c.sd_birth) << ','
            << opt(c.coverage) << ',' << opt(c.coverage_se) << ',' << opt(c.mean_area) << ',' << opt(c.area_se)
            << ',' << format_real(c.mean_n_death) << ',' << format_real(c.mean_n_birth) << ',' << opt(c.mean_p_b)
            << '\n';
    }
    return out.str();
}

inline constexpr const char* kReplicateCsvHeader =
    "study,cell,replicate,method,branch,present,estimate_death,estimate_birth,covered,area,n_death,n_birth,p_b";

/// Per-replicate outcomes, for plots and for checking seed stability.
inline std::string replicates_to_csv(const StudyResult& r) {
    auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string("NA"); };
    std::ostringstream out;
    out << kReplicateCsvHeader << '\n';
    for (const auto& x : r.replicates) {
        const auto& o = x.outcome;
        out << to_string(r.config.study) << ',' << x.cell << ',' << x.replicate << ',' << x.method << ',' << x.branch
            << ',' << o.present << ',' << (o.present ? format_real(o.death) : "NA") << ','
            << (o.present ? format_real(o.birth) : "NA") << ',' << o.covered << ',' << opt(o.area) << ','
            << format_real(o.n_death) << ',' << format_real(o.n_birth) << ',' << opt(o.p_b) << '\n';
    }
    return out.str();
}

/// Run manifest: config, seed scheme, version and wall time.
inline nlohmann::json study_manifest(const StudyResult& r) {
    nlohmann::json j;
    j["version"] = kVersion;
    j["config"] = to_json(r.config);
    j["seed_scheme"] = "replicate r of cell c uses split_seed(master_seed, {c, r}); sTDA bootstraps add {1}";
    j["cells"] = r.cells.size();
    j["threads"] = r.threads_used;
    j["wall_seconds"] = r.wall_seconds;
    return j;
}

}  // namespace looptrust
