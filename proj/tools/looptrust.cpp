// looptrust command-line tool: generate synthetic rings, compute diagrams, segment, run parTDA
// and sTDA on one image, and drive the simulation studies.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "looptrust/image_io.hpp"
#include "looptrust/partda.hpp"
#include "looptrust/persistence.hpp"
#include "looptrust/report.hpp"
#include "looptrust/ring.hpp"
#include "looptrust/segmentation.hpp"
#include "looptrust/sim_harness.hpp"
#include "looptrust/stda.hpp"

namespace fs = std::filesystem;
using namespace looptrust;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct Options {
    int threads = 0;

    std::string spec_path;
    std::uint64_t seed = 1;
    std::string format = "csv";

    std::string image_path;
    std::string labeling_path;
    std::string out_dir;
    std::string out_path;
    std::string direction = "upper";

    double alpha = 0.05;
    double gaussian_sigma = 2.0;
    std::optional<double> threshold;
    bool no_correct = false;
    bool tie_break_smoothing = false;

    int degree = 2;
    double bandwidth = 0.3;
    int B = 300;

    std::string study_config;
    std::optional<int> replicates;
    std::optional<std::uint64_t> master_seed;
    std::optional<int> sim_B;
    bool estimated_segmentation = false;
};

void write_json(const fs::path& p, const nlohmann::json& j) { detail::write_file(p, j.dump(2) + "\n"); }

fs::path prepare_out_dir(const std::string& dir) {
    fs::path p(dir);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec || !fs::is_directory(p)) throw Error("cannot create output directory '" + dir + "'");
    return p;
}

void check_readable(const std::string& path, const char* what) {
    if (path.empty()) throw InvalidArgument(std::string(what) + " path is required");
    if (!fs::is_regular_file(path)) throw Error(std::string(what) + " '" + path + "' does not exist");
}

Direction parse_direction(const std::string& s) {
    if (s == "upper") return Direction::UpperLevel;
    if (s == "lower") return Direction::LowerLevel;
    throw InvalidArgument("direction must be upper or lower");
}

PartitionLabeling load_matching_labeling(const std::string& path, const GrayImage& img) {
    auto lab = load_labeling(path);
    if (lab.width != img.width() || lab.height != img.height())
        throw InvalidArgument("labeling is " + std::to_string(lab.width) + "x" + std::to_string(lab.height) +
                              " but the image is " + std::to_string(img.width()) + "x" + std::to_string(img.height()));
    return lab;
}

EdgeSet edges_of(const PartitionLabeling& lab) {
    auto e = EdgeSet::empty(lab.width, lab.height);
    if (!lab.edge.empty()) e.mask = lab.edge;
    return e;
}

SegmentOptions segment_options(const Options& o) {
    SegmentOptions s;
    s.gaussian_sigma = o.gaussian_sigma;
    s.gradient_threshold = o.threshold;
    s.correct = !o.no_correct;
    return s;
}

/// Segmentation that reports a degenerate outcome as "no loops" rather than failing.
std::optional<Segmentation> try_segment(const GrayImage& img, const Options& o) {
    try {
        auto seg = segment(img, segment_options(o));
        for (const auto& w : seg.warnings) std::cerr << "warning: " << w << '\n';
        return seg;
    } catch (const DegenerateSegmentation& e) {
        std::cerr << "warning: " << e.what() << "; no loops can be matched\n";
    } catch (const UnsupportedNesting& e) {
        std::cerr << "warning: " << e.what() << "; no loops can be matched\n";
    }
    return std::nullopt;
}

int cmd_generate(const Options& o) {
    check_readable(o.spec_path, "spec");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_file(o.spec_path));
    } catch (const nlohmann::json::exception& e) {
        throw InvalidSpec(std::string("spec is not valid JSON: ") + e.what());
    }
    const RingSpec spec = ring_spec_from_json(j);
    const fs::path out = prepare_out_dir(o.out_dir);
    auto [img, truth] = generate(spec, o.seed);
    const std::string image_name = o.format == "png" ? "image.png" : "image.csv";
    save_image(img, out / image_name);
    save_labeling(truth, out / "labeling.csv");
    write_json(out / "manifest.json", {{"version", kVersion},
                                       {"command", "generate"},
                                       {"seed", o.seed},
                                       {"spec", ring_spec_to_json(spec)},
                                       {"image", image_name},
                                       {"labeling", "labeling.csv"}});
    return 0;
}

int cmd_diagram(const Options& o) {
    check_readable(o.image_path, "image");
    const Direction dir = parse_direction(o.direction);
    const auto img = load_image(o.image_path);
    const std::string csv = diagram_to_csv(compute_diagram(img, dir));
    if (o.out_path.empty())
        std::cout << csv;
    else
        detail::write_file(o.out_path, csv);
    return 0;
}

int cmd_segment(const Options& o) {
    check_readable(o.image_path, "image");
    const fs::path out = prepare_out_dir(o.out_dir);
    const auto img = load_image(o.image_path);
    if (auto seg = try_segment(img, o)) {
        save_edge_mask(seg->edges, out / "edges.csv");
        save_labeling(seg->labeling, out / "labeling.csv");
        std::cerr << "loops: " << seg->labeling.loop_count() << '\n';
    } else {
        save_edge_mask(detect_edges(img, o.gaussian_sigma, o.threshold), out / "edges.csv");
    }
    return 0;
}

int cmd_analyze(const Options& o) {
    check_readable(o.image_path, "image");
    if (!o.labeling_path.empty()) check_readable(o.labeling_path, "labeling");
    const fs::path out = prepare_out_dir(o.out_dir);
    const auto img = load_image(o.image_path);
    const auto diagram = compute_diagram(img, Direction::UpperLevel);
    detail::write_file(out / "diagram.csv", diagram_to_csv(diagram));

    std::optional<PartitionLabeling> lab;
    if (!o.labeling_path.empty()) {
        lab = load_matching_labeling(o.labeling_path, img);
        if (!o.no_correct && lab->loop_count() > 0) {
            const EdgeSet given = edges_of(*lab);
            std::vector<std::string> warnings;
            const EdgeSet fixed = correct_misclassified(given, img, *lab, &warnings);
            for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
            if (fixed != given) {
                lab->edge = fixed.mask;  // moved pixels are excluded from the partition statistics
            }
        }
    } else if (auto seg = try_segment(img, o)) {
        lab = seg->labeling;
    }

    std::vector<LoopEstimate> est;
    if (lab) {
        save_edge_mask(edges_of(*lab), out / "edges.csv");
        save_labeling(*lab, out / "labeling.csv");
        GrayImage smoothed;
        PersistenceDiagram smoothed_diagram;
        SmoothedHint hint;
        if (o.tie_break_smoothing) {
            smoothed = local_poly_smooth(img, o.degree, o.bandwidth);
            smoothed_diagram = compute_diagram(smoothed);
            hint = {&smoothed, &smoothed_diagram};
        }
        const auto match = match_loops(diagram, *lab, img, hint);
        est = partda_estimates(img, *lab, match, o.alpha);
        for (const auto& e : est)
            if (!e.region) std::cerr << "notice: loop " << e.loop << " has zero variance; its region is a point\n";
    }
    detail::write_file(out / "loops.csv", loops_to_csv(diagram, est));
    write_json(out / "regions.json", regions_to_json(est, o.alpha));
    write_json(out / "manifest.json", {{"version", kVersion},
                                       {"command", "analyze"},
                                       {"image", o.image_path},
                                       {"labeling", o.labeling_path},
                                       {"alpha", o.alpha},
                                       {"gaussian_sigma", o.gaussian_sigma},
                                       {"correct", !o.no_correct},
                                       {"matched_loops", est.size()}});
    std::cerr << "matched loops: " << est.size() << '\n';
    return 0;
}

int cmd_stda(const Options& o) {
    check_readable(o.image_path, "image");
    if (!o.labeling_path.empty()) check_readable(o.labeling_path, "labeling");
    const fs::path out = prepare_out_dir(o.out_dir);
    const auto img = load_image(o.image_path);
    PartitionLabeling lab;
    if (!o.labeling_path.empty()) {
        lab = load_matching_labeling(o.labeling_path, img);
    } else if (auto seg = try_segment(img, o)) {
        lab = seg->labeling;
    } else {
        // a single stratum: plain bootstrap of the whole image
        lab = PartitionLabeling{img.width(), img.height(), std::vector<std::uint32_t>(img.size(), 0), {},
                                {{0, Role::background()}}};
    }
    const LocalPolySmoother smoother(img.width(), img.height(), o.degree, o.bandwidth);
    const auto smoothed = smoother.apply(img);
    const auto diagram = compute_diagram(smoothed);
    const auto band = stda_band(img, lab, smoother, o.B, o.alpha, o.seed);
    save_image(smoothed, out / "smoothed.csv");
    detail::write_file(out / "smoothed_diagram.csv", diagram_to_csv(diagram));
    write_json(out / "band.json", band_to_json(band, band_to_regions(band, diagram)));
    write_json(out / "manifest.json", {{"version", kVersion},
                                       {"command", "stda"},
                                       {"image", o.image_path},
                                       {"degree", o.degree},
                                       {"bandwidth", o.bandwidth},
                                       {"B", o.B},
                                       {"alpha", o.alpha},
                                       {"seed", o.seed}});
    std::cerr << "c_n: " << format_real(band.c_n) << '\n';
    return 0;
}

int cmd_simulate(const Options& o) {
    check_readable(o.study_config, "study config");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_file(o.study_config));
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("study config is not valid JSON: ") + e.what());
    }
    StudyConfig c = config_from_json(j);
    if (o.replicates) c.replicates = *o.replicates;
    if (o.master_seed) c.master_seed = *o.master_seed;
    if (o.sim_B) c.bootstrap_B = *o.sim_B;
    if (o.estimated_segmentation) c.estimated_segmentation = true;
    c.threads = o.threads;
    c.validate();
    const fs::path out = prepare_out_dir(o.out_dir);
    const StudyResult r = run_study(c);
    detail::write_file(out / "results.csv", study_to_csv(r));
    detail::write_file(out / "replicates.csv", replicates_to_csv(r));
    write_json(out / "manifest.json", study_manifest(r));
    std::cerr << to_string(c.study) << ": " << r.cells.size() << " cells in " << r.wall_seconds << " s\n";
    return 0;
}

/// Expands `--config FILE` (JSON object keyed by long option names) into flags placed right
/// after the subcommand, so anything given on the command line wins.
std::vector<std::string> expand_config(std::vector<std::string> args) {
    static const std::vector<std::string> subcommands{"generate", "analyze", "diagram", "segment", "stda"};
    std::size_t sub = args.size();
    for (std::size_t i = 1; i < args.size(); ++i)
        if (std::find(subcommands.begin(), subcommands.end(), args[i]) != subcommands.end()) {
            sub = i;
            break;
        }
    if (sub == args.size()) return args;
    std::string path;
    for (std::size_t i = sub + 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
            break;
        }
    }
    if (path.empty()) return args;
    check_readable(path, "config");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
    std::vector<std::string> extra;
    for (const auto& [key, value] : j.items()) {
        const std::string flag = (key.size() == 1 ? "-" : "--") + key;
        if (value.is_boolean()) {
            if (value.get<bool>()) extra.push_back(flag);
        } else if (value.is_string()) {
            extra.push_back(flag);
            extra.push_back(value.get<std::string>());
        } else if (value.is_number()) {
            extra.push_back(flag);
            extra.push_back(value.is_number_float() ? format_real(value.get<double>()) : value.dump());
        } else {
            throw InvalidArgument("config key '" + key + "' must be a string, number or boolean");
        }
    }
    args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub) + 1, extra.begin(), extra.end());
    return args;
}

}  // namespace

int main(int argc, char** argv) {
    Options o;
    if (const char* env = std::getenv("LOOPTRUST_THREADS")) {
        try {
            o.threads = std::stoi(env);
        } catch (...) {
            std::cerr << "error: LOOPTRUST_THREADS must be an integer\n";
            return kExitUsage;
        }
    }

    CLI::App app{"Loop birth/death estimation with confidence regions for single grayscale images", "looptrust"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.add_option("--threads", o.threads, "Worker threads for simulations (0 = all cores; env LOOPTRUST_THREADS)")
        ->check(CLI::NonNegativeNumber);

    auto add_image = [&](CLI::App* s) {
        s->add_option("--image", o.image_path, "Input image (.csv or .png)")->required();
    };
    auto add_segmentation = [&](CLI::App* s) {
        s->add_option("--gaussian-sigma", o.gaussian_sigma, "Gaussian smoothing before the Laplacian")
            ->capture_default_str()
            ->check(CLI::PositiveNumber);
        s->add_option("--threshold", o.threshold, "Gradient threshold for edges (default: Otsu)");
        s->add_flag("--no-correct", o.no_correct, "Skip the misclassified-pixel repair");
    };
    auto add_config = [&](CLI::App* s) {
        // handled before parsing; declared for --help
        s->add_option("--config", "JSON file of option values; command-line flags override it");
    };

    auto* gen = app.add_subcommand("generate", "Write a synthetic ring image, its true labeling and a manifest");
    gen->add_option("--spec", o.spec_path, "Ring spec (JSON)")->required();
    gen->add_option("--seed", o.seed, "Noise seed")->capture_default_str();
    gen->add_option("--out-dir", o.out_dir, "Output directory")->required();
    gen->add_option("--format", o.format, "Image format")->check(CLI::IsMember({"csv", "png"}))->capture_default_str();
    add_config(gen);

    auto* dia = app.add_subcommand("diagram", "Persistence diagram of an image as CSV");
    add_image(dia);
    dia->add_option("--direction", o.direction, "Filtration direction")
        ->check(CLI::IsMember({"upper", "lower"}))
        ->capture_default_str();
    dia->add_option("--out", o.out_path, "Output CSV (default: standard output)");
    add_config(dia);

    auto* seg = app.add_subcommand("segment", "Edge-detection segmentation with role inference");
    add_image(seg);
    add_segmentation(seg);
    seg->add_option("--out-dir", o.out_dir, "Output directory")->required();
    add_config(seg);

    auto* ana = app.add_subcommand("analyze", "Diagram, segmentation, loop matching and parTDA regions");
    add_image(ana);
    ana->add_option("--labeling", o.labeling_path, "Known labeling CSV (skips segmentation)");
    ana->add_option("--alpha", o.alpha, "1 - confidence level")->capture_default_str()->check(CLI::Range(0.0, 1.0));
    add_segmentation(ana);
    ana->add_flag("--tie-break-smoothing", o.tie_break_smoothing,
                  "Break intensity ties in loop localization with a smoothed copy of the image");
    ana->add_option("--degree", o.degree, "Smoothing polynomial degree")->capture_default_str()->check(CLI::Range(0, 2));
    ana->add_option("--bandwidth", o.bandwidth, "Smoothing span")->capture_default_str();
    ana->add_option("--out-dir", o.out_dir, "Output directory")->required();
    add_config(ana);

    auto* st = app.add_subcommand("stda", "Smoothed diagram with a stratified-bootstrap band");
    add_image(st);
    st->add_option("--labeling", o.labeling_path, "Strata as a labeling CSV (default: segmentation)");
    add_segmentation(st);
    st->add_option("--degree", o.degree, "Smoothing polynomial degree")->capture_default_str()->check(CLI::Range(0, 2));
    st->add_option("--bandwidth", o.bandwidth, "Smoothing span")->capture_default_str();
    st->add_option("-B,--bootstrap", o.B, "Bootstrap replicates")->capture_default_str()->check(CLI::PositiveNumber);
    st->add_option("--alpha", o.alpha, "1 - confidence level")->capture_default_str()->check(CLI::Range(0.0, 1.0));
    st->add_option("--seed", o.seed, "Bootstrap seed")->capture_default_str();
    st->add_option("--out-dir", o.out_dir, "Output directory")->required();
    add_config(st);

    auto* sim = app.add_subcommand("simulate", "Run a coverage, bias or misclassification study");
    sim->add_option("--config", o.study_config, "Study config (JSON)")->required();
    sim->add_option("--out-dir", o.out_dir, "Output directory")->required();
    sim->add_option("--replicates", o.replicates, "Override the replicate count")->check(CLI::PositiveNumber);
    sim->add_option("--seed", o.master_seed, "Override the master seed");
    sim->add_option("-B,--bootstrap", o.sim_B, "Override the sTDA bootstrap count")->check(CLI::PositiveNumber);
    sim->add_flag("--estimated-segmentation", o.estimated_segmentation,
                  "Coverage study: segment each image instead of using the true partitions");

    try {
        std::vector<std::string> args(argv, argv + argc);
        args = expand_config(std::move(args));
        std::vector<std::string> rev(args.rbegin(), args.rend() - 1);  // CLI11 wants reversed, no program name
        app.parse(rev);
        if (*gen) return cmd_generate(o);
        if (*dia) return cmd_diagram(o);
        if (*seg) return cmd_segment(o);
        if (*ana) return cmd_analyze(o);
        if (*st) return cmd_stda(o);
        if (*sim) return cmd_simulate(o);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    } catch (const InvalidSpec& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const UnknownStudy& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitFailure;
}
