#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#ifndef LOOPTRUST_CLI
#error "LOOPTRUST_CLI must name the command-line binary"
#endif

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("looptrust_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    /// Runs the CLI with `args`; stderr lands in err.txt.
    int run(const std::string& args, const std::string& env = "") {
        const std::string cmd = env + " \"" LOOPTRUST_CLI "\" " + args + " > \"" + (dir_ / "out.txt").string() +
                                "\" 2> \"" + (dir_ / "err.txt").string() + "\"";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }
    std::string err() const { return slurp(dir_ / "err.txt"); }
    std::string out() const { return slurp(dir_ / "out.txt"); }
    fs::path p(const std::string& name) const { return dir_ / name; }
    std::string q(const std::string& name) const { return "\"" + p(name).string() + "\""; }

    void ring_spec(const std::string& name, double sigma, bool with_ring = true) {
        nlohmann::json j{{"width", 60}, {"height", 60}, {"mu_background", 0}, {"sigma", sigma}};
        j["rings"] = nlohmann::json::array();
        if (with_ring)
            j["rings"].push_back({{"outer_half_extent", 20}, {"thickness", 5}, {"mu_loop", 3000}, {"mu_interior", 1000}});
        spit(p(name), j.dump());
    }

    fs::path dir_;
};

}  // namespace

TEST_F(Cli, GenerateWritesImageLabelingManifestDeterministically) {
    ring_spec("spec.json", 50);
    ASSERT_EQ(run("generate --spec " + q("spec.json") + " --seed 4 --out-dir " + q("a")), 0) << err();
    ASSERT_EQ(run("generate --spec " + q("spec.json") + " --seed 4 --out-dir " + q("b")), 0) << err();
    for (const char* f : {"image.csv", "labeling.csv", "labeling.json", "manifest.json"}) {
        ASSERT_TRUE(fs::exists(p("a") / f)) << f;
        EXPECT_EQ(slurp(p("a") / f), slurp(p("b") / f)) << f;
    }
    ASSERT_EQ(run("generate --spec " + q("spec.json") + " --seed 5 --out-dir " + q("c")), 0);
    EXPECT_NE(slurp(p("a") / "image.csv"), slurp(p("c") / "image.csv"));
}

TEST_F(Cli, OverlappingRingsAreAnInvalidSpec) {
    nlohmann::json j{{"width", 60}, {"height", 60}};
    j["rings"] = {{{"center", {20, 20}}, {"outer_half_extent", 10}, {"thickness", 3}, {"mu_loop", 3}, {"mu_interior", 1}},
                  {{"center", {30, 30}}, {"outer_half_extent", 10}, {"thickness", 3}, {"mu_loop", 3}, {"mu_interior", 1}}};
    spit(p("bad.json"), j.dump());
    EXPECT_EQ(run("generate --spec " + q("bad.json") + " --out-dir " + q("g")), 2);
    EXPECT_NE(err().find("invalid spec"), std::string::npos);
}

TEST_F(Cli, MissingInputFails) {
    EXPECT_NE(run("diagram --image " + q("nope.csv")), 0);
    EXPECT_NE(err().find("does not exist"), std::string::npos);
    EXPECT_EQ(run("frobnicate"), 2);
}

TEST_F(Cli, AnalyzeNoiselessRingIsDegenerate) {
    ring_spec("spec.json", 0);
    ASSERT_EQ(run("generate --spec " + q("spec.json") + " --out-dir " + q("g")), 0);
    ASSERT_EQ(run("analyze --image " + q("g/image.csv") + " --out-dir " + q("a")), 0) << err();
    const auto loops = slurp(p("a/loops.csv"));
    EXPECT_EQ(std::count(loops.begin(), loops.end(), '\n'), 2) << loops;
    const auto regions = nlohmann::json::parse(slurp(p("a/regions.json")));
    ASSERT_EQ(regions["regions"].size(), 1u);
    EXPECT_EQ(regions["regions"][0]["center"]["death"], 1000.0);
    EXPECT_EQ(regions["regions"][0]["center"]["birth"], 3000.0);
    EXPECT_TRUE(regions["regions"][0]["degenerate"].get<bool>());
    EXPECT_NE(err().find("zero variance"), std::string::npos);
    for (const char* f : {"diagram.csv", "edges.csv", "labeling.csv", "manifest.json"}) EXPECT_TRUE(fs::exists(p("a") / f));
}

TEST_F(Cli, AnalyzeNoisyRingWithTruthLabeling) {
    ring_spec("spec.json", 150);
    ASSERT_EQ(run("generate --spec " + q("spec.json") + " --seed 2 --out-dir " + q("g")), 0);
    ASSERT_EQ(run("analyze --image " + q("g/image.csv") + " --labeling " + q("g/labeling.csv") + " --out-dir " + q("a")), 0)
        << err();
    const auto regions = nlohmann::json::parse(slurp(p("a/regions.json")));
    ASSERT_EQ(regions["regions"].size(), 1u);
    EXPECT_FALSE(regions["regions"][0]["degenerate"].get<bool>());
    EXPECT_EQ(regions["regions"][0]["boundary"].size(), 64u);
}

TEST_F(Cli, AnalyzePureNoiseMatchesNothing) {
    ring_spec("spec.json", 150, false);
    ASSERT_EQ(run("generate --spec " + q("spec.json") + " --seed 3 --out-dir " + q("g")), 0);
    ASSERT_EQ(run("analyze --image " + q("g/image.csv") + " --out-dir " + q("a")), 0) << err();
    const auto loops = slurp(p("a/loops.csv"));
    EXPECT_EQ(std::count(loops.begin(), loops.end(), '\n'), 1) << loops;
    EXPECT_NE(err().find("matched loops: 0"), std::string::npos);
}

TEST_F(Cli, ConfigFileAndFlagOverride) {
    ring_spec("spec.json", 100);
    ASSERT_EQ(run("generate --spec " + q("spec.json") + " --out-dir " + q("g")), 0);
    spit(p("cfg.json"), R"({"alpha": 0.5, "labeling": ")" + p("g/labeling.csv").string() + R"("})");
    ASSERT_EQ(run("analyze --config " + q("cfg.json") + " --image " + q("g/image.csv") + " --out-dir " + q("a")), 0) << err();
    EXPECT_EQ(nlohmann::json::parse(slurp(p("a/regions.json")))["alpha"], 0.5);
    ASSERT_EQ(run("analyze --config " + q("cfg.json") + " --alpha 0.1 --image " + q("g/image.csv") + " --out-dir " + q("b")),
              0);
    EXPECT_EQ(nlohmann::json::parse(slurp(p("b/regions.json")))["alpha"], 0.1);
}

TEST_F(Cli, DiagramBothDirections) {
    ring_spec("spec.json", 0);
    ASSERT_EQ(run("generate --spec " + q("spec.json") + " --out-dir " + q("g")), 0);
    ASSERT_EQ(run("diagram --image " + q("g/image.csv")), 0);
    EXPECT_NE(out().find("1,1000,3000,0"), std::string::npos) << out();
    ASSERT_EQ(run("diagram --direction lower --image " + q("g/image.csv") + " --out " + q("low.csv")), 0);
    EXPECT_TRUE(fs::exists(p("low.csv")));
}

TEST_F(Cli, SegmentAndStda) {
    ring_spec("spec.json", 50);
    ASSERT_EQ(run("generate --spec " + q("spec.json") + " --out-dir " + q("g")), 0);
    ASSERT_EQ(run("segment --image " + q("g/image.csv") + " --out-dir " + q("s")), 0) << err();
    EXPECT_NE(err().find("loops: 1"), std::string::npos) << err();
    ASSERT_EQ(run("stda --image " + q("g/image.csv") + " --labeling " + q("g/labeling.csv") + " -B 20 --seed 3 --out-dir " +
                  q("t")),
              0)
        << err();
    const auto band = nlohmann::json::parse(slurp(p("t/band.json")));
    EXPECT_EQ(band["B"], 20);
    EXPECT_GT(band["c_n"].get<double>(), 0.0);
    EXPECT_FALSE(band["regions"].empty());
}

TEST_F(Cli, SimulateShapes) {
    spit(p("cov.json"), R"({"study": "coverage", "replicates": 2, "geometry": {"width": 30, "height": 30,
        "outer_half_extent": 10, "thickness": 3}, "stda": {"B": 10}})");
    ASSERT_EQ(run("simulate --config " + q("cov.json") + " --out-dir " + q("c")), 0) << err();
    auto csv = slurp(p("c/results.csv"));
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 4 * 3);

    spit(p("bias.json"), R"({"study": "bias", "replicates": 2})");
    ASSERT_EQ(run("simulate --config " + q("bias.json") + " --out-dir " + q("b")), 0) << err();
    csv = slurp(p("b/results.csv"));
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 8 * 2);

    spit(p("mis.json"), R"({"study": "misclassification", "replicates": 2})");
    ASSERT_EQ(run("simulate --config " + q("mis.json") + " --out-dir " + q("m")), 0) << err();
    csv = slurp(p("m/results.csv"));
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 5 * 2);
    const auto manifest = nlohmann::json::parse(slurp(p("m/manifest.json")));
    EXPECT_TRUE(manifest.contains("version"));
    EXPECT_TRUE(manifest.contains("wall_seconds"));
}

TEST_F(Cli, SimulateUnknownStudy) {
    spit(p("x.json"), R"({"study": "histogram"})");
    EXPECT_EQ(run("simulate --config " + q("x.json") + " --out-dir " + q("x")), 2);
    EXPECT_NE(err().find("unknown study"), std::string::npos);
}

TEST_F(Cli, SimulateIsByteIdenticalAcrossRunsAndThreads) {
    spit(p("mis.json"), R"({"study": "misclassification", "replicates": 5, "master_seed": 11})");
    ASSERT_EQ(run("simulate --config " + q("mis.json") + " --out-dir " + q("r1")), 0);
    ASSERT_EQ(run("--threads 3 simulate --config " + q("mis.json") + " --out-dir " + q("r2")), 0);
    ASSERT_EQ(run("simulate --config " + q("mis.json") + " --out-dir " + q("r3"), "LOOPTRUST_THREADS=2"), 0);
    EXPECT_EQ(slurp(p("r1/results.csv")), slurp(p("r2/results.csv")));
    EXPECT_EQ(slurp(p("r1/results.csv")), slurp(p("r3/results.csv")));
    EXPECT_EQ(slurp(p("r1/replicates.csv")), slurp(p("r2/replicates.csv")));
    ASSERT_EQ(run("simulate --config " + q("mis.json") + " --seed 12 --out-dir " + q("r4")), 0);
    EXPECT_NE(slurp(p("r1/results.csv")), slurp(p("r4/results.csv")));
}
