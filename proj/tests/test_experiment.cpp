#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "photocorr/errors.hpp"
#include "photocorr/experiment.hpp"
#include "photocorr/optical_bench.hpp"

using namespace photocorr;
namespace fs = std::filesystem;

namespace {

const char* kHpdConfig = R"({
  "source": {"mean_photons": 5.0},
  "tau": 0.5,
  "detector_c": {"label": "HPD-like"},
  "detector_d": {"label": "HPD-like"},
  "shots": 30000,
  "seed": 42
})";

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("photocorr_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
    }
    return out;
}

nlohmann::json without_clock(nlohmann::json manifest) {
    for (auto& p : manifest["points"]) p.erase("wall_clock_seconds");
    return manifest;
}

ExperimentConfig small_sweep(const fs::path& out) {
    auto cfg = parse_config_text(kHpdConfig);
    cfg.shots = 4000;
    cfg.sweep = {0.2, 1.0};
    cfg.bootstrap_resamples = 50;
    cfg.outputs.directory = out;
    return cfg;
}

int run_cli(const std::string& args) {
    const char* cli = std::getenv("PHOTOCORR_CLI");
    if (cli == nullptr) return -1;
    const std::string cmd = std::string(cli) + ' ' + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, ParsesAndFillsPresets) {
    const auto cfg = parse_config_text(kHpdConfig);
    EXPECT_EQ(cfg.shots, 30000u);
    EXPECT_EQ(cfg.seed, 42u);
    EXPECT_DOUBLE_EQ(cfg.resolved_tau(), 0.5);
    EXPECT_EQ(cfg.source.kind, SourceKind::thermal);
    EXPECT_DOUBLE_EQ(cfg.detector_c.eta, 0.4);
    EXPECT_TRUE(cfg.sweep.empty());

    const auto sipm = parse_config_text(R"({"source": {"mean_photons": 10}, "hwp_angle": 0.39269908169872414,
        "detector_c": {"label": "SiPM-like"}, "detector_d": {"label": "SiPM-like", "crosstalk": 0.2}})");
    EXPECT_EQ(sipm.shots, 50000u);
    EXPECT_NEAR(sipm.resolved_tau(), 0.5, 1e-15);
    EXPECT_DOUBLE_EQ(sipm.detector_c.dark_mean, 0.071);
    EXPECT_DOUBLE_EQ(sipm.detector_d.dark_mean, 0.034);
    EXPECT_DOUBLE_EQ(sipm.detector_d.crosstalk, 0.2);
}

TEST(Config, RoundTripsThroughJson) {
    auto cfg = parse_config_text(kHpdConfig);
    cfg.sweep = {0.5, 1.0};
    const auto again = parse_config(config_to_json(cfg));
    EXPECT_EQ(config_to_json(again), config_to_json(cfg));
}

TEST(Config, RejectsBadDocuments) {
    const std::string base = R"("source": {"mean_photons": 5}, "detector_c": {"label": "HPD-like"},
        "detector_d": {"label": "HPD-like"})";
    EXPECT_THROW(parse_config_text("{" + base + "}"), ConfigError);  // neither tau nor hwp_angle
    EXPECT_THROW(parse_config_text("{" + base + R"(, "tau": 0.5, "hwp_angle": 0.1})"), ConfigError);
    EXPECT_THROW(parse_config_text("{" + base + R"(, "tau": 0.5, "colour": 1})"), ConfigError);
    EXPECT_THROW(parse_config_text("{" + base + R"(, "tau": 1.5})"), ConfigError);
    EXPECT_THROW(parse_config_text("{" + base + R"(, "tau": 0.5, "shots": 0})"), ConfigError);
    EXPECT_THROW(parse_config_text("{" + base + R"(, "tau": 0.5, "shots": -3})"), ConfigError);
    EXPECT_THROW(parse_config_text("{" + base + R"(, "tau": 0.5, "sweep": [0.5, 0]})"), ConfigError);
    EXPECT_THROW(parse_config_text("{" + base + R"(, "tau": 0.5, "sweep": []})"), ConfigError);
    EXPECT_THROW(parse_config_text("{" + base + R"(, "tau": "half"})"), ConfigError);
    EXPECT_THROW(parse_config_text("{" + base + R"(, "tau": 0.5, "outputs": {"format": "xml"}})"), ConfigError);
    EXPECT_THROW(parse_config_text("{" + base + R"(, "tau": 0.5, "outputs": {"dir": "x"}})"), ConfigError);
    EXPECT_THROW(parse_config_text(R"({"source": {"mean_photons": 5}, "tau": 0.5, "detector_c": {"label": "HPD-like"},
        "detector_d": {"label": "HPD-like", "dark_mean": 0.1}})"), ConfigError);
    EXPECT_THROW(parse_config_text(R"({"source": {"mean_photons": 5}, "tau": 0.5, "detector_c": {"eta": 0.4},
        "detector_d": {"label": "HPD-like"}})"), ConfigError);
    EXPECT_THROW(parse_config_text("{not json"), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(DefaultSweep, LogGridOverDetectedMean) {
    auto cfg = parse_config_text(kHpdConfig);
    EXPECT_THROW(default_sweep(cfg), ConfigError);  // 5 photons cannot reach a detected mean of 80
    cfg.source.mean_photons = 250.0;
    const auto sweep = default_sweep(cfg);
    ASSERT_EQ(sweep.size(), 10u);
    EXPECT_NEAR(sweep.front() * 250.0 * 0.4, 0.2, 1e-12);
    EXPECT_NEAR(sweep.back() * 250.0 * 0.4, 80.0, 1e-12);
    for (std::size_t i = 1; i < sweep.size(); ++i) EXPECT_NEAR(sweep[i] / sweep[i - 1], std::pow(400.0, 1.0 / 9.0), 1e-12);
}

TEST(RunPoint, SingleVacuumShot) {
    auto cfg = parse_config_text(R"({"source": {"mean_photons": 0}, "tau": 0.5,
        "detector_c": {"label": "HPD-like", "eta": 1, "gain": 1, "sigma0": 0, "sigma1": 0},
        "detector_d": {"label": "HPD-like", "eta": 1, "gain": 1, "sigma0": 0, "sigma1": 0}, "shots": 1})");
    const auto p = run_point(cfg, 0, 1.0);
    ASSERT_EQ(p.series.shots.size(), 1u);
    const auto& s = p.series.shots[0];
    EXPECT_EQ(s.n_true_c + s.n_true_d + s.fired_c + s.fired_d + s.m_c + s.m_d, 0);
    EXPECT_EQ(s.v_c, 0.0);
    EXPECT_EQ(s.v_d, 0.0);
    // A vacuum spectrum has no peak spacing to calibrate against.
    EXPECT_FALSE(p.analysis.ok());
}

TEST(RunPoint, HpdGammaMatchesTheory) {
    const auto cfg = parse_config_text(kHpdConfig);
    const auto p = run_point(cfg, 0, 1.0);
    ASSERT_TRUE(p.analysis.ok());
    const auto& c = *p.analysis.correlation;
    EXPECT_NEAR(c.mean_c + c.mean_d, 2.0, 0.1);
    EXPECT_NEAR(c.gamma_theory, gamma_theory_thermal(c.mean_c, c.mean_d), 0.0);
    EXPECT_NEAR(c.gamma_theory, 0.5, 0.02);
    EXPECT_LT(std::abs(c.gamma_hat - c.gamma_theory), 3 * *c.gamma_se_bootstrap);
    // Counts assigned from the pulse heights agree with the fired counts.
    std::size_t agree = 0;
    for (const auto& s : p.series.shots) agree += (s.m_c == s.fired_c && s.m_d == s.fired_d);
    EXPECT_GT(agree, p.series.shots.size() * 99 / 100);
    // HPD arms carry no spurious counts: corrected theory equals plain theory.
    EXPECT_EQ(c.gamma_theory_corrected, c.gamma_theory);
}

TEST(RunPoint, PhotonConservationAndStreams) {
    auto cfg = parse_config_text(kHpdConfig);
    cfg.shots = 500;
    const auto a = simulate_series(cfg, 3, 0.5);
    const auto b = simulate_series(cfg, 3, 0.5);
    const auto other = simulate_series(cfg, 4, 0.5);
    bool differs = false;
    for (std::size_t i = 0; i < a.shots.size(); ++i) {
        EXPECT_EQ(a.shots[i].v_c, b.shots[i].v_c);
        EXPECT_LE(a.shots[i].fired_c, a.shots[i].n_true_c);
        differs |= a.shots[i].v_c != other.shots[i].v_c;
    }
    EXPECT_TRUE(differs);
    EXPECT_NEAR(a.meta.source.mean_photons, 2.5, 1e-15);
    EXPECT_THROW(simulate_series(cfg, 0, 0.0), DomainError);
}

TEST(Sweep, ReproducibleByteForByte) {
    const auto dir = scratch("repro");
    const auto cfg = small_sweep(dir / "out");
    const auto first = run_sweep(cfg);
    EXPECT_TRUE(first.all_ok());
    auto before = tree(dir / "out");
    fs::remove_all(dir / "out");
    run_sweep(cfg);
    auto after = tree(dir / "out");
    ASSERT_EQ(before.size(), after.size());
    const auto m1 = without_clock(nlohmann::json::parse(before.at("manifest.json")));
    const auto m2 = without_clock(nlohmann::json::parse(after.at("manifest.json")));
    EXPECT_EQ(m1, m2);
    before.erase("manifest.json");
    after.erase("manifest.json");
    EXPECT_EQ(before, after);
}

TEST(Sweep, SinglePointMatchesRunPoint) {
    const auto dir = scratch("single");
    auto cfg = small_sweep(dir / "out");
    cfg.sweep = {0.6};
    run_sweep(cfg);
    const auto p = run_point(cfg, 0, 0.6);
    EXPECT_EQ(slurp(dir / "out" / "point_00" / "report.txt"), report_text(p));
}

TEST(Sweep, PointsAreIsolated) {
    const auto dir = scratch("isolation");
    const auto cfg = small_sweep(dir / "out");
    const auto manifest = run_sweep(cfg);
    const auto original = tree(dir / "out" / "point_01");
    fs::remove_all(dir / "out" / "point_01");
    const auto point = run_point(cfg, 1, cfg.sweep[1]);
    const auto files = write_point_outputs(point, dir / "out", dir / "out" / "point_01", cfg.outputs);
    EXPECT_EQ(tree(dir / "out" / "point_01"), original);
    ASSERT_EQ(files.size(), manifest.points[1].files.size());
    for (std::size_t i = 0; i < files.size(); ++i) {
        EXPECT_EQ(files[i].path, manifest.points[1].files[i].path);
        EXPECT_EQ(files[i].sha256, manifest.points[1].files[i].sha256);
    }
}

TEST(Sweep, ManifestListsEveryFileWithDigest) {
    const auto dir = scratch("manifest");
    auto cfg = small_sweep(dir / "out");
    cfg.outputs.format = ReportFormat::json;
    run_sweep(cfg);
    const auto doc = nlohmann::json::parse(slurp(dir / "out" / "manifest.json"));
    std::map<std::string, std::string> listed;
    for (const auto& p : doc["points"]) {
        for (const auto& f : p["files"]) listed[f["path"]] = f["sha256"];
        EXPECT_TRUE(p.contains("wall_clock_seconds"));
        EXPECT_TRUE(p.contains("source_mean"));
        EXPECT_EQ(p["report"].get<std::string>().substr(9), "report.json");
    }
    for (const auto& f : doc["tables"]) listed[f["path"]] = f["sha256"];
    EXPECT_EQ(doc["points"].size(), 2u);
    EXPECT_EQ(doc["version"], std::string(kSoftwareVersion));
    EXPECT_EQ(doc["config"], config_to_json(cfg));

    std::size_t on_disk = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir / "out")) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), dir / "out").generic_string();
        if (rel == "manifest.json") continue;
        ++on_disk;
        ASSERT_TRUE(listed.count(rel)) << rel;
        EXPECT_EQ(listed[rel], sha256_file(e.path())) << rel;
    }
    EXPECT_EQ(on_disk, listed.size());
    const auto report = nlohmann::json::parse(slurp(dir / "out" / "point_00" / "report.json"));
    EXPECT_EQ(report["status"], "ok");
    EXPECT_TRUE(report["correlation"].contains("gamma_se_bootstrap"));
}

TEST(Sweep, FailedPointIsRecordedAndSweepContinues) {
    const auto dir = scratch("failure");
    auto cfg = small_sweep(dir / "out");
    cfg.source.mean_photons = 0.0;
    cfg.sweep = {1.0};
    const auto m = run_sweep(cfg);
    ASSERT_EQ(m.points.size(), 1u);
    EXPECT_FALSE(m.all_ok());
    EXPECT_FALSE(m.points[0].errors.empty());
    EXPECT_TRUE(fs::exists(dir / "out" / "gamma_table.csv"));
}

TEST(Sweep, GammaTableHasDocumentedColumns) {
    const auto dir = scratch("tables");
    run_sweep(small_sweep(dir / "out"));
    const auto text = slurp(dir / "out" / "gamma_table.csv");
    EXPECT_EQ(text.substr(0, text.find('\n')),
              "point,filter_t,source_mean,mean_c,mean_d,total_mean,gamma_hat,gamma_se,gamma_se_bootstrap,"
              "gamma_theory,gamma_theory_corrected,gamma_theory_corrected_nominal,status");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
    for (const char* f : {"shots.csv", "report.txt", "pulse_height_c.csv", "pulse_height_d.csv", "joint_counts.csv",
                          "joint_unbinned.csv", "delta_pmf.csv"}) {
        EXPECT_TRUE(fs::exists(dir / "out" / "point_00" / f)) << f;
    }
}

TEST(ShotRecords, RoundTrip) {
    const auto dir = scratch("records");
    auto cfg = parse_config_text(kHpdConfig);
    cfg.shots = 300;
    auto series = simulate_series(cfg, 0, 1.0);
    series.shots[5].v_c = 0.1 + 0.2;  // not exactly representable in short decimal
    series.shots[5].m_c = 7;
    write_shot_records(series, dir / "s.csv");
    const auto back = read_shot_records(dir / "s.csv");
    EXPECT_FALSE(back.meta.has_ground_truth);
    ASSERT_EQ(back.shots.size(), series.shots.size());
    for (std::size_t i = 0; i < back.shots.size(); ++i) {
        EXPECT_EQ(back.shots[i].v_c, series.shots[i].v_c);
        EXPECT_EQ(back.shots[i].v_d, series.shots[i].v_d);
        EXPECT_EQ(back.shots[i].m_c, series.shots[i].m_c);
        EXPECT_EQ(back.shots[i].m_d, series.shots[i].m_d);
    }
}

TEST(ShotRecords, RejectsMalformedFiles) {
    const auto dir = scratch("bad_records");
    write_file(dir / "a.csv", "v_c,v_d\n1,2\n");
    EXPECT_THROW(read_shot_records(dir / "a.csv"), ConfigError);
    write_file(dir / "b.csv", "shot_index,v_c,v_d,m_c,m_d\n0,1.0,2.0,1\n");
    EXPECT_THROW(read_shot_records(dir / "b.csv"), ConfigError);
    write_file(dir / "c.csv", "shot_index,v_c,v_d,m_c,m_d\n0,1.0,x,1,2\n");
    EXPECT_THROW(read_shot_records(dir / "c.csv"), ConfigError);
    write_file(dir / "d.csv", "shot_index,v_c,v_d,m_c,m_d\n1,1.0,2.0,1,2\n");
    EXPECT_THROW(read_shot_records(dir / "d.csv"), ConfigError);
    write_file(dir / "e.csv", "shot_index,v_c,v_d,m_c,m_d\n0,1.0,2.0,-1,2\n");
    EXPECT_THROW(read_shot_records(dir / "e.csv"), ConfigError);
}

TEST(Files, Sha256KnownDigest) {
    const auto dir = scratch("sha");
    write_file(dir / "abc", "abc");
    EXPECT_EQ(sha256_file(dir / "abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    write_file(dir / "empty", "");
    EXPECT_EQ(sha256_file(dir / "empty"), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Files, FormatDoubleRoundTrips) {
    for (double x : {0.0, 1.0, 0.1 + 0.2, 1e-300, -3.5e17, 2.0 / 3.0}) EXPECT_EQ(std::stod(format_double(x)), x);
    EXPECT_EQ(format_double(0.5), "0.5");
    EXPECT_EQ(format_double(std::nan("")), "nan");
}

TEST(Cli, ExitCodes) {
    if (std::getenv("PHOTOCORR_CLI") == nullptr) GTEST_SKIP() << "PHOTOCORR_CLI not set";
    const auto dir = scratch("cli");
    write_file(dir / "good.json", R"({"source": {"mean_photons": 5}, "tau": 0.5, "detector_c": {"label": "HPD-like"},
        "detector_d": {"label": "HPD-like"}, "shots": 2000, "sweep": [1.0]})");
    write_file(dir / "unknown.json", R"({"source": {"mean_photons": 5}, "tau": 0.5, "detector_c": {"label": "HPD-like"},
        "detector_d": {"label": "HPD-like"}, "shots": 2000, "sweep": [1.0], "extra": true})");
    write_file(dir / "vacuum.json", R"({"source": {"mean_photons": 0}, "tau": 0.5, "detector_c": {"label": "HPD-like"},
        "detector_d": {"label": "HPD-like"}, "shots": 200, "sweep": [1.0]})");
    const std::string d = dir.string();

    EXPECT_EQ(run_cli("run --config " + d + "/good.json --out " + d + "/run --seed 3"), 0);
    EXPECT_TRUE(fs::exists(dir / "run" / "manifest.json"));
    EXPECT_EQ(run_cli("run --config " + d + "/unknown.json --out " + d + "/x"), 2);
    EXPECT_EQ(run_cli("run --config " + d + "/missing.json"), 2);
    EXPECT_EQ(run_cli("run --out " + d + "/x"), 2);
    EXPECT_EQ(run_cli("run --config " + d + "/vacuum.json --out " + d + "/vac"), 1);
    EXPECT_EQ(run_cli("run --config " + d + "/good.json --out " + d + "/x --format xml"), 2);

    EXPECT_EQ(run_cli("analyze " + d + "/run/point_00/shots.csv --config " + d + "/good.json --out " + d + "/an"), 0);
    EXPECT_TRUE(fs::exists(dir / "an" / "report.txt"));
    EXPECT_EQ(run_cli("calibrate " + d + "/run/point_00/shots.csv --arm d --config " + d + "/good.json"), 0);
    EXPECT_EQ(run_cli("analyze " + d + "/good.json"), 2);
}

TEST(Cli, AnalyzeReproducesRunReport) {
    if (std::getenv("PHOTOCORR_CLI") == nullptr) GTEST_SKIP() << "PHOTOCORR_CLI not set";
    const auto dir = scratch("cli_analyze");
    write_file(dir / "cfg.json", R"({"source": {"mean_photons": 5}, "tau": 0.5, "detector_c": {"label": "HPD-like"},
        "detector_d": {"label": "HPD-like"}, "shots": 3000, "sweep": [1.0], "seed": 9})");
    ASSERT_EQ(run_cli("run --config " + dir.string() + "/cfg.json --out " + dir.string() + "/run"), 0);
    ASSERT_EQ(run_cli("analyze " + dir.string() + "/run/point_00/shots.csv --config " + dir.string() +
                      "/cfg.json --out " + dir.string() + "/an"),
              0);
    // Re-analysis recovers the same counts and correlation figures.
    for (const char* f : {"joint_counts.csv", "delta_pmf.csv"}) {
        EXPECT_EQ(slurp(dir / "an" / f), slurp(dir / "run" / "point_00" / f)) << f;
    }
}
