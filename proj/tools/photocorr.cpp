// photocorr: simulate and analyse photon-number correlations of split thermal light.
//
//   photocorr run       --config cfg.json [--seed N] [--shots N] [--out DIR] [--format text|json-report]
//   photocorr analyze   shots.csv [--config cfg.json] [--seed N] [--out DIR] [--format ...]
//   photocorr calibrate spectrum.csv [--arm c|d] [--config cfg.json] [--out DIR] [--format ...]
//
// Exit status: 0 success, 1 a sweep point (or the analysis) failed, 2 bad config or input.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "photocorr/errors.hpp"
#include "photocorr/experiment.hpp"

namespace fs = std::filesystem;
using namespace photocorr;

namespace {

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> shots;
    std::string out;
    std::string format;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required) {
    auto* cfg = cmd->add_option("--config", flags.config, "experiment config (JSON)");
    if (config_required) cfg->required();
    cmd->add_option("--seed", flags.seed, "override the config seed");
    cmd->add_option("--out", flags.out, "output directory");
    cmd->add_option("--format", flags.format, "report format")->check(CLI::IsMember({"text", "json-report"}));
}

ExperimentConfig resolve_config(const CommonFlags& flags) {
    ExperimentConfig cfg;
    if (!flags.config.empty()) {
        cfg = load_config(flags.config);
    } else {
        cfg.tau = 0.5;
    }
    if (flags.seed) cfg.seed = *flags.seed;
    if (flags.shots) cfg.shots = *flags.shots;
    if (!flags.out.empty()) cfg.outputs.directory = flags.out;
    if (!flags.format.empty()) cfg.outputs.format = report_format_from_string(flags.format);
    cfg.validate();
    return cfg;
}

int run_command(const CommonFlags& flags) {
    const ExperimentConfig cfg = resolve_config(flags);
    const RunManifest manifest = run_sweep(cfg);
    for (const auto& p : manifest.points) {
        std::printf("point %zu  filter %.6g  source mean %.6g  %s\n", p.index, p.filter_t, p.source_mean,
                    p.ok ? "ok" : "FAILED");
        for (const auto& e : p.errors) std::printf("    %s\n", e.c_str());
    }
    std::printf("outputs in %s\n", cfg.outputs.directory.string().c_str());
    return manifest.all_ok() ? 0 : 1;
}

int analyze_command(const CommonFlags& flags, const std::string& records) {
    const ExperimentConfig cfg = resolve_config(flags);
    PointResult point;
    point.series = read_shot_records(records);
    AnalysisOptions options;
    options.bootstrap_seed = bootstrap_seed(cfg.seed, 0);
    options.detectors_known = !flags.config.empty();
    if (options.detectors_known) {
        point.series.meta.source.kind = cfg.source.kind;
        point.series.meta.detector_c = cfg.detector_c;
        point.series.meta.detector_d = cfg.detector_d;
        point.series.meta.tau = cfg.resolved_tau();
    }
    point.series.meta.seed = cfg.seed;
    point.analysis = analyze_series(point.series, options);

    if (flags.out.empty()) {
        std::cout << (cfg.outputs.format == ReportFormat::json ? report_json(point).dump(2) + "\n" : report_text(point));
    } else {
        OutputOptions out = cfg.outputs;
        out.shot_records = false;
        const auto files = write_point_outputs(point, out.directory, out.directory, out);
        for (const auto& f : files) std::printf("%s  %s\n", f.sha256.c_str(), f.path.c_str());
    }
    return point.analysis.ok() ? 0 : 1;
}

// One value per line, or a shot-record file from which one arm is taken.
std::vector<double> read_spectrum(const std::string& path, const std::string& arm) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read spectrum '" + path + "'");
    std::string first;
    std::getline(in, first);
    if (first.rfind("shot_index,", 0) == 0) {
        in.close();
        const ShotSeries series = read_shot_records(path);
        std::vector<double> v;
        for (const auto& s : series.shots) v.push_back(arm == "d" ? s.v_d : s.v_c);
        return v;
    }
    std::vector<double> v;
    auto parse = [&](const std::string& line) {
        if (line.empty()) return;
        std::size_t used = 0;
        double x = 0.0;
        try {
            x = std::stod(line, &used);
        } catch (const std::exception&) {
            throw ConfigError("spectrum line is not a number: '" + line + "'");
        }
        if (used != line.size()) throw ConfigError("spectrum line is not a number: '" + line + "'");
        v.push_back(x);
    };
    parse(first);
    for (std::string line; std::getline(in, line);) parse(line);
    return v;
}

int calibrate_command(const CommonFlags& flags, const std::string& spectrum_path, const std::string& arm) {
    const ExperimentConfig cfg = resolve_config(flags);
    const PulseHeightSpectrum spectrum(read_spectrum(spectrum_path, arm));
    const CalibrationResult result = calibrate_arm(spectrum, cfg.source.kind).result;
    const std::string text =
        cfg.outputs.format == ReportFormat::json ? calibration_json(result).dump(2) + "\n" : calibration_text(result);
    if (flags.out.empty()) {
        std::cout << text;
    } else {
        fs::create_directories(flags.out);
        const fs::path file = fs::path(flags.out) / (cfg.outputs.format == ReportFormat::json ? "calibration.json"
                                                                                               : "calibration.txt");
        std::ofstream(file, std::ios::binary) << text;
        std::printf("%s  %s\n", sha256_file(file).c_str(), file.string().c_str());
    }
    return result.converged ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Photon-number correlations of split thermal light: simulation and analysis"};
    app.require_subcommand(1);

    CommonFlags run_flags, analyze_flags, calibrate_flags;
    auto* run = app.add_subcommand("run", "simulate and analyse an intensity sweep");
    add_common(run, run_flags, true);
    run->add_option("--shots", run_flags.shots, "override the shots per point")->check(CLI::PositiveNumber);

    std::string records;
    auto* analyze = app.add_subcommand("analyze", "re-run calibration and analysis on stored shot records");
    add_common(analyze, analyze_flags, false);
    analyze->add_option("records", records, "shot-record file")->required();

    std::string spectrum, arm = "c";
    auto* calibrate = app.add_subcommand("calibrate", "calibrate one arm from a pulse-height spectrum");
    add_common(calibrate, calibrate_flags, false);
    calibrate->add_option("spectrum", spectrum, "one value per line, or a shot-record file")->required();
    calibrate->add_option("--arm", arm, "arm to take from a shot-record file")->check(CLI::IsMember({"c", "d"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*run) return run_command(run_flags);
        if (*analyze) return analyze_command(analyze_flags, records);
        return calibrate_command(calibrate_flags, spectrum, arm);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const CalibrationError& e) {
        std::cerr << "calibration failed: " << e.what() << '\n';
        return 1;
    } catch (const DomainError& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
