#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "photocorr/calibration.hpp"
#include "photocorr/correlation_analysis.hpp"
#include "photocorr/detector_model.hpp"
#include "photocorr/photon_statistics.hpp"

namespace photocorr {

inline constexpr std::string_view kSoftwareVersion = "0.1.0";

enum class ReportFormat { text, json };

std::string_view to_string(ReportFormat format);
ReportFormat report_format_from_string(std::string_view name);

struct OutputOptions {
    std::filesystem::path directory = "photocorr-out";
    ReportFormat format = ReportFormat::text;
    bool shot_records = true;
};

/// Default sweep: log-spaced total detected means (both arms) over this range.
inline constexpr double kDefaultSweepLowMean = 0.2;
inline constexpr double kDefaultSweepHighMean = 80.0;
inline constexpr std::size_t kDefaultSweepPoints = 10;

struct ExperimentConfig {
    SourceConfig source;
    std::optional<double> tau;
    std::optional<double> hwp_angle;  ///< radians
    DetectorConfig detector_c = DetectorConfig::hpd_like();
    DetectorConfig detector_d = DetectorConfig::hpd_like();
    std::size_t shots = 30000;
    std::uint64_t seed = 0;
    /// Filter transmittances in (0, 1], applied to the source mean. Empty
    /// means the default log grid (see default_sweep()).
    std::vector<double> sweep;
    OutputOptions outputs;
    std::size_t bootstrap_resamples = kDefaultBootstrapResamples;

    /// Beam-splitter transmittance from whichever of tau / hwp_angle is set.
    double resolved_tau() const;

    /// Throws ConfigError on any violated invariant.
    void validate() const;
};

/// Filter values giving kDefaultSweepPoints log-spaced total detected means
/// over [kDefaultSweepLowMean, kDefaultSweepHighMean]. Throws ConfigError if
/// the source is too weak to reach the top of the range.
std::vector<double> default_sweep(const ExperimentConfig& cfg);

/// Sweep actually run: cfg.sweep, or default_sweep() when it is empty.
std::vector<double> resolved_sweep(const ExperimentConfig& cfg);

/// Parses the JSON config. Unknown keys, missing required keys, wrong types
/// and invariant violations throw ConfigError.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig parse_config_text(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

nlohmann::json config_to_json(const ExperimentConfig& cfg);

/// Shots for one filter setting. Shot s of point p draws everything from the
/// stream derived from (seed, p, s). Counts m_c/m_d are left at 0 until
/// analyze_series() assigns them.
ShotSeries simulate_series(const ExperimentConfig& cfg, std::size_t point_index, double filter_t);

struct PointAnalysis {
    std::optional<CalibrationResult> calibration_c;
    std::optional<CalibrationResult> calibration_d;
    std::optional<CorrelationReport> correlation;
    std::optional<BootstrapErrors> bootstrap;
    std::optional<DifferenceStats> difference;
    /// Effective-mean theory using the configured (true) spurious budget.
    std::optional<double> gamma_theory_corrected_nominal;
    std::vector<std::string> errors;
    std::vector<std::string> warnings;

    bool ok() const noexcept { return errors.empty(); }
};

struct AnalysisOptions {
    std::uint64_t bootstrap_seed = 0;
    std::size_t bootstrap_resamples = kDefaultBootstrapResamples;
    /// Use meta.detector_c/d for the nominal corrected theory.
    bool detectors_known = true;
};

/// Calibrates both arms from the pulse heights, writes the assigned counts
/// back into the series and computes every report. Calibration failures are
/// recorded in `errors` rather than thrown.
PointAnalysis analyze_series(ShotSeries& series, const AnalysisOptions& options);

struct PointResult {
    std::size_t index = 0;
    double filter_t = 1.0;
    double source_mean = 0.0;
    ShotSeries series;
    PointAnalysis analysis;
};

/// Bootstrap seed for point p, derived from the run seed.
std::uint64_t bootstrap_seed(std::uint64_t seed, std::size_t point_index);

PointResult run_point(const ExperimentConfig& cfg, std::size_t point_index, double filter_t);

struct ManifestFile {
    std::string path;  ///< relative to the output directory
    std::string sha256;
};

struct ManifestPoint {
    std::size_t index = 0;
    double filter_t = 1.0;
    double source_mean = 0.0;
    bool ok = true;
    std::vector<std::string> errors;
    std::vector<ManifestFile> files;
    double wall_clock_seconds = 0.0;
};

struct RunManifest {
    nlohmann::json config;
    std::string sweep_origin;  ///< "config" or a description of the default grid
    std::vector<ManifestPoint> points;
    std::vector<ManifestFile> tables;

    bool all_ok() const noexcept;
    nlohmann::json to_json() const;
};

/// Runs every sweep point, writes all per-point and sweep-level files plus
/// manifest.json into cfg.outputs.directory. Per-point failures are recorded
/// and the sweep continues.
RunManifest run_sweep(const ExperimentConfig& cfg);

/// Writes the files of one point under `dir` and returns them (paths
/// relative to `root`).
std::vector<ManifestFile> write_point_outputs(const PointResult& point, const std::filesystem::path& root,
                                              const std::filesystem::path& dir, const OutputOptions& options);

/// Shot-record file: header `shot_index,v_c,v_d,m_c,m_d`, one row per shot,
/// analog values in shortest round-trip form.
void write_shot_records(const ShotSeries& series, const std::filesystem::path& path);

/// Reads a shot-record file; the result has no ground truth. Throws
/// ConfigError on malformed input.
ShotSeries read_shot_records(const std::filesystem::path& path);

/// Per-point report document.
nlohmann::json report_json(const PointResult& point);
std::string report_text(const PointResult& point);

nlohmann::json calibration_json(const CalibrationResult& result);
std::string calibration_text(const CalibrationResult& result);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Shortest string that reads back to the same double.
std::string format_double(double value);

}  // namespace photocorr
