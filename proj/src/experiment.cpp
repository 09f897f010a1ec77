#include "photocorr/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>
#include <set>
#include <sstream>

#include "photocorr/errors.hpp"
#include "photocorr/optical_bench.hpp"

namespace photocorr {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---- config parsing -------------------------------------------------------

void reject_unknown(const json& obj, const std::string& where, std::initializer_list<std::string_view> known) {
    for (const auto& [key, value] : obj.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ConfigError("unknown key '" + (where.empty() ? key : where + "." + key) + "'");
        }
    }
}

const json& require_object(const json& doc, const std::string& where) {
    if (!doc.is_object()) throw ConfigError("'" + where + "' must be an object");
    return doc;
}

double get_number(const json& obj, const std::string& key, const std::string& where) {
    const auto& v = obj.at(key);
    if (!v.is_number()) throw ConfigError("'" + where + "." + key + "' must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError("'" + where + "." + key + "' must be finite");
    return x;
}

std::uint64_t get_unsigned(const json& obj, const std::string& key, const std::string& where) {
    const auto& v = obj.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
        throw ConfigError("'" + where + key + "' must be a nonnegative integer");
    }
    return v.get<std::uint64_t>();
}

std::string get_string(const json& obj, const std::string& key, const std::string& where) {
    const auto& v = obj.at(key);
    if (!v.is_string()) throw ConfigError("'" + where + "." + key + "' must be a string");
    return v.get<std::string>();
}

DetectorConfig parse_detector(const json& doc, const std::string& where, bool arm_c) {
    require_object(doc, where);
    reject_unknown(doc, where, {"label", "eta", "gain", "sigma0", "sigma1", "dark_mean", "crosstalk"});
    if (!doc.contains("label")) throw ConfigError("'" + where + ".label' is required");
    DetectorKind kind;
    try {
        kind = detector_kind_from_string(get_string(doc, "label", where));
    } catch (const DomainError& e) {
        throw ConfigError(where + ": " + e.what());
    }
    DetectorConfig cfg = kind == DetectorKind::hpd_like ? DetectorConfig::hpd_like()
                         : arm_c                       ? DetectorConfig::sipm_like_c()
                                                       : DetectorConfig::sipm_like_d();
    auto field = [&](const char* key, double& target) {
        if (doc.contains(key)) target = get_number(doc, key, where);
    };
    field("eta", cfg.eta);
    field("gain", cfg.gain);
    field("sigma0", cfg.sigma0);
    field("sigma1", cfg.sigma1);
    field("dark_mean", cfg.dark_mean);
    field("crosstalk", cfg.crosstalk);
    try {
        cfg.validate();
    } catch (const DomainError& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return cfg;
}

json detector_to_json(const DetectorConfig& d) {
    return json{{"label", std::string(to_string(d.kind))},
                {"eta", d.eta},
                {"gain", d.gain},
                {"sigma0", d.sigma0},
                {"sigma1", d.sigma1},
                {"dark_mean", d.dark_mean},
                {"crosstalk", d.crosstalk}};
}

// ---- text output ----------------------------------------------------------

json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json optional_number(const std::optional<double>& x) { return x ? number_or_null(*x) : json(nullptr); }

std::string csv_number(double x) { return format_double(x); }

std::string csv_optional(const std::optional<double>& x) { return x ? format_double(*x) : std::string("nan"); }

void flatten(const json& doc, const std::string& prefix, std::ostringstream& out) {
    if (doc.is_object()) {
        for (const auto& [key, value] : doc.items()) flatten(value, prefix.empty() ? key : prefix + "." + key, out);
    } else if (doc.is_array() && std::all_of(doc.begin(), doc.end(), [](const json& v) { return v.is_primitive(); })) {
        out << prefix << " =";
        for (const auto& v : doc) out << ' ' << (v.is_string() ? v.get<std::string>() : v.dump());
        out << '\n';
    } else if (doc.is_array()) {
        for (std::size_t i = 0; i < doc.size(); ++i) flatten(doc[i], prefix + "." + std::to_string(i), out);
    } else if (doc.is_string()) {
        out << prefix << " = " << doc.get<std::string>() << '\n';
    } else if (doc.is_number_float()) {
        out << prefix << " = " << format_double(doc.get<double>()) << '\n';
    } else {
        out << prefix << " = " << doc.dump() << '\n';
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

std::string point_dir_name(std::size_t index) {
    std::array<char, 32> buf{};
    std::snprintf(buf.data(), buf.size(), "point_%02zu", index);
    return buf.data();
}

ManifestFile manifest_entry(const fs::path& root, const fs::path& file) {
    return {fs::relative(file, root).generic_string(), sha256_file(file)};
}

std::string pulse_height_csv(std::span<const double> values, double gain) {
    std::ostringstream out;
    out << "bin_lo,bin_hi,shots\n";
    if (values.empty()) return out.str();
    PulseHeightSpectrum spectrum(std::vector<double>(values.begin(), values.end()));
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    // About 20 bins per peak spacing when the gain is known.
    std::size_t bins = 256;
    if (gain > 0.0 && *mx > *mn) {
        bins = static_cast<std::size_t>(std::clamp(std::ceil((*mx - *mn) / (gain / 20.0)), 1.0, 20000.0));
    }
    const Histogram h = spectrum.histogram(bins);
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        out << csv_number(h.edge(i)) << ',' << csv_number(h.edge(i + 1)) << ',' << h.counts[i] << '\n';
    }
    return out.str();
}

}  // namespace

// ---- config -----------------------------------------------------------------

std::string_view to_string(ReportFormat format) { return format == ReportFormat::text ? "text" : "json-report"; }

ReportFormat report_format_from_string(std::string_view name) {
    if (name == "text") return ReportFormat::text;
    if (name == "json-report") return ReportFormat::json;
    throw ConfigError("unknown report format '" + std::string(name) + "' (expected text or json-report)");
}

double ExperimentConfig::resolved_tau() const {
    if (tau.has_value() == hwp_angle.has_value()) throw ConfigError("exactly one of tau and hwp_angle must be set");
    return tau ? *tau : hwp_to_tau(*hwp_angle);
}

void ExperimentConfig::validate() const {
    const double t = resolved_tau();
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
    if (hwp_angle && !std::isfinite(*hwp_angle)) throw ConfigError("hwp_angle must be finite");
    if (!(source.mean_photons >= 0.0) || !std::isfinite(source.mean_photons)) {
        throw ConfigError("source.mean_photons must be finite and >= 0");
    }
    if (source.kind == SourceKind::custom) throw ConfigError("source.kind must be thermal or coherent");
    try {
        detector_c.validate();
        detector_d.validate();
    } catch (const DomainError& e) {
        throw ConfigError(e.what());
    }
    if (shots < 1) throw ConfigError("shots must be >= 1");
    for (double f : sweep) {
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError("sweep values must lie in (0, 1]");
    }
    if (bootstrap_resamples < 2) throw ConfigError("bootstrap resamples must be >= 2");
}

std::vector<double> default_sweep(const ExperimentConfig& cfg) {
    const double t = cfg.resolved_tau();
    const double detected_per_photon = t * cfg.detector_c.eta + (1.0 - t) * cfg.detector_d.eta;
    const double top = cfg.source.mean_photons * detected_per_photon;
    if (!(top >= kDefaultSweepHighMean * (1.0 - 1e-12))) {
        throw ConfigError("source too weak for the default sweep: reaching a total detected mean of " +
                          format_double(kDefaultSweepHighMean) + " needs mean_photons >= " +
                          format_double(kDefaultSweepHighMean / detected_per_photon));
    }
    std::vector<double> out;
    const double ratio = std::log(kDefaultSweepHighMean / kDefaultSweepLowMean);
    for (std::size_t i = 0; i < kDefaultSweepPoints; ++i) {
        const double frac = static_cast<double>(i) / static_cast<double>(kDefaultSweepPoints - 1);
        const double target = kDefaultSweepLowMean * std::exp(ratio * frac);
        out.push_back(std::min(1.0, target / top));
    }
    return out;
}

std::vector<double> resolved_sweep(const ExperimentConfig& cfg) { return cfg.sweep.empty() ? default_sweep(cfg) : cfg.sweep; }

ExperimentConfig parse_config(const json& doc) {
    require_object(doc, "<root>");
    reject_unknown(doc, "",
                   {"source", "tau", "hwp_angle", "detector_c", "detector_d", "shots", "seed", "sweep", "outputs"});
    ExperimentConfig cfg;
    try {
        for (const char* key : {"source", "detector_c", "detector_d"}) {
            if (!doc.contains(key)) throw ConfigError(std::string("'") + key + "' is required");
        }
        const auto& src = require_object(doc.at("source"), "source");
        reject_unknown(src, "source", {"mean_photons", "kind"});
        if (!src.contains("mean_photons")) throw ConfigError("'source.mean_photons' is required");
        cfg.source.mean_photons = get_number(src, "mean_photons", "source");
        if (src.contains("kind")) {
            try {
                cfg.source.kind = source_kind_from_string(get_string(src, "kind", "source"));
            } catch (const DomainError& e) {
                throw ConfigError(std::string("source.kind: ") + e.what());
            }
        }

        if (doc.contains("tau")) cfg.tau = get_number(doc, "tau", "<root>");
        if (doc.contains("hwp_angle")) cfg.hwp_angle = get_number(doc, "hwp_angle", "<root>");
        cfg.detector_c = parse_detector(doc.at("detector_c"), "detector_c", true);
        cfg.detector_d = parse_detector(doc.at("detector_d"), "detector_d", false);

        const bool any_sipm =
            cfg.detector_c.kind == DetectorKind::sipm_like || cfg.detector_d.kind == DetectorKind::sipm_like;
        cfg.shots = any_sipm ? 50000 : 30000;
        if (doc.contains("shots")) cfg.shots = static_cast<std::size_t>(get_unsigned(doc, "shots", ""));
        if (doc.contains("seed")) cfg.seed = get_unsigned(doc, "seed", "");

        if (doc.contains("sweep")) {
            const auto& sw = doc.at("sweep");
            if (!sw.is_array() || sw.empty()) throw ConfigError("'sweep' must be a nonempty array of numbers");
            for (const auto& v : sw) {
                if (!v.is_number()) throw ConfigError("'sweep' must be a nonempty array of numbers");
                cfg.sweep.push_back(v.get<double>());
            }
        }

        if (doc.contains("outputs")) {
            const auto& out = require_object(doc.at("outputs"), "outputs");
            reject_unknown(out, "outputs", {"directory", "format", "shot_records"});
            if (out.contains("directory")) cfg.outputs.directory = get_string(out, "directory", "outputs");
            if (out.contains("format")) cfg.outputs.format = report_format_from_string(get_string(out, "format", "outputs"));
            if (out.contains("shot_records")) {
                if (!out.at("shot_records").is_boolean()) throw ConfigError("'outputs.shot_records' must be a boolean");
                cfg.outputs.shot_records = out.at("shot_records").get<bool>();
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig parse_config_text(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(doc);
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_text(text);
}

json config_to_json(const ExperimentConfig& cfg) {
    json doc;
    doc["source"] = {{"mean_photons", cfg.source.mean_photons}, {"kind", std::string(to_string(cfg.source.kind))}};
    if (cfg.tau) doc["tau"] = *cfg.tau;
    if (cfg.hwp_angle) doc["hwp_angle"] = *cfg.hwp_angle;
    doc["detector_c"] = detector_to_json(cfg.detector_c);
    doc["detector_d"] = detector_to_json(cfg.detector_d);
    doc["shots"] = cfg.shots;
    doc["seed"] = cfg.seed;
    if (!cfg.sweep.empty()) doc["sweep"] = cfg.sweep;
    doc["outputs"] = {{"directory", cfg.outputs.directory.generic_string()},
                      {"format", std::string(to_string(cfg.outputs.format))},
                      {"shot_records", cfg.outputs.shot_records}};
    return doc;
}

// ---- simulation and analysis ---------------------------------------------------

ShotSeries simulate_series(const ExperimentConfig& cfg, std::size_t point_index, double filter_t) {
    if (!(filter_t > 0.0 && filter_t <= 1.0)) throw DomainError("filter transmittance must lie in (0, 1]");
    ShotSeries series;
    series.meta.seed = cfg.seed;
    series.meta.source = {cfg.source.mean_photons * filter_t, cfg.source.kind};
    series.meta.tau = cfg.resolved_tau();
    series.meta.detector_c = cfg.detector_c;
    series.meta.detector_d = cfg.detector_d;
    series.meta.filter_transmittance = filter_t;

    const PhotonDistribution dist = build_distribution(series.meta.source);
    const BeamSplitter bs(series.meta.tau);
    series.shots.resize(cfg.shots);
    for (std::size_t s = 0; s < cfg.shots; ++s) {
        auto rng = RandomStream::derive(cfg.seed, static_cast<std::uint64_t>(StreamTag::shot), point_index, s);
        const long n = sample_photon_number(dist, rng);
        const ArmPhotons arms = split_photons(n, bs, rng);
        const DetectorOutput oc = detect_shot(arms.c, cfg.detector_c, rng);
        const DetectorOutput od = detect_shot(arms.d, cfg.detector_d, rng);
        auto& rec = series.shots[s];
        rec.n_true_c = arms.c;
        rec.n_true_d = arms.d;
        rec.fired_c = oc.fired;
        rec.fired_d = od.fired;
        rec.v_c = oc.pulse_height;
        rec.v_d = od.pulse_height;
    }
    return series;
}

PointAnalysis analyze_series(ShotSeries& series, const AnalysisOptions& options) {
    PointAnalysis out;
    if (series.shots.empty()) {
        out.errors.push_back("empty shot series");
        return out;
    }
    std::vector<double> vc, vd;
    vc.reserve(series.shots.size());
    vd.reserve(series.shots.size());
    for (const auto& s : series.shots) {
        vc.push_back(s.v_c);
        vd.push_back(s.v_d);
    }

    std::optional<ArmCalibration> cal_c, cal_d;
    auto calibrate = [&](const std::vector<double>& values, const char* arm, std::optional<ArmCalibration>& slot,
                         std::optional<CalibrationResult>& report) {
        try {
            slot = calibrate_arm(PulseHeightSpectrum(values), series.meta.source.kind);
            report = slot->result;
            if (!(slot->result.objective_value < kGainResidualThreshold)) {
                // Counts read off an unresolved lattice are meaningless.
                out.errors.push_back(std::string("arm ") + arm + " calibration failed: integer residual " +
                                     format_double(slot->result.objective_value) + " above threshold " +
                                     format_double(kGainResidualThreshold));
                slot.reset();
            } else if (!slot->result.converged) {
                out.warnings.push_back(std::string("arm ") + arm + ": dark/cross-talk fit not converged");
            }
        } catch (const CalibrationError& e) {
            out.errors.push_back(std::string("arm ") + arm + " calibration failed: " + e.what());
        } catch (const DomainError& e) {
            out.errors.push_back(std::string("arm ") + arm + " calibration failed: " + e.what());
        }
    };
    calibrate(vc, "c", cal_c, out.calibration_c);
    calibrate(vd, "d", cal_d, out.calibration_d);
    if (!cal_c || !cal_d) return out;

    for (std::size_t i = 0; i < series.shots.size(); ++i) {
        series.shots[i].m_c = cal_c->counts[i];
        series.shots[i].m_d = cal_d->counts[i];
    }
    const auto& mc = cal_c->counts;
    const auto& md = cal_d->counts;

    // HPD-like detectors carry no spurious counts by construction, so their
    // (noisy) fitted values are not used for the correction.
    auto spurious_of = [&](const CalibrationResult& r, const DetectorConfig& det) {
        const bool clean = options.detectors_known && det.kind == DetectorKind::hpd_like;
        return (clean || !r.spurious_fitted) ? std::pair{0.0, 0.0} : std::pair{r.dark_hat, r.crosstalk_hat};
    };
    SpuriousBudget budget;
    std::tie(budget.dark_c, budget.crosstalk_c) = spurious_of(cal_c->result, series.meta.detector_c);
    std::tie(budget.dark_d, budget.crosstalk_d) = spurious_of(cal_d->result, series.meta.detector_d);
    out.correlation = correlation_coefficient(mc, md, budget);

    if (options.detectors_known) {
        const auto& dc = series.meta.detector_c;
        const auto& dd = series.meta.detector_d;
        out.gamma_theory_corrected_nominal =
            gamma_theory_thermal(effective_mean(out.correlation->mean_c, dc.dark_mean, dc.crosstalk).value,
                                 effective_mean(out.correlation->mean_d, dd.dark_mean, dd.crosstalk).value);
    }

    if (series.shots.size() < 2) {
        out.warnings.push_back("fewer than two shots: no bootstrap or difference statistics");
        return out;
    }
    out.bootstrap = bootstrap_errors(mc, md, options.bootstrap_seed, options.bootstrap_resamples);
    out.correlation->gamma_se_bootstrap = out.bootstrap->gamma;
    out.difference = difference_distribution(mc, md);
    return out;
}

std::uint64_t bootstrap_seed(std::uint64_t seed, std::size_t point_index) {
    auto rng = RandomStream::derive(seed, static_cast<std::uint64_t>(StreamTag::bootstrap), point_index);
    return rng();
}

PointResult run_point(const ExperimentConfig& cfg, std::size_t point_index, double filter_t) {
    cfg.validate();
    PointResult point;
    point.index = point_index;
    point.filter_t = filter_t;
    point.source_mean = cfg.source.mean_photons * filter_t;
    point.series = simulate_series(cfg, point_index, filter_t);
    AnalysisOptions options;
    options.bootstrap_seed = bootstrap_seed(cfg.seed, point_index);
    options.bootstrap_resamples = cfg.bootstrap_resamples;
    point.analysis = analyze_series(point.series, options);
    return point;
}

// ---- reports ----------------------------------------------------------------

json calibration_json(const CalibrationResult& r) {
    return json{{"gain_hat", r.gain_hat},
                {"dark_hat", r.dark_hat},
                {"crosstalk_hat", r.crosstalk_hat},
                {"signal_mean_hat", r.signal_mean_hat},
                {"gain_residual", r.objective_value},
                {"nll_per_shot", r.nll_per_shot},
                {"spurious_fitted", r.spurious_fitted},
                {"converged", r.converged}};
}

std::string calibration_text(const CalibrationResult& r) {
    std::ostringstream out;
    flatten(calibration_json(r), "", out);
    return out.str();
}

json report_json(const PointResult& p) {
    const auto& a = p.analysis;
    json doc;
    doc["point"] = p.index;
    doc["filter_t"] = p.filter_t;
    doc["source_mean"] = p.source_mean;
    doc["shots"] = p.series.shots.size();
    doc["seed"] = p.series.meta.seed;
    doc["status"] = a.ok() ? "ok" : "failed";
    doc["errors"] = a.errors;
    doc["warnings"] = a.warnings;
    json cal = json::object();
    if (a.calibration_c) cal["c"] = calibration_json(*a.calibration_c);
    if (a.calibration_d) cal["d"] = calibration_json(*a.calibration_d);
    doc["calibration"] = cal;
    if (a.correlation) {
        const auto& c = *a.correlation;
        doc["correlation"] = {{"mean_c", c.mean_c},
                              {"mean_d", c.mean_d},
                              {"var_c", c.var_c},
                              {"var_d", c.var_d},
                              {"covariance", c.covariance},
                              {"gamma_hat", c.gamma_hat},
                              {"gamma_se", number_or_null(c.gamma_se)},
                              {"gamma_se_bootstrap", optional_number(c.gamma_se_bootstrap)},
                              {"gamma_theory", c.gamma_theory},
                              {"gamma_theory_corrected", c.gamma_theory_corrected},
                              {"gamma_theory_corrected_nominal", optional_number(a.gamma_theory_corrected_nominal)},
                              {"effective_mean_c", c.effective_mean_c},
                              {"effective_mean_d", c.effective_mean_d},
                              {"effective_mean_clamped", c.effective_clamped},
                              {"degenerate", c.degenerate}};
    }
    if (a.difference) {
        const auto& d = *a.difference;
        doc["difference"] = {
            {"var_delta", d.var_delta},
            {"var_delta_se_bootstrap", a.bootstrap ? number_or_null(a.bootstrap->var_delta) : json(nullptr)},
            {"var_delta_theory", d.var_delta_theory},
            {"noise_reduction", optional_number(d.noise_reduction)},
            {"noise_reduction_se_bootstrap",
             a.bootstrap ? number_or_null(a.bootstrap->noise_reduction) : json(nullptr)},
            {"noise_reduction_theory", d.noise_reduction_theory},
            {"fidelity", d.fidelity},
            {"theory_tail_dropped", d.theory_tail_dropped},
            {"fidelity_support", "union of observed and theoretical delta support; theory truncated at tail 1e-12"}};
    }
    if (a.bootstrap) doc["bootstrap_resamples"] = a.bootstrap->resamples;
    return doc;
}

std::string report_text(const PointResult& point) {
    std::ostringstream out;
    flatten(report_json(point), "", out);
    return out.str();
}

// ---- files --------------------------------------------------------------------

std::string format_double(double value) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    return std::string(buf.data(), res.ptr);
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read '" + path.string() + "' for hashing");
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("SHA-256 init failed");
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xf]);
    }
    return out;
}

void write_shot_records(const ShotSeries& series, const fs::path& path) {
    std::ostringstream out;
    out << "shot_index,v_c,v_d,m_c,m_d\n";
    for (std::size_t i = 0; i < series.shots.size(); ++i) {
        const auto& s = series.shots[i];
        out << i << ',' << format_double(s.v_c) << ',' << format_double(s.v_d) << ',' << s.m_c << ',' << s.m_d << '\n';
    }
    write_text(path, out.str());
}

ShotSeries read_shot_records(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read shot records '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line) || line != "shot_index,v_c,v_d,m_c,m_d") {
        throw ConfigError("shot records must start with the header 'shot_index,v_c,v_d,m_c,m_d'");
    }
    ShotSeries series;
    series.meta.has_ground_truth = false;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::array<std::string_view, 5> fields;
        std::string_view rest(line);
        for (std::size_t f = 0; f < fields.size(); ++f) {
            const auto comma = rest.find(',');
            if ((comma == std::string_view::npos) != (f == fields.size() - 1)) {
                throw ConfigError("shot records row " + std::to_string(row) + ": expected 5 fields");
            }
            fields[f] = rest.substr(0, comma);
            rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
        }
        auto parse = [&](std::string_view text, auto& target) {
            const auto res = std::from_chars(text.data(), text.data() + text.size(), target);
            if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
                throw ConfigError("shot records row " + std::to_string(row) + ": bad value '" + std::string(text) + "'");
            }
        };
        std::size_t index = 0;
        ShotRecord rec;
        parse(fields[0], index);
        parse(fields[1], rec.v_c);
        parse(fields[2], rec.v_d);
        parse(fields[3], rec.m_c);
        parse(fields[4], rec.m_d);
        if (index != series.shots.size()) throw ConfigError("shot records row " + std::to_string(row) + ": shot_index out of sequence");
        if (!std::isfinite(rec.v_c) || !std::isfinite(rec.v_d) || rec.m_c < 0 || rec.m_d < 0) {
            throw ConfigError("shot records row " + std::to_string(row) + ": values out of range");
        }
        series.shots.push_back(rec);
    }
    return series;
}

std::vector<ManifestFile> write_point_outputs(const PointResult& point, const fs::path& root, const fs::path& dir,
                                              const OutputOptions& options) {
    fs::create_directories(dir);
    std::vector<ManifestFile> files;
    auto emit = [&](const std::string& name, const std::string& text) {
        const fs::path file = dir / name;
        write_text(file, text);
        files.push_back(manifest_entry(root, file));
    };
    const auto& a = point.analysis;

    if (options.shot_records) {
        write_shot_records(point.series, dir / "shots.csv");
        files.push_back(manifest_entry(root, dir / "shots.csv"));
    }
    if (options.format == ReportFormat::json) {
        emit("report.json", report_json(point).dump(2) + "\n");
    } else {
        emit("report.txt", report_text(point));
    }

    std::vector<double> vc, vd;
    for (const auto& s : point.series.shots) {
        vc.push_back(s.v_c);
        vd.push_back(s.v_d);
    }
    emit("pulse_height_c.csv", pulse_height_csv(vc, a.calibration_c ? a.calibration_c->gain_hat : 0.0));
    emit("pulse_height_d.csv", pulse_height_csv(vd, a.calibration_d ? a.calibration_d->gain_hat : 0.0));

    if (a.correlation) {
        const double n = static_cast<double>(point.series.shots.size());
        const Histogram2D joint = joint_histogram(point.series);
        std::ostringstream jc;
        jc << "m_c,m_d,shots,p_measured,p_theory\n";
        for (std::size_t i = 0; i < joint.nx; ++i) {
            for (std::size_t j = 0; j < joint.ny; ++j) {
                const long k = joint.at(i, j);
                if (k == 0) continue;
                jc << i << ',' << j << ',' << k << ',' << csv_number(static_cast<double>(k) / n) << ','
                   << csv_number(joint_probability(a.correlation->mean_c, a.correlation->mean_d, static_cast<long>(i),
                                                   static_cast<long>(j)))
                   << '\n';
            }
        }
        emit("joint_counts.csv", jc.str());

        JointHistogramOptions unbinned;
        unbinned.unbinned = true;
        unbinned.gain_c = a.calibration_c->gain_hat;
        unbinned.gain_d = a.calibration_d->gain_hat;
        const Histogram2D scaled = joint_histogram(point.series, unbinned);
        std::ostringstream ju;
        ju << "x_lo,y_lo,shots\n";
        for (std::size_t i = 0; i < scaled.nx; ++i) {
            for (std::size_t j = 0; j < scaled.ny; ++j) {
                const long k = scaled.at(i, j);
                if (k == 0) continue;
                ju << csv_number(scaled.x0 + static_cast<double>(i) * scaled.width) << ','
                   << csv_number(scaled.y0 + static_cast<double>(j) * scaled.width) << ',' << k << '\n';
            }
        }
        emit("joint_unbinned.csv", ju.str());
    }

    if (a.difference) {
        const auto& d = *a.difference;
        // Observed support plus the theoretical range where the law is not negligible.
        long lo = d.pmf.offset, hi = d.pmf.last();
        for (long k = d.pmf_theory.offset; k <= d.pmf_theory.last(); ++k) {
            if (d.pmf_theory.at(k) >= 1e-12) {
                lo = std::min(lo, k);
                hi = std::max(hi, k);
            }
        }
        std::ostringstream dp;
        dp << "delta,p_measured,p_theory\n";
        for (long k = lo; k <= hi; ++k) {
            dp << k << ',' << csv_number(d.pmf.at(k)) << ',' << csv_number(d.pmf_theory.at(k)) << '\n';
        }
        emit("delta_pmf.csv", dp.str());
    }
    return files;
}

bool RunManifest::all_ok() const noexcept {
    return std::all_of(points.begin(), points.end(), [](const ManifestPoint& p) { return p.ok; });
}

json RunManifest::to_json() const {
    auto files_json = [](const std::vector<ManifestFile>& files) {
        json arr = json::array();
        for (const auto& f : files) arr.push_back({{"path", f.path}, {"sha256", f.sha256}});
        return arr;
    };
    json doc;
    doc["software"] = "photocorr";
    doc["version"] = std::string(kSoftwareVersion);
    doc["config"] = config;
    doc["sweep_origin"] = sweep_origin;
    json pts = json::array();
    for (const auto& p : points) {
        json e{{"index", p.index},
               {"filter_t", p.filter_t},
               {"source_mean", p.source_mean},
               {"status", p.ok ? "ok" : "failed"},
               {"errors", p.errors},
               {"files", files_json(p.files)},
               {"wall_clock_seconds", p.wall_clock_seconds}};
        const auto report = std::find_if(p.files.begin(), p.files.end(), [](const ManifestFile& f) {
            return f.path.ends_with("/report.txt") || f.path.ends_with("/report.json");
        });
        if (report != p.files.end()) e["report"] = report->path;
        pts.push_back(std::move(e));
    }
    doc["points"] = std::move(pts);
    doc["tables"] = files_json(tables);
    return doc;
}

RunManifest run_sweep(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::vector<double> sweep = resolved_sweep(cfg);
    const fs::path root = cfg.outputs.directory;
    fs::create_directories(root);

    RunManifest manifest;
    manifest.config = config_to_json(cfg);
    manifest.sweep_origin = cfg.sweep.empty()
                                ? "default: " + std::to_string(kDefaultSweepPoints) +
                                      " log-spaced total detected means over [" + format_double(kDefaultSweepLowMean) +
                                      ", " + format_double(kDefaultSweepHighMean) + "]"
                                : "config";

    std::ostringstream gamma_table, diff_table, cal_table;
    gamma_table << "point,filter_t,source_mean,mean_c,mean_d,total_mean,gamma_hat,gamma_se,gamma_se_bootstrap,"
                   "gamma_theory,gamma_theory_corrected,gamma_theory_corrected_nominal,status\n";
    diff_table << "point,total_mean,var_delta,var_delta_se_bootstrap,var_delta_theory,noise_reduction,"
                  "noise_reduction_se_bootstrap,noise_reduction_theory,fidelity,status\n";
    cal_table << "point,arm,gain_hat,dark_hat,crosstalk_hat,signal_mean_hat,gain_residual,nll_per_shot,converged\n";

    for (std::size_t i = 0; i < sweep.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        ManifestPoint entry;
        entry.index = i;
        entry.filter_t = sweep[i];
        entry.source_mean = cfg.source.mean_photons * sweep[i];
        try {
            const PointResult point = run_point(cfg, i, sweep[i]);
            entry.files = write_point_outputs(point, root, root / point_dir_name(i), cfg.outputs);
            entry.errors = point.analysis.errors;
            entry.ok = point.analysis.ok();

            const auto& a = point.analysis;
            const std::string status = entry.ok ? "ok" : "failed";
            if (a.correlation) {
                const auto& c = *a.correlation;
                gamma_table << i << ',' << csv_number(sweep[i]) << ',' << csv_number(entry.source_mean) << ','
                            << csv_number(c.mean_c) << ',' << csv_number(c.mean_d) << ','
                            << csv_number(c.mean_c + c.mean_d) << ',' << csv_number(c.gamma_hat) << ','
                            << csv_number(c.gamma_se) << ',' << csv_optional(c.gamma_se_bootstrap) << ','
                            << csv_number(c.gamma_theory) << ',' << csv_number(c.gamma_theory_corrected) << ','
                            << csv_optional(a.gamma_theory_corrected_nominal) << ',' << status << '\n';
            } else {
                gamma_table << i << ',' << csv_number(sweep[i]) << ',' << csv_number(entry.source_mean)
                            << ",nan,nan,nan,nan,nan,nan,nan,nan,nan," << status << '\n';
            }
            if (a.difference) {
                const auto& d = *a.difference;
                diff_table << i << ',' << csv_number(d.mean_c + d.mean_d) << ',' << csv_number(d.var_delta) << ','
                           << csv_number(a.bootstrap->var_delta) << ',' << csv_number(d.var_delta_theory) << ','
                           << csv_optional(d.noise_reduction) << ',' << csv_number(a.bootstrap->noise_reduction) << ','
                           << csv_number(d.noise_reduction_theory) << ',' << csv_number(d.fidelity) << ',' << status
                           << '\n';
            } else {
                diff_table << i << ",nan,nan,nan,nan,nan,nan,nan,nan," << status << '\n';
            }
            for (const auto& [arm, cal] : {std::pair{"c", a.calibration_c}, std::pair{"d", a.calibration_d}}) {
                if (!cal) continue;
                cal_table << i << ',' << arm << ',' << csv_number(cal->gain_hat) << ',' << csv_number(cal->dark_hat)
                          << ',' << csv_number(cal->crosstalk_hat) << ',' << csv_number(cal->signal_mean_hat) << ','
                          << csv_number(cal->objective_value) << ',' << csv_number(cal->nll_per_shot) << ','
                          << (cal->converged ? "true" : "false") << '\n';
            }
        } catch (const std::exception& e) {
            entry.ok = false;
            entry.errors.push_back(e.what());
        }
        entry.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        manifest.points.push_back(std::move(entry));
    }

    for (const auto& [name, table] : {std::pair{"gamma_table.csv", &gamma_table},
                                      std::pair{"difference_table.csv", &diff_table},
                                      std::pair{"calibration_table.csv", &cal_table}}) {
        write_text(root / name, table->str());
        manifest.tables.push_back(manifest_entry(root, root / name));
    }
    write_text(root / "manifest.json", manifest.to_json().dump(2) + "\n");
    return manifest;
}

}  // namespace photocorr
