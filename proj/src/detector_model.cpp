#include "photocorr/detector_model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "photocorr/errors.hpp"
#include "photocorr/optical_bench.hpp"

namespace photocorr {

std::string_view to_string(DetectorKind kind) {
    return kind == DetectorKind::hpd_like ? "HPD-like" : "SiPM-like";
}

DetectorKind detector_kind_from_string(std::string_view name) {
    if (name == "HPD-like") return DetectorKind::hpd_like;
    if (name == "SiPM-like") return DetectorKind::sipm_like;
    throw DomainError("unknown detector label '" + std::string(name) + "'");
}

void DetectorConfig::validate() const {
    if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("detector eta must lie in [0, 1]");
    if (!(gain > 0.0) || !std::isfinite(gain)) throw DomainError("detector gain must be > 0");
    if (!(sigma0 >= 0.0) || !(sigma1 >= 0.0)) throw DomainError("detector peak widths must be >= 0");
    if (!(dark_mean >= 0.0) || !std::isfinite(dark_mean)) throw DomainError("dark-count mean must be >= 0");
    if (!(crosstalk >= 0.0 && crosstalk < 1.0)) throw DomainError("cross-talk probability must lie in [0, 1)");
    if (kind == DetectorKind::hpd_like && (dark_mean != 0.0 || crosstalk != 0.0)) {
        throw DomainError("HPD-like detectors have no dark counts or cross-talk");
    }
}

DetectorConfig DetectorConfig::ideal() {
    return {1.0, 1.0, 0.0, 0.0, 0.0, 0.0, DetectorKind::hpd_like};
}

DetectorConfig DetectorConfig::hpd_like() {
    return {0.4, 1.0, 0.15, 0.05, 0.0, 0.0, DetectorKind::hpd_like};
}

DetectorConfig DetectorConfig::sipm_like_c() {
    return {0.65, 1.0, 0.12, 0.03, 0.071, 0.10, DetectorKind::sipm_like};
}

DetectorConfig DetectorConfig::sipm_like_d() {
    return {0.65, 1.0, 0.12, 0.03, 0.034, 0.08, DetectorKind::sipm_like};
}

long apply_dark_counts(long m, double dark_mean, RandomStream& rng) {
    if (!(dark_mean >= 0.0)) throw DomainError("dark-count mean must be >= 0");
    if (dark_mean == 0.0) return m;
    std::poisson_distribution<long> dark(dark_mean);
    return m + dark(rng);
}

long apply_cross_talk(long m, double epsilon, RandomStream& rng) {
    if (!(epsilon >= 0.0 && epsilon < 1.0)) throw DomainError("cross-talk probability must lie in [0, 1)");
    if (m == 0 || epsilon == 0.0) return m;
    std::binomial_distribution<long> extra(m, epsilon);
    return m + extra(rng);
}

double pulse_height(long fired, const DetectorConfig& cfg, RandomStream& rng) {
    if (fired < 0) throw DomainError("fired count must be >= 0");
    const double mean = cfg.gain * static_cast<double>(fired);
    const double var = cfg.sigma0 * cfg.sigma0 + static_cast<double>(fired) * cfg.sigma1 * cfg.sigma1;
    if (var == 0.0) return mean;
    std::normal_distribution<double> noise(0.0, std::sqrt(var));
    return mean + noise(rng);
}

DetectorOutput detect_shot(long n_arm, const DetectorConfig& cfg, RandomStream& rng) {
    if (n_arm < 0) throw DomainError("photon number at detector must be >= 0");
    DetectorOutput out;
    out.true_detected = detect_thinning(n_arm, cfg.eta, rng);
    out.fired = apply_cross_talk(apply_dark_counts(out.true_detected, cfg.dark_mean, rng), cfg.crosstalk, rng);
    out.pulse_height = pulse_height(out.fired, cfg, rng);
    return out;
}

}  // namespace photocorr
