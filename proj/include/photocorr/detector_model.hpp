#pragma once

#include <string_view>

#include "photocorr/random.hpp"

namespace photocorr {

enum class DetectorKind { hpd_like, sipm_like };

std::string_view to_string(DetectorKind kind);
DetectorKind detector_kind_from_string(std::string_view name);

/// Imperfection budget of one photon-number-resolving detector.
///
/// Output model: `gain * fired + N(0, sigma0^2 + fired * sigma1^2)`, where
/// `fired` counts detected photons plus dark counts, each further allowed one
/// cross-talk avalanche with probability `crosstalk`.
struct DetectorConfig {
    double eta = 1.0;        ///< quantum efficiency
    double gain = 1.0;       ///< output units per fired count
    double sigma0 = 0.0;     ///< zero-peak width, output units
    double sigma1 = 0.0;     ///< extra width per count (quadrature), output units
    double dark_mean = 0.0;  ///< mean dark counts per shot
    double crosstalk = 0.0;  ///< cross-talk probability per avalanche
    DetectorKind kind = DetectorKind::hpd_like;

    /// Throws DomainError if any field is out of range, or if an HPD-like
    /// detector carries dark counts or cross-talk.
    void validate() const;

    static DetectorConfig ideal();
    static DetectorConfig hpd_like();
    /// SiPM-like defaults differ per beam-splitter arm in dark counts and cross-talk.
    static DetectorConfig sipm_like_c();
    static DetectorConfig sipm_like_d();
};

struct DetectorOutput {
    long true_detected = 0;  ///< after efficiency thinning, before spurious counts
    long fired = 0;          ///< after dark counts and cross-talk
    double pulse_height = 0.0;
};

long apply_dark_counts(long m, double dark_mean, RandomStream& rng);

/// Single-generation cross-talk: m + Binomial(m, epsilon).
long apply_cross_talk(long m, double epsilon, RandomStream& rng);

double pulse_height(long fired, const DetectorConfig& cfg, RandomStream& rng);

/// Efficiency thinning, then dark counts, then cross-talk, then analog output.
DetectorOutput detect_shot(long n_arm, const DetectorConfig& cfg, RandomStream& rng);

}  // namespace photocorr
