#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "photocorr/detector_model.hpp"
#include "photocorr/photon_statistics.hpp"

namespace photocorr {

struct ShotRecord {
    long n_true_c = 0;  ///< photons reaching detector c
    long n_true_d = 0;
    long fired_c = 0;   ///< simulated ground-truth counts
    long fired_d = 0;
    long m_c = 0;       ///< counts assigned from the pulse height
    long m_d = 0;
    double v_c = 0.0;   ///< pulse height, output units
    double v_d = 0.0;
};

struct ShotMeta {
    std::uint64_t seed = 0;
    SourceConfig source;
    double tau = 0.5;
    DetectorConfig detector_c;
    DetectorConfig detector_d;
    double filter_transmittance = 1.0;
    /// False for series loaded from shot records, whose true photon numbers
    /// and fired counts are unknown (left at 0).
    bool has_ground_truth = true;
};

struct ShotSeries {
    ShotMeta meta;
    std::vector<ShotRecord> shots;

    std::vector<long> counts_c() const;
    std::vector<long> counts_d() const;
};

/// Discrete pmf on the integers offset, offset+1, ...
struct DiscretePmf {
    long offset = 0;
    std::vector<double> probs;

    double at(long k) const noexcept;
    long last() const noexcept { return offset + static_cast<long>(probs.size()) - 1; }
    double total() const noexcept;
    double mean() const noexcept;
    double variance() const noexcept;
};

/// Bivariate pmf, row-major in m_c: probs[m_c * cols + m_d].
struct JointDistribution {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> probs;
    double tail_dropped = 0.0;

    double at(long m_c, long m_d) const noexcept;
    double total() const noexcept;
};

struct CorrelationReport {
    std::size_t shots = 0;
    double mean_c = 0.0;
    double mean_d = 0.0;
    double var_c = 0.0;
    double var_d = 0.0;
    double covariance = 0.0;
    double gamma_hat = 0.0;
    double gamma_se = 0.0;  ///< (1 - gamma^2)/sqrt(N)
    std::optional<double> gamma_se_bootstrap;
    double gamma_theory = 0.0;            ///< thermal closed form at the measured means
    double gamma_theory_corrected = 0.0;  ///< same at the effective means
    double effective_mean_c = 0.0;
    double effective_mean_d = 0.0;
    bool effective_clamped = false;
    bool degenerate = false;  ///< both arms constant, or fewer than two shots
};

struct EffectiveMean {
    double value = 0.0;
    bool clamped = false;
};

/// (mean - dark)/(1 + epsilon), clamped at 0.
EffectiveMean effective_mean(double mean, double dark_mean, double epsilon);

/// Dark-count and cross-talk budget used for the effective-mean correction.
struct SpuriousBudget {
    double dark_c = 0.0;
    double dark_d = 0.0;
    double crosstalk_c = 0.0;
    double crosstalk_d = 0.0;
};

/// Pearson correlation of the paired counts (unbiased sample moments).
/// Throws DomainError on empty or mismatched input.
CorrelationReport correlation_coefficient(std::span<const long> m_c, std::span<const long> m_d,
                                          const SpuriousBudget& spurious = {});
CorrelationReport correlation_coefficient(const ShotSeries& series, const SpuriousBudget& spurious = {});

struct BootstrapErrors {
    std::size_t resamples = 0;
    double gamma = 0.0;
    double var_delta = 0.0;
    double noise_reduction = 0.0;
};

inline constexpr std::size_t kDefaultBootstrapResamples = 1000;

/// Index-resampling bootstrap; resample r draws from its own stream derived
/// from (seed, r), so results do not depend on evaluation order.
BootstrapErrors bootstrap_errors(std::span<const long> m_c, std::span<const long> m_d, std::uint64_t seed,
                                 std::size_t resamples = kDefaultBootstrapResamples);

struct DifferenceStats {
    DiscretePmf pmf;         ///< empirical p(delta)
    DiscretePmf pmf_theory;  ///< thinned-thermal law at the sample means
    double theory_tail_dropped = 0.0;
    double mean_c = 0.0;
    double mean_d = 0.0;
    double var_delta = 0.0;
    double var_delta_theory = 0.0;
    std::optional<double> noise_reduction;  ///< empty when both means vanish
    double noise_reduction_theory = 0.0;
    double fidelity = 0.0;
};

/// Throws DomainError for fewer than two shots.
DifferenceStats difference_distribution(std::span<const long> m_c, std::span<const long> m_d);
DifferenceStats difference_distribution(const ShotSeries& series);

/// Closed-form law of thermal light split and thinned to detected means a, b:
/// p(i, j) = C(i+j, i) a^i b^j / (1+a+b)^(i+j+1). Rows and columns cover every
/// i + j < N, with N chosen so the mass of i + j >= N is below tail_tol.
JointDistribution joint_pmf_theory(double mean_c, double mean_d, double tail_tol = kDefaultTailTolerance);

/// Single entry of the same law, for any (i, j) without truncation.
double joint_probability(double mean_c, double mean_d, long m_c, long m_d);

/// Law of m_c - m_d under the same model.
/// Truncated so that both the dropped mass and the dropped second moment
/// stay below tail_tol.
DiscretePmf difference_pmf_theory(double mean_c, double mean_d, double tail_tol = kDefaultTailTolerance);

/// Bhattacharyya overlap on the union of supports. Each pmf must be
/// nonnegative and sum to 1 within 1e-9.
double fidelity(const DiscretePmf& p, const DiscretePmf& q);

/// 2D histogram with square cells of side `width`; cell (i, j) covers
/// [x0 + i w, x0 + (i+1) w) x [y0 + j w, y0 + (j+1) w).
struct Histogram2D {
    double x0 = 0.0;
    double y0 = 0.0;
    double width = 1.0;
    std::size_t nx = 0;
    std::size_t ny = 0;
    std::vector<long> counts;  ///< row-major in x

    long at(std::size_t i, std::size_t j) const { return counts.at(i * ny + j); }
    long total() const noexcept;
};

struct JointHistogramOptions {
    bool unbinned = false;  ///< histogram v/gain instead of integer counts
    double gain_c = 1.0;
    double gain_d = 1.0;
    double bin_width = 0.1;
};

/// Integer mode: cells are centred on the counts (x0 = y0 = -0.5, width 1),
/// so cell (i, j) holds the shots with m_c = i, m_d = j.
Histogram2D joint_histogram(const ShotSeries& series, const JointHistogramOptions& options = {});

}  // namespace photocorr
