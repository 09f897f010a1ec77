#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "photocorr/errors.hpp"
#include "photocorr/photon_statistics.hpp"

namespace photocorr {

/// Fixed-width 1D histogram; bin i covers [lo + i*width, lo + (i+1)*width).
struct Histogram {
    double lo = 0.0;
    double width = 1.0;
    std::vector<long> counts;

    double edge(std::size_t i) const noexcept { return lo + static_cast<double>(i) * width; }
    long total() const noexcept;
};

/// Per-shot analog detector outputs of one arm.
class PulseHeightSpectrum {
  public:
    /// Throws DomainError on non-finite values.
    explicit PulseHeightSpectrum(std::vector<double> values);

    std::span<const double> values() const noexcept { return values_; }
    std::size_t size() const noexcept { return values_.size(); }

    /// Histogram over [min, max] with the given number of bins.
    Histogram histogram(std::size_t bins) const;

  private:
    std::vector<double> values_;
};

struct GainBracket {
    double lo = 0.0;
    double hi = 0.0;
};

struct GainFit {
    double gain = 0.0;
    double objective = 0.0;  ///< integer residual at the returned gain
    int refinement_steps = 0;
};

/// Mean squared distance of value/gain to the nearest nonnegative integer.
double integer_residual(std::span<const double> values, double gain);

/// Lattice spacing seen by the first off-zero peak of the histogram
/// autocorrelation. Throws CalibrationError when no periodic structure exists.
double seed_gain_autocorrelation(const PulseHeightSpectrum& spectrum);

/// Gain inside an explicit bracket: grid scan of integer_residual, golden
/// section refinement in the best cell, then self-consistent
/// assign-and-regress iterations from that basin.
///
/// Throws DomainError for empty spectra or a bad bracket, and
/// CalibrationError when the spectrum shows no resolved peak structure.
GainFit estimate_gain(const PulseHeightSpectrum& spectrum, GainBracket search);

/// Same, with the bracket seeded by seed_gain_autocorrelation().
GainFit estimate_gain(const PulseHeightSpectrum& spectrum);

/// round(value / gain), clamped below at 0.
long assign_counts(double value, double gain);
std::vector<long> assign_counts(std::span<const double> values, double gain);

/// Count pmf of a thermal signal plus Poisson dark counts, passed through
/// single-generation cross-talk. Entries 0..length-1; mass beyond is dropped.
/// Evaluated by a linear recurrence on the generating function.
std::vector<double> composite_count_pmf(double signal_mean, double dark_mean, double crosstalk,
                                        std::size_t length);

/// Same pmf by explicit thermal * Poisson convolution followed by binomial
/// cross-talk spreading. Slower; kept as an independent reference.
std::vector<double> composite_count_pmf_by_convolution(double signal_mean, double dark_mean, double crosstalk,
                                                       std::size_t length);

/// Same, with length large enough that the dropped tail is below tail_tol.
std::vector<double> composite_count_pmf(double signal_mean, double dark_mean, double crosstalk,
                                        double tail_tol = kDefaultTailTolerance);

struct DarkCrosstalkFit {
    double signal_mean = 0.0;
    double dark_mean = 0.0;
    double crosstalk = 0.0;
    double objective = 0.0;  ///< negative log-likelihood per shot
    bool converged = false;
    long evaluations = 0;
    /// Objective after every accepted step, across all starts in order; a new
    /// start is marked by restart_index.
    std::vector<double> trace;
    std::vector<std::size_t> restart_index;
    /// (signal, dark, cross-talk) at every trace entry.
    std::vector<std::array<double, 3>> iterates;
};

struct DarkCrosstalkOptions {
    double rel_tol = 1e-6;
    long max_iterations = 10000;  ///< coordinate-descent sweeps per start
    int starts = 5;
};

/// Thrown when the optimizer budget runs out; carries the best fit so far.
class CalibrationFailure : public CalibrationError {
  public:
    CalibrationFailure(const std::string& what, DarkCrosstalkFit best)
        : CalibrationError(what), best_(std::move(best)) {}
    const DarkCrosstalkFit& best() const noexcept { return best_; }

  private:
    DarkCrosstalkFit best_;
};

/// Maximum-likelihood fit of (signal mean, dark mean, cross-talk) to the
/// per-shot count histogram of one arm.
///
/// Only thermal sources are identifiable; other kinds throw DomainError.
/// All-zero data returns a fit flagged non-converged.
DarkCrosstalkFit estimate_dark_crosstalk(std::span<const long> counts, SourceKind source_kind,
                                         const DarkCrosstalkOptions& options = {});

/// Residual threshold separating a lattice-resolved spectrum from a
/// featureless one (uniform fractional parts give 1/12).
inline constexpr double kGainResidualThreshold = 0.08;

struct CalibrationResult {
    double gain_hat = 0.0;
    double dark_hat = 0.0;
    double crosstalk_hat = 0.0;
    double signal_mean_hat = 0.0;
    double objective_value = 0.0;  ///< integer residual at gain_hat
    double nll_per_shot = 0.0;     ///< dark/cross-talk fit objective
    bool spurious_fitted = false;  ///< dark/cross-talk fit ran (thermal sources only)
    bool converged = false;
};

struct ArmCalibration {
    CalibrationResult result;
    std::vector<long> counts;
};

/// Full calibration of one arm: gain, count assignment, dark/cross-talk fit.
/// Gain failures throw CalibrationError; a dark/cross-talk fit that does not
/// converge is reported through `result.converged`. Non-thermal sources skip
/// the dark/cross-talk fit, which is only identifiable for thermal light.
ArmCalibration calibrate_arm(const PulseHeightSpectrum& spectrum, SourceKind source_kind,
                             const DarkCrosstalkOptions& options = {});

}  // namespace photocorr
