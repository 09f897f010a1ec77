#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "photocorr/random.hpp"

namespace photocorr {

enum class SourceKind { thermal, coherent, custom };

std::string_view to_string(SourceKind kind);
SourceKind source_kind_from_string(std::string_view name);

struct SourceConfig {
    double mean_photons = 0.0;
    SourceKind kind = SourceKind::thermal;
};

/// Default tail mass discarded when truncating a photon-number pmf.
inline constexpr double kDefaultTailTolerance = 1e-12;

/// Photon-number pmf over n = 0..n_max. Immutable after construction.
class PhotonDistribution {
  public:
    /// Takes ownership of an explicit pmf. Entries must be nonnegative and
    /// sum to 1 within 1e-9; throws DomainError otherwise.
    PhotonDistribution(std::vector<double> probs, SourceKind label);

    std::span<const double> probs() const noexcept { return probs_; }
    std::size_t n_max() const noexcept { return probs_.size() - 1; }
    SourceKind label() const noexcept { return label_; }
    double operator[](std::size_t n) const noexcept { return n < probs_.size() ? probs_[n] : 0.0; }

    /// Cumulative distribution, cdf()[n] = P(N <= n).
    std::span<const double> cdf() const noexcept { return cdf_; }

  private:
    std::vector<double> probs_;
    std::vector<double> cdf_;
    SourceKind label_;
};

struct Moments {
    double mean = 0.0;
    double variance = 0.0;
};

/// Single-mode thermal pmf nbar^n / (1+nbar)^(1+n), evaluated in log space.
double thermal_pmf(double mean_photons, long n);

/// Poisson pmf, used for the coherent test fixture and for dark counts.
double poisson_pmf(double mean, long n);

/// Smallest truncation whose discarded tail mass is below tail_tol.
/// Requires tail_tol in (0, 1e-6].
PhotonDistribution build_distribution(const SourceConfig& cfg,
                                      double tail_tol = kDefaultTailTolerance);

Moments moments(const PhotonDistribution& dist);

/// Inverse-CDF draw.
long sample_photon_number(const PhotonDistribution& dist, RandomStream& rng);

}  // namespace photocorr
