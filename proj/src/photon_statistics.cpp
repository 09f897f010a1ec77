#include "photocorr/photon_statistics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "photocorr/errors.hpp"

namespace photocorr {

std::string_view to_string(SourceKind kind) {
    switch (kind) {
        case SourceKind::thermal: return "thermal";
        case SourceKind::coherent: return "coherent";
        case SourceKind::custom: return "custom";
    }
    return "custom";
}

SourceKind source_kind_from_string(std::string_view name) {
    if (name == "thermal") return SourceKind::thermal;
    if (name == "coherent") return SourceKind::coherent;
    if (name == "custom") return SourceKind::custom;
    throw DomainError("unknown source kind '" + std::string(name) + "'");
}

PhotonDistribution::PhotonDistribution(std::vector<double> probs, SourceKind label)
    : probs_(std::move(probs)), label_(label) {
    if (probs_.empty()) throw DomainError("photon distribution needs at least one entry");
    double total = 0.0;
    cdf_.reserve(probs_.size());
    for (double p : probs_) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw DomainError("photon distribution has a negative or non-finite entry");
        total += p;
        cdf_.push_back(total);
    }
    if (total < 1.0 - 1e-9 || total > 1.0 + 1e-9) {
        throw DomainError("photon distribution does not sum to 1 (sum = " + std::to_string(total) + ")");
    }
}

double thermal_pmf(double mean_photons, long n) {
    if (!(mean_photons >= 0.0) || n < 0) throw DomainError("thermal_pmf needs nbar >= 0 and n >= 0");
    if (mean_photons == 0.0) return n == 0 ? 1.0 : 0.0;
    const double log_p = static_cast<double>(n) * std::log(mean_photons) -
                         static_cast<double>(n + 1) * std::log1p(mean_photons);
    return std::exp(log_p);
}

double poisson_pmf(double mean, long n) {
    if (!(mean >= 0.0) || n < 0) throw DomainError("poisson_pmf needs mean >= 0 and n >= 0");
    if (mean == 0.0) return n == 0 ? 1.0 : 0.0;
    const double dn = static_cast<double>(n);
    return std::exp(dn * std::log(mean) - mean - std::lgamma(dn + 1.0));
}

PhotonDistribution build_distribution(const SourceConfig& cfg, double tail_tol) {
    if (!(tail_tol > 0.0 && tail_tol <= 1e-6)) throw DomainError("tail tolerance must lie in (0, 1e-6]");
    if (!(cfg.mean_photons >= 0.0) || !std::isfinite(cfg.mean_photons)) {
        throw DomainError("mean photon number must be finite and >= 0");
    }
    const double nbar = cfg.mean_photons;
    std::vector<double> probs;

    switch (cfg.kind) {
        case SourceKind::thermal: {
            if (nbar == 0.0) return PhotonDistribution({1.0}, SourceKind::thermal);
            // Tail beyond n is exactly r^(n+1) with r = nbar/(1+nbar).
            const double log_r = std::log(nbar) - std::log1p(nbar);
            const auto n_max = std::max(0L, static_cast<long>(std::ceil(std::log(tail_tol) / log_r)) - 1);
            probs.reserve(static_cast<std::size_t>(n_max) + 1);
            for (long n = 0; n <= n_max; ++n) probs.push_back(thermal_pmf(nbar, n));
            while (std::pow(nbar / (1.0 + nbar), static_cast<double>(probs.size())) >= tail_tol) {
                probs.push_back(thermal_pmf(nbar, static_cast<long>(probs.size())));
            }
            break;
        }
        case SourceKind::coherent: {
            double cumulative = 0.0;
            long n = 0;
            do {
                probs.push_back(poisson_pmf(nbar, n));
                cumulative += probs.back();
                ++n;
                // Keep going past the mode so a small prefix sum cannot stop early.
            } while (1.0 - cumulative >= tail_tol || static_cast<double>(n) <= nbar);
            break;
        }
        case SourceKind::custom:
            throw DomainError("custom distributions are constructed from explicit probabilities");
    }
    return PhotonDistribution(std::move(probs), cfg.kind);
}

Moments moments(const PhotonDistribution& dist) {
    const auto p = dist.probs();
    double total = 0.0;
    double mean = 0.0;
    for (std::size_t n = 0; n < p.size(); ++n) {
        total += p[n];
        mean += static_cast<double>(n) * p[n];
    }
    mean /= total;
    double var = 0.0;
    for (std::size_t n = 0; n < p.size(); ++n) {
        const double d = static_cast<double>(n) - mean;
        var += d * d * p[n];
    }
    return {mean, var / total};
}

long sample_photon_number(const PhotonDistribution& dist, RandomStream& rng) {
    const auto cdf = dist.cdf();
    const double u = rng.uniform() * cdf.back();
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.end()) return static_cast<long>(dist.n_max());
    return static_cast<long>(it - cdf.begin());
}

}  // namespace photocorr
