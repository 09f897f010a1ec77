#include "photocorr/optical_bench.hpp"

#include <cmath>
#include <random>

#include "photocorr/errors.hpp"

namespace photocorr {

BeamSplitter::BeamSplitter(double tau) : tau_(tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw DomainError("beam splitter transmittance must lie in [0, 1]");
}

ArmPhotons split_photons(long n, const BeamSplitter& bs, RandomStream& rng) {
    if (n < 0) throw DomainError("photon number must be >= 0");
    if (n == 0) return {};
    std::binomial_distribution<long> route(n, bs.tau());
    const long c = route(rng);
    return {c, n - c};
}

long detect_thinning(long n, double eta, RandomStream& rng) {
    if (n < 0) throw DomainError("photon number must be >= 0");
    if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("quantum efficiency must lie in [0, 1]");
    if (n == 0 || eta == 0.0) return 0;
    if (eta == 1.0) return n;
    std::binomial_distribution<long> thin(n, eta);
    return thin(rng);
}

OutputMoments output_moments(double mean_a, double var_a, const BeamSplitter& bs) {
    if (!(mean_a >= 0.0) || !(var_a >= 0.0)) throw DomainError("input mean and variance must be >= 0");
    const double t = bs.tau();
    const double r = 1.0 - t;
    OutputMoments out;
    out.mean_c = t * mean_a;
    out.mean_d = r * mean_a;
    out.var_c = t * (t * var_a + r * mean_a);
    out.var_d = r * (r * var_a + t * mean_a);
    const double second_moment = var_a + mean_a * mean_a;
    out.cross_moment = t * r * (second_moment - mean_a);
    out.covariance = out.cross_moment - out.mean_c * out.mean_d;
    return out;
}

double gamma_theory_general(double mean_a, double var_a, const BeamSplitter& bs) {
    if (!(mean_a >= 0.0) || !(var_a >= 0.0)) throw DomainError("input mean and variance must be >= 0");
    const double t = bs.tau();
    const double r = 1.0 - t;
    const double denom = (t * var_a + r * mean_a) * (r * var_a + t * mean_a);
    if (!(denom > 0.0) || t == 0.0 || r == 0.0) return 0.0;
    return std::sqrt(t * r) * (var_a - mean_a) / std::sqrt(denom);
}

double gamma_theory_thermal(double mean_c, double mean_d) {
    if (!(mean_c >= 0.0) || !(mean_d >= 0.0)) throw DomainError("detected means must be >= 0");
    if (mean_c == 0.0 || mean_d == 0.0) return 0.0;
    if (std::isinf(mean_c) && std::isinf(mean_d)) return 1.0;
    // sqrt(m/(m+1)) per arm, written to stay accurate for large means.
    return std::sqrt(1.0 / (1.0 + 1.0 / mean_c)) * std::sqrt(1.0 / (1.0 + 1.0 / mean_d));
}

double hwp_to_tau(double theta) {
    const double c = std::cos(2.0 * theta);
    return c * c;
}

}  // namespace photocorr
