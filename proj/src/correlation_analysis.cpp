#include "photocorr/correlation_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "photocorr/errors.hpp"
#include "photocorr/optical_bench.hpp"
#include "photocorr/random.hpp"

namespace photocorr {

namespace {

void check_pair(std::span<const long> m_c, std::span<const long> m_d) {
    if (m_c.size() != m_d.size()) throw DomainError("count series of the two arms differ in length");
    if (m_c.empty()) throw DomainError("empty shot series");
}

// Integer power sums are exact, so the sample moments carry no cancellation
// error beyond the final divisions.
struct PairSums {
    double n = 0.0;
    long long c = 0, d = 0, cc = 0, dd = 0, cd = 0;

    void add(long x, long y) {
        c += x;
        d += y;
        cc += static_cast<long long>(x) * x;
        dd += static_cast<long long>(y) * y;
        cd += static_cast<long long>(x) * y;
    }
    double mean_c() const { return static_cast<double>(c) / n; }
    double mean_d() const { return static_cast<double>(d) / n; }
    double var_c() const { return centred(cc, c, c); }
    double var_d() const { return centred(dd, d, d); }
    double cov() const { return centred(cd, c, d); }
    double var_delta() const { return var_c() + var_d() - 2.0 * cov(); }

    double gamma() const {
        const double vc = var_c(), vd = var_d();
        if (!(vc > 0.0) || !(vd > 0.0)) return 0.0;
        return std::clamp(cov() / std::sqrt(vc * vd), -1.0, 1.0);
    }

  private:
    double centred(long long xy, long long x, long long y) const {
        if (n < 2.0) return 0.0;
        // N*sum(xy) - sum(x)*sum(y) in long double keeps the numerator exact
        // for any realistic series length.
        const long double num = static_cast<long double>(n) * xy - static_cast<long double>(x) * y;
        return static_cast<double>(num / (static_cast<long double>(n) * (n - 1.0)));
    }
};

PairSums sums_of(std::span<const long> m_c, std::span<const long> m_d) {
    PairSums s;
    s.n = static_cast<double>(m_c.size());
    for (std::size_t i = 0; i < m_c.size(); ++i) s.add(m_c[i], m_d[i]);
    return s;
}

double sample_sd(const std::vector<double>& x) {
    if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

std::size_t thermal_cutoff(double total_mean, double tail_tol) {
    if (!(tail_tol > 0.0 && tail_tol < 1.0)) throw DomainError("tail tolerance must lie in (0, 1)");
    if (total_mean == 0.0) return 1;
    const double log_r = std::log(total_mean) - std::log1p(total_mean);
    // Mass at n >= N is r^N.
    return static_cast<std::size_t>(std::max(1.0, std::ceil(std::log(tail_tol) / log_r)));
}

// Smallest N whose dropped second moment E[n^2; n >= N] is below tail_tol
// as well, so moments of the truncated law carry the same tolerance. By
// memorylessness that tail is r^N (N^2 + 2 N s + s + 2 s^2).
std::size_t thermal_moment_cutoff(double total_mean, double tail_tol) {
    std::size_t n = thermal_cutoff(total_mean, tail_tol);
    if (total_mean == 0.0) return n;
    const double s = total_mean;
    const double log_r = std::log(s) - std::log1p(s);
    auto tail = [&](double k) { return std::exp(k * log_r) * (k * k + 2 * k * s + s + 2 * s * s); };
    while (tail(static_cast<double>(n)) >= tail_tol) ++n;
    return n;
}

// Visits every (i, j) with i + j < cutoff with the closed-form probability.
template <class Visit>
void visit_bivariate_law(double a, double b, std::size_t cutoff, Visit&& visit) {
    const double s = a + b;
    std::vector<double> lf(cutoff + 1, 0.0);
    for (std::size_t k = 1; k <= cutoff; ++k) lf[k] = lf[k - 1] + std::log(static_cast<double>(k));
    const double la = a > 0.0 ? std::log(a) : 0.0;
    const double lb = b > 0.0 ? std::log(b) : 0.0;
    const double l1s = std::log1p(s);
    for (std::size_t n = 0; n < cutoff; ++n) {
        const double base = lf[n] - static_cast<double>(n + 1) * l1s;
        for (std::size_t i = 0; i <= n; ++i) {
            const std::size_t j = n - i;
            if ((i > 0 && a == 0.0) || (j > 0 && b == 0.0)) continue;
            // Symmetric in (i, a) <-> (j, b) term by term, so equal means give
            // an exactly mirror-symmetric difference law.
            const double lp = base - (lf[i] + lf[j]) + (static_cast<double>(i) * la + static_cast<double>(j) * lb);
            visit(i, j, std::exp(lp));
        }
    }
}

void check_means(double a, double b) {
    if (!(a >= 0.0) || !(b >= 0.0) || !std::isfinite(a) || !std::isfinite(b)) {
        throw DomainError("detected means must be finite and >= 0");
    }
}

}  // namespace

std::vector<long> ShotSeries::counts_c() const {
    std::vector<long> out;
    out.reserve(shots.size());
    for (const auto& s : shots) out.push_back(s.m_c);
    return out;
}

std::vector<long> ShotSeries::counts_d() const {
    std::vector<long> out;
    out.reserve(shots.size());
    for (const auto& s : shots) out.push_back(s.m_d);
    return out;
}

double DiscretePmf::at(long k) const noexcept {
    if (k < offset || k > last()) return 0.0;
    return probs[static_cast<std::size_t>(k - offset)];
}

double DiscretePmf::total() const noexcept {
    double s = 0.0;
    for (double p : probs) s += p;
    return s;
}

double DiscretePmf::mean() const noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) s += probs[i] * static_cast<double>(offset + static_cast<long>(i));
    return s / total();
}

double DiscretePmf::variance() const noexcept {
    const double mu = mean();
    double s = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double x = static_cast<double>(offset + static_cast<long>(i)) - mu;
        s += probs[i] * x * x;
    }
    return s / total();
}

double JointDistribution::at(long m_c, long m_d) const noexcept {
    if (m_c < 0 || m_d < 0 || static_cast<std::size_t>(m_c) >= rows || static_cast<std::size_t>(m_d) >= cols) {
        return 0.0;
    }
    return probs[static_cast<std::size_t>(m_c) * cols + static_cast<std::size_t>(m_d)];
}

double JointDistribution::total() const noexcept {
    double s = 0.0;
    for (double p : probs) s += p;
    return s;
}

long Histogram2D::total() const noexcept {
    long s = 0;
    for (long c : counts) s += c;
    return s;
}

EffectiveMean effective_mean(double mean, double dark_mean, double epsilon) {
    if (!(epsilon >= 0.0)) throw DomainError("cross-talk probability must be >= 0");
    const double value = (mean - dark_mean) / (1.0 + epsilon);
    if (value < 0.0) return {0.0, true};
    return {value, false};
}

CorrelationReport correlation_coefficient(std::span<const long> m_c, std::span<const long> m_d,
                                          const SpuriousBudget& spurious) {
    check_pair(m_c, m_d);
    const PairSums s = sums_of(m_c, m_d);
    CorrelationReport r;
    r.shots = m_c.size();
    r.mean_c = s.mean_c();
    r.mean_d = s.mean_d();
    r.var_c = s.var_c();
    r.var_d = s.var_d();
    r.covariance = s.cov();
    r.degenerate = r.shots < 2 || !(r.var_c > 0.0) || !(r.var_d > 0.0);
    r.gamma_hat = r.degenerate ? 0.0 : s.gamma();
    r.gamma_se = r.shots < 2 ? std::numeric_limits<double>::quiet_NaN()
                             : (1.0 - r.gamma_hat * r.gamma_hat) / std::sqrt(static_cast<double>(r.shots));
    r.gamma_theory = gamma_theory_thermal(r.mean_c, r.mean_d);
    const auto ec = effective_mean(r.mean_c, spurious.dark_c, spurious.crosstalk_c);
    const auto ed = effective_mean(r.mean_d, spurious.dark_d, spurious.crosstalk_d);
    r.effective_mean_c = ec.value;
    r.effective_mean_d = ed.value;
    r.effective_clamped = ec.clamped || ed.clamped;
    r.gamma_theory_corrected = gamma_theory_thermal(ec.value, ed.value);
    return r;
}

CorrelationReport correlation_coefficient(const ShotSeries& series, const SpuriousBudget& spurious) {
    const auto c = series.counts_c();
    const auto d = series.counts_d();
    return correlation_coefficient(c, d, spurious);
}

BootstrapErrors bootstrap_errors(std::span<const long> m_c, std::span<const long> m_d, std::uint64_t seed,
                                 std::size_t resamples) {
    check_pair(m_c, m_d);
    if (resamples < 2) throw DomainError("bootstrap needs at least two resamples");
    const std::size_t n = m_c.size();
    std::vector<double> gammas, var_deltas, ratios;
    gammas.reserve(resamples);
    var_deltas.reserve(resamples);
    ratios.reserve(resamples);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t r = 0; r < resamples; ++r) {
        auto rng = RandomStream::derive(seed, static_cast<std::uint64_t>(StreamTag::bootstrap), r);
        PairSums s;
        s.n = static_cast<double>(n);
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t i = pick(rng);
            s.add(m_c[i], m_d[i]);
        }
        gammas.push_back(s.gamma());
        const double vd = s.var_delta();
        var_deltas.push_back(vd);
        const double total = s.mean_c() + s.mean_d();
        if (total > 0.0) ratios.push_back(vd / total);
    }
    BootstrapErrors out;
    out.resamples = resamples;
    out.gamma = sample_sd(gammas);
    out.var_delta = sample_sd(var_deltas);
    out.noise_reduction = sample_sd(ratios);
    return out;
}

DifferenceStats difference_distribution(std::span<const long> m_c, std::span<const long> m_d) {
    check_pair(m_c, m_d);
    if (m_c.size() < 2) throw DomainError("difference statistics need at least two shots");
    const PairSums s = sums_of(m_c, m_d);
    DifferenceStats out;
    out.mean_c = s.mean_c();
    out.mean_d = s.mean_d();

    long lo = std::numeric_limits<long>::max(), hi = std::numeric_limits<long>::min();
    for (std::size_t i = 0; i < m_c.size(); ++i) {
        lo = std::min(lo, m_c[i] - m_d[i]);
        hi = std::max(hi, m_c[i] - m_d[i]);
    }
    std::vector<long> hist(static_cast<std::size_t>(hi - lo + 1), 0);
    for (std::size_t i = 0; i < m_c.size(); ++i) ++hist[static_cast<std::size_t>(m_c[i] - m_d[i] - lo)];
    out.pmf.offset = lo;
    out.pmf.probs.reserve(hist.size());
    const double n = static_cast<double>(m_c.size());
    for (long h : hist) out.pmf.probs.push_back(static_cast<double>(h) / n);

    out.var_delta = s.var_delta();
    const double diff = out.mean_c - out.mean_d;
    const double total = out.mean_c + out.mean_d;
    out.var_delta_theory = diff * diff + total;
    if (total > 0.0) {
        out.noise_reduction = out.var_delta / total;
        out.noise_reduction_theory = 1.0 + diff * diff / total;
    } else {
        out.noise_reduction_theory = 1.0;
    }
    out.pmf_theory = difference_pmf_theory(out.mean_c, out.mean_d);
    out.theory_tail_dropped = std::max(0.0, 1.0 - out.pmf_theory.total());
    out.fidelity = fidelity(out.pmf, out.pmf_theory);
    return out;
}

DifferenceStats difference_distribution(const ShotSeries& series) {
    const auto c = series.counts_c();
    const auto d = series.counts_d();
    return difference_distribution(c, d);
}

JointDistribution joint_pmf_theory(double mean_c, double mean_d, double tail_tol) {
    check_means(mean_c, mean_d);
    const std::size_t cutoff = thermal_cutoff(mean_c + mean_d, tail_tol);
    JointDistribution out;
    out.rows = mean_c > 0.0 ? cutoff : 1;
    out.cols = mean_d > 0.0 ? cutoff : 1;
    out.probs.assign(out.rows * out.cols, 0.0);
    visit_bivariate_law(mean_c, mean_d, cutoff,
                        [&](std::size_t i, std::size_t j, double p) { out.probs[i * out.cols + j] = p; });
    const double s = mean_c + mean_d;
    out.tail_dropped = s > 0.0 ? std::exp(static_cast<double>(cutoff) * (std::log(s) - std::log1p(s))) : 0.0;
    return out;
}

double joint_probability(double mean_c, double mean_d, long m_c, long m_d) {
    check_means(mean_c, mean_d);
    if (m_c < 0 || m_d < 0) return 0.0;
    if ((m_c > 0 && mean_c == 0.0) || (m_d > 0 && mean_d == 0.0)) return 0.0;
    const double i = static_cast<double>(m_c), j = static_cast<double>(m_d);
    double lp = std::lgamma(i + j + 1.0) - std::lgamma(i + 1.0) - std::lgamma(j + 1.0) -
                (i + j + 1.0) * std::log1p(mean_c + mean_d);
    if (m_c > 0) lp += i * std::log(mean_c);
    if (m_d > 0) lp += j * std::log(mean_d);
    return std::exp(lp);
}

DiscretePmf difference_pmf_theory(double mean_c, double mean_d, double tail_tol) {
    check_means(mean_c, mean_d);
    const std::size_t cutoff = thermal_moment_cutoff(mean_c + mean_d, tail_tol);
    const long span = static_cast<long>(cutoff) - 1;
    DiscretePmf out;
    out.offset = mean_d > 0.0 ? -span : 0;
    const long top = mean_c > 0.0 ? span : 0;
    out.probs.assign(static_cast<std::size_t>(top - out.offset + 1), 0.0);
    visit_bivariate_law(mean_c, mean_d, cutoff, [&](std::size_t i, std::size_t j, double p) {
        out.probs[static_cast<std::size_t>(static_cast<long>(i) - static_cast<long>(j) - out.offset)] += p;
    });
    return out;
}

double fidelity(const DiscretePmf& p, const DiscretePmf& q) {
    for (const DiscretePmf* pmf : {&p, &q}) {
        if (pmf->probs.empty()) throw DomainError("fidelity of an empty pmf");
        for (double v : pmf->probs) {
            if (!(v >= 0.0)) throw DomainError("pmf entries must be nonnegative");
        }
        if (std::abs(pmf->total() - 1.0) > 1e-9) throw DomainError("pmf must sum to 1 within 1e-9");
    }
    const long lo = std::max(p.offset, q.offset);
    const long hi = std::min(p.last(), q.last());
    double f = 0.0;
    for (long k = lo; k <= hi; ++k) f += std::sqrt(p.at(k) * q.at(k));
    return std::min(f, 1.0);
}

Histogram2D joint_histogram(const ShotSeries& series, const JointHistogramOptions& options) {
    if (series.shots.empty()) throw DomainError("empty shot series");
    Histogram2D h;
    if (!options.unbinned) {
        long max_c = 0, max_d = 0;
        for (const auto& s : series.shots) {
            if (s.m_c < 0 || s.m_d < 0) throw DomainError("counts must be >= 0");
            max_c = std::max(max_c, s.m_c);
            max_d = std::max(max_d, s.m_d);
        }
        h.x0 = h.y0 = -0.5;
        h.width = 1.0;
        h.nx = static_cast<std::size_t>(max_c) + 1;
        h.ny = static_cast<std::size_t>(max_d) + 1;
        h.counts.assign(h.nx * h.ny, 0);
        for (const auto& s : series.shots) ++h.counts[static_cast<std::size_t>(s.m_c) * h.ny + s.m_d];
        return h;
    }

    if (!(options.gain_c > 0.0) || !(options.gain_d > 0.0)) throw DomainError("gains must be > 0");
    if (!(options.bin_width > 0.0)) throw DomainError("bin width must be > 0");
    const double w = options.bin_width;
    double min_x = std::numeric_limits<double>::infinity(), max_x = -min_x;
    double min_y = min_x, max_y = -min_x;
    for (const auto& s : series.shots) {
        const double x = s.v_c / options.gain_c, y = s.v_d / options.gain_d;
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
    }
    h.width = w;
    h.x0 = std::floor(min_x / w) * w;
    h.y0 = std::floor(min_y / w) * w;
    h.nx = static_cast<std::size_t>(std::floor((max_x - h.x0) / w)) + 1;
    h.ny = static_cast<std::size_t>(std::floor((max_y - h.y0) / w)) + 1;
    h.counts.assign(h.nx * h.ny, 0);
    auto cell = [w](double value, double origin, std::size_t n) {
        const double k = std::max(0.0, std::floor((value - origin) / w));
        return std::min(n - 1, static_cast<std::size_t>(k));
    };
    for (const auto& s : series.shots) {
        ++h.counts[cell(s.v_c / options.gain_c, h.x0, h.nx) * h.ny + cell(s.v_d / options.gain_d, h.y0, h.ny)];
    }
    return h;
}

}  // namespace photocorr
