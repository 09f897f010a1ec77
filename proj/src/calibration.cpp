#include "photocorr/calibration.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <numeric>

namespace photocorr {

namespace {

constexpr int kGainGridPoints = 400;
constexpr int kMaxGainCandidates = 8;
// Autocorrelation histogram: about kShotsPerAutocorrBin shots per bin, within
// [kMinAutocorrBins, kMaxAutocorrBins].
constexpr std::size_t kMaxAutocorrBins = 4096;
constexpr std::size_t kMinAutocorrBins = 256;
constexpr std::size_t kShotsPerAutocorrBin = 8;
constexpr double kPlateauFraction = 0.98;
// Lattice peak height over the preceding trough, relative to zero lag.
constexpr double kMinPeakContrast = 0.01;
constexpr double kInvPhi = 0.6180339887498949;  // 1/golden ratio

template <class F>
double golden_section_min(F&& f, double a, double b, double rel_tol, long& evaluations) {
    double c = b - kInvPhi * (b - a);
    double d = a + kInvPhi * (b - a);
    double fc = f(c);
    double fd = f(d);
    evaluations += 2;
    while (std::abs(b - a) > rel_tol * (std::abs(a) + std::abs(b)) * 0.5 + 1e-300) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - kInvPhi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + kInvPhi * (b - a);
            fd = f(d);
        }
        ++evaluations;
    }
    return fc <= fd ? c : d;
}

std::vector<long> count_histogram(std::span<const long> counts) {
    long max_count = 0;
    for (long c : counts) {
        if (c < 0) throw DomainError("counts must be >= 0");
        max_count = std::max(max_count, c);
    }
    std::vector<long> hist(static_cast<std::size_t>(max_count) + 1, 0);
    for (long c : counts) ++hist[static_cast<std::size_t>(c)];
    return hist;
}

// log(n!) for n = 0..size-1, grown on demand.
const std::vector<double>& log_factorials(std::size_t size) {
    thread_local std::vector<double> table{0.0};
    while (table.size() < size) table.push_back(table.back() + std::log(static_cast<double>(table.size())));
    return table;
}

// 1/n for n = 0..size-1 (entry 0 unused), grown on demand.
const std::vector<double>& reciprocals(std::size_t size) {
    thread_local std::vector<double> table{0.0};
    while (table.size() < size) table.push_back(1.0 / static_cast<double>(table.size()));
    return table;
}

// Binomial(t, eps) row truncated where terms fall below 1e-18 of the mode.
// Returns the first index kept; row holds consecutive probabilities.
std::size_t binomial_row(long t, double eps, double log_eps, double log_1m_eps, std::vector<double>& row) {
    row.clear();
    if (t == 0 || eps == 0.0) {
        row.push_back(1.0);
        return 0;
    }
    const auto& lf = log_factorials(static_cast<std::size_t>(t) + 1);
    const double dt = static_cast<double>(t);
    const long mode = std::min(t, static_cast<long>(std::floor((dt + 1.0) * eps)));
    const double dm = static_cast<double>(mode);
    const auto ut = static_cast<std::size_t>(t);
    const auto um = static_cast<std::size_t>(mode);
    const double log_peak = lf[ut] - lf[um] - lf[ut - um] + dm * log_eps + (dt - dm) * log_1m_eps;
    const double peak = std::exp(log_peak);
    const double cutoff = std::max(1e-18 * peak, 1e-300);
    const double odds = eps / (1.0 - eps);
    const double inv_odds = (1.0 - eps) / eps;
    const auto& inv = reciprocals(ut + 2);

    long first = mode;
    double p = peak;
    while (first > 0) {
        const double next = p * static_cast<double>(first) * inv[ut - static_cast<std::size_t>(first) + 1] * inv_odds;
        if (next < cutoff) break;
        p = next;
        --first;
    }
    // Walk back up from the lowest kept term to rebuild the row in order.
    row.push_back(p);
    for (long j = first; j < t; ++j) {
        p *= static_cast<double>(t - j) * odds * inv[static_cast<std::size_t>(j) + 1];
        if (j + 1 > mode && p < cutoff) break;
        row.push_back(p);
    }
    return static_cast<std::size_t>(first);
}

}  // namespace

long Histogram::total() const noexcept {
    return std::accumulate(counts.begin(), counts.end(), 0L);
}

PulseHeightSpectrum::PulseHeightSpectrum(std::vector<double> values) : values_(std::move(values)) {
    for (double v : values_) {
        if (!std::isfinite(v)) throw DomainError("pulse-height values must be finite");
    }
}

Histogram PulseHeightSpectrum::histogram(std::size_t bins) const {
    if (bins == 0) throw DomainError("histogram needs at least one bin");
    Histogram h;
    h.counts.assign(bins, 0);
    if (values_.empty()) return h;
    const auto [mn, mx] = std::minmax_element(values_.begin(), values_.end());
    h.lo = *mn;
    const double span = *mx - *mn;
    h.width = span > 0.0 ? span / static_cast<double>(bins) : 1.0;
    for (double v : values_) {
        auto i = static_cast<std::size_t>((v - h.lo) / h.width);
        h.counts[std::min(i, bins - 1)] += 1;
    }
    return h;
}

double integer_residual(std::span<const double> values, double gain) {
    if (values.empty()) throw DomainError("integer residual of an empty spectrum");
    double sum = 0.0;
    for (double v : values) {
        const double x = v / gain;
        const double d = x - std::max(std::round(x), 0.0);
        sum += d * d;
    }
    return sum / static_cast<double>(values.size());
}

double seed_gain_autocorrelation(const PulseHeightSpectrum& spectrum) {
    if (spectrum.size() == 0) throw DomainError("empty pulse-height spectrum");
    std::vector<double> sorted(spectrum.values().begin(), spectrum.values().end());
    std::sort(sorted.begin(), sorted.end());
    const double lo = sorted.front();
    const double hi = sorted[static_cast<std::size_t>(0.999 * static_cast<double>(sorted.size() - 1))];
    if (!(hi > lo)) throw CalibrationError("pulse-height spectrum has no spread; gain unidentifiable");

    const std::size_t bins =
        std::clamp(std::bit_ceil(sorted.size() / kShotsPerAutocorrBin), kMinAutocorrBins, kMaxAutocorrBins);
    const double width = (hi - lo) / static_cast<double>(bins);
    std::vector<double> hist(bins, 0.0);
    double filled = 0.0;
    for (double v : sorted) {
        if (v > hi) break;
        hist[std::min(static_cast<std::size_t>((v - lo) / width), bins - 1)] += 1.0;
        filled += 1.0;
    }

    // Correlation and its light smoothing, filled on demand: the search below
    // only looks a few lattice spacings out.
    const std::size_t max_lag = bins - 1;
    std::vector<double> acf;
    std::vector<double> smooth;
    auto acf_at = [&](std::size_t lag) {
        while (acf.size() <= std::min(lag, max_lag)) {
            const std::size_t l = acf.size();
            double s = 0.0;
            for (std::size_t i = 0; i + l < bins; ++i) s += hist[i] * hist[i + l];
            // Drop the Poisson self-term at zero lag (E[h(h-1)] = lambda^2), so
            // sparse histograms show no spurious spike there.
            if (l == 0) s -= filled;
            acf.push_back(s);
        }
        return acf[lag];
    };
    // Averaging over +-2 lags so single-bin wiggles cannot pose as extrema.
    auto smooth_at = [&](std::size_t lag) {
        while (smooth.size() <= lag) {
            const std::size_t i = smooth.size();
            double s = 0.0;
            int n = 0;
            for (std::size_t j = (i >= 2 ? i - 2 : 0); j <= std::min(max_lag, i + 2); ++j, ++n) s += acf_at(j);
            smooth.push_back(s / n);
        }
        return smooth[lag];
    };

    // First lag that is the minimum of the window [lag, 2*lag]: the trough
    // between the zero-lag peak and the first lattice peak. Lags where the
    // correlation has not yet dropped measurably are still on the zero-lag
    // plateau, whose noise would otherwise pose as a trough.
    std::size_t first_min = 1;
    for (; 2 * first_min <= max_lag; ++first_min) {
        const double here = smooth_at(first_min);
        if (here > kPlateauFraction * smooth_at(1)) continue;
        bool lowest = true;
        for (std::size_t j = first_min + 1; j <= 2 * first_min && lowest; ++j) lowest = smooth_at(j) >= here;
        if (lowest) break;
    }
    if (2 * first_min > max_lag) {
        throw CalibrationError("no periodic peak structure in the pulse-height spectrum");
    }
    // Walk to the far end of a flat trough (sharp, well-separated peaks).
    while (first_min + 1 < max_lag && smooth_at(first_min + 1) <= smooth_at(first_min)) ++first_min;
    const std::size_t search_end = std::min(max_lag - 1, 3 * first_min + 2);
    std::size_t peak = first_min;
    for (std::size_t i = first_min; i <= search_end; ++i) {
        if (smooth_at(i) > smooth_at(peak)) peak = i;
    }
    if (peak == first_min || (smooth_at(peak) - smooth_at(first_min)) < kMinPeakContrast * smooth_at(0)) {
        throw CalibrationError("no resolved multi-peak structure in the pulse-height spectrum");
    }
    double offset = 0.0;
    {
        const double y0 = smooth_at(peak - 1), y1 = smooth_at(peak), y2 = smooth_at(peak + 1);
        const double curvature = y0 - 2.0 * y1 + y2;
        if (curvature < 0.0) offset = 0.5 * (y0 - y2) / curvature;
    }
    return (static_cast<double>(peak) + offset) * width;
}

GainFit estimate_gain(const PulseHeightSpectrum& spectrum, GainBracket search) {
    if (spectrum.size() == 0) throw DomainError("empty pulse-height spectrum");
    if (!(search.lo > 0.0) || !(search.hi > search.lo) || !std::isfinite(search.hi)) {
        throw DomainError("gain bracket must satisfy 0 < lo < hi");
    }
    const auto values = spectrum.values();
    auto objective = [&](double g) { return integer_residual(values, g); };

    std::array<double, kGainGridPoints> grid{};
    std::array<double, kGainGridPoints> resid{};
    const double step = (search.hi - search.lo) / (kGainGridPoints - 1);
    for (int i = 0; i < kGainGridPoints; ++i) {
        grid[i] = search.lo + step * i;
        resid[i] = objective(grid[i]);
    }
    const auto [rmin, rmax] = std::minmax_element(resid.begin(), resid.end());
    if (*rmax - *rmin <= 1e-6 * std::max(*rmax, 1e-300)) {
        throw CalibrationError("integer residual is flat across the gain bracket; no resolved peaks");
    }

    // Candidate basins: grid-local minima, best first.
    std::vector<int> minima;
    for (int i = 0; i < kGainGridPoints; ++i) {
        const bool left = i == 0 || resid[i] <= resid[i - 1];
        const bool right = i == kGainGridPoints - 1 || resid[i] <= resid[i + 1];
        if (left && right) minima.push_back(i);
    }
    std::sort(minima.begin(), minima.end(), [&](int a, int b) { return resid[a] < resid[b]; });
    if (minima.size() > kMaxGainCandidates) minima.resize(kMaxGainCandidates);

    long evaluations = 0;
    std::vector<std::pair<double, double>> refined;  // (gain, residual)
    for (int i : minima) {
        const double a = grid[std::max(i - 1, 0)];
        const double b = grid[std::min(i + 1, kGainGridPoints - 1)];
        const double g = golden_section_min(objective, a, b, 1e-10, evaluations);
        refined.emplace_back(g, objective(g));
    }
    const double best = std::min_element(refined.begin(), refined.end(),
                                         [](auto& x, auto& y) { return x.second < y.second; })
                            ->second;
    // A noiseless lattice fits its subharmonics exactly; among exact ties keep
    // the coarsest.
    double gain = 0.0;
    for (const auto& [g, r] : refined) {
        if (r <= best * (1.0 + 1e-9) + 1e-14 && g > gain) gain = g;
    }

    // Self-consistent refinement: assign counts, regress values on counts.
    GainFit fit;
    for (int it = 0; it < 200; ++it) {
        double s_kv = 0.0;
        double s_kk = 0.0;
        for (double v : values) {
            const auto k = static_cast<double>(assign_counts(v, gain));
            s_kv += k * v;
            s_kk += k * k;
        }
        if (s_kk == 0.0) throw CalibrationError("no shots above the zero peak; gain unidentifiable");
        const double next = s_kv / s_kk;
        fit.refinement_steps = it + 1;
        const bool done = std::abs(next - gain) <= 1e-13 * gain;
        gain = next;
        if (done) break;
    }
    if (!(gain >= search.lo * 0.9 && gain <= search.hi * 1.1)) {
        throw CalibrationError("self-consistent gain left the search bracket; peaks not resolved");
    }
    fit.gain = gain;
    fit.objective = objective(gain);
    return fit;
}

GainFit estimate_gain(const PulseHeightSpectrum& spectrum) {
    const double seed = seed_gain_autocorrelation(spectrum);
    return estimate_gain(spectrum, {seed / 1.25, seed * 1.25});
}

long assign_counts(double value, double gain) {
    if (!(gain > 0.0)) throw DomainError("gain must be > 0");
    const double x = std::round(value / gain);
    return x <= 0.0 ? 0L : static_cast<long>(x);
}

std::vector<long> assign_counts(std::span<const double> values, double gain) {
    std::vector<long> out;
    out.reserve(values.size());
    for (double v : values) out.push_back(assign_counts(v, gain));
    return out;
}

std::vector<double> composite_count_pmf(double signal_mean, double dark_mean, double crosstalk,
                                        std::size_t length) {
    if (!(signal_mean >= 0.0) || !(dark_mean >= 0.0) || !(crosstalk >= 0.0 && crosstalk < 1.0)) {
        throw DomainError("composite pmf parameters out of range");
    }
    // Generating function G(z) = E(z) / A(z) with y = (1-eps) z + eps z^2,
    // E = exp(dark (y - 1)) and A = 1 + signal (1 - y). Both E' = dark y' E and
    // A G = E give positive-term recurrences for the coefficients.
    std::vector<double> out(length, 0.0);
    if (length == 0) return out;
    const double a1 = 1.0 - crosstalk;
    const double a2 = crosstalk;
    double e_prev = 0.0;
    double e_cur = std::exp(-dark_mean);
    const double inv_norm = 1.0 / (1.0 + signal_mean);
    for (std::size_t j = 0; j < length; ++j) {
        double g = e_cur;
        if (j >= 1) g += signal_mean * a1 * out[j - 1];
        if (j >= 2) g += signal_mean * a2 * out[j - 2];
        out[j] = g * inv_norm;
        const double e_next = dark_mean * (a1 * e_cur + 2.0 * a2 * e_prev) / static_cast<double>(j + 1);
        e_prev = e_cur;
        e_cur = e_next;
    }
    return out;
}

std::vector<double> composite_count_pmf_by_convolution(double signal_mean, double dark_mean, double crosstalk,
                                                       std::size_t length) {
    if (!(signal_mean >= 0.0) || !(dark_mean >= 0.0) || !(crosstalk >= 0.0 && crosstalk < 1.0)) {
        throw DomainError("composite pmf parameters out of range");
    }
    std::vector<double> out(length, 0.0);
    if (length == 0) return out;

    // Pre-cross-talk counts: thermal signal convolved with Poisson dark counts.
    std::vector<double> thermal(length);
    const double r = signal_mean / (1.0 + signal_mean);
    thermal[0] = 1.0 / (1.0 + signal_mean);
    for (std::size_t s = 1; s < length; ++s) thermal[s] = thermal[s - 1] * r;

    std::vector<double> dark;
    dark.push_back(std::exp(-dark_mean));
    while (dark.size() < length) {
        const double next = dark.back() * dark_mean / static_cast<double>(dark.size());
        if (next < 1e-300 || (static_cast<double>(dark.size()) > dark_mean && next < 1e-18 * dark.front())) break;
        dark.push_back(next);
    }

    std::vector<double> pre(length, 0.0);
    for (std::size_t k = 0; k < dark.size(); ++k) {
        for (std::size_t s = 0; s + k < length; ++s) pre[s + k] += dark[k] * thermal[s];
    }

    if (crosstalk == 0.0) return pre;
    std::vector<double> row;
    const double log_eps = std::log(crosstalk);
    const double log_1m_eps = std::log1p(-crosstalk);
    for (std::size_t t = 0; t < length; ++t) {
        if (pre[t] == 0.0) continue;
        const std::size_t first = binomial_row(static_cast<long>(t), crosstalk, log_eps, log_1m_eps, row);
        for (std::size_t j = 0; j < row.size(); ++j) {
            const std::size_t idx = t + first + j;
            if (idx >= length) break;
            out[idx] += pre[t] * row[j];
        }
    }
    return out;
}

std::vector<double> composite_count_pmf(double signal_mean, double dark_mean, double crosstalk,
                                        double tail_tol) {
    if (!(tail_tol > 0.0 && tail_tol < 1.0)) throw DomainError("tail tolerance must lie in (0, 1)");
    // Tail of the pre-cross-talk count: thermal tail plus a generous Poisson allowance.
    std::size_t pre_len = 1;
    if (signal_mean > 0.0) {
        const double log_r = std::log(signal_mean) - std::log1p(signal_mean);
        pre_len = static_cast<std::size_t>(std::ceil(std::log(tail_tol * 0.5) / log_r)) + 1;
    }
    pre_len += static_cast<std::size_t>(std::ceil(dark_mean + 12.0 * std::sqrt(dark_mean) + 40.0));
    // Cross-talk at most doubles a count.
    const auto length = static_cast<std::size_t>(static_cast<double>(pre_len) * (1.0 + crosstalk)) +
                        static_cast<std::size_t>(12.0 * std::sqrt(static_cast<double>(pre_len))) + 20;
    return composite_count_pmf(signal_mean, dark_mean, crosstalk, length);
}

namespace {

// Internal coordinates: mean count M, count variance V, cross-talk eps.
// M and V are pinned by the first two sample moments, which leaves eps as the
// only weakly identified direction and keeps the coordinates nearly orthogonal.
struct Physical {
    double signal;
    double dark;
    double crosstalk;
};

Physical to_physical(double mean_count, double variance, double eps) {
    const double pre = mean_count / (1.0 + eps);
    // Var = (1+eps)^2 (signal^2 + pre) + eps (1-eps) pre for thermal + Poisson.
    const double signal_sq = (variance - eps * (1.0 - eps) * pre) / ((1.0 + eps) * (1.0 + eps)) - pre;
    const double signal = std::clamp(std::sqrt(std::max(signal_sq, 0.0)), 0.0, pre);
    return {signal, pre - signal, eps};
}

}  // namespace

DarkCrosstalkFit estimate_dark_crosstalk(std::span<const long> counts, SourceKind source_kind,
                                         const DarkCrosstalkOptions& options) {
    if (source_kind != SourceKind::thermal) {
        throw DomainError("dark/cross-talk fit requires a thermal source (Poisson signal is degenerate with dark counts)");
    }
    if (counts.empty()) throw DomainError("dark/cross-talk fit of an empty series");
    const auto hist = count_histogram(counts);
    const double n_shots = static_cast<double>(counts.size());
    double mean_count = 0.0;
    for (std::size_t j = 0; j < hist.size(); ++j) mean_count += static_cast<double>(j) * static_cast<double>(hist[j]);
    mean_count /= n_shots;
    double var_count = 0.0;
    for (std::size_t j = 0; j < hist.size(); ++j) {
        const double d = static_cast<double>(j) - mean_count;
        var_count += d * d * static_cast<double>(hist[j]);
    }
    var_count /= n_shots;

    DarkCrosstalkFit best;
    if (hist.size() == 1) {
        // Only zeros: nothing to attribute, cross-talk unidentifiable.
        best.converged = false;
        return best;
    }

    long evaluations = 0;
    auto nll = [&](const std::array<double, 3>& x) {
        const Physical ph = to_physical(x[0], x[1], x[2]);
        const auto pmf = composite_count_pmf(ph.signal, ph.dark, ph.crosstalk, hist.size());
        double s = 0.0;
        for (std::size_t j = 0; j < hist.size(); ++j) {
            if (hist[j] == 0) continue;
            s -= static_cast<double>(hist[j]) * std::log(std::max(pmf[j], 1e-300));
        }
        ++evaluations;
        return s / n_shots;
    };

    const std::array<double, 3> box_lo{0.8 * mean_count, 0.5 * var_count, 0.0};
    const std::array<double, 3> box_hi{1.2 * mean_count, 1.5 * var_count, 0.6};
    constexpr std::array<double, 5> start_eps{0.0, 0.05, 0.1, 0.2, 0.4};

    bool any_converged = false;
    bool have_best = false;
    for (int s = 0; s < options.starts; ++s) {
        std::array<double, 3> x{mean_count, var_count, start_eps[static_cast<std::size_t>(s) % start_eps.size()]};
        std::array<double, 3> radius{};
        for (std::size_t c = 0; c < 3; ++c) radius[c] = box_hi[c] - box_lo[c];
        auto record = [&](double f) {
            const Physical ph = to_physical(x[0], x[1], x[2]);
            best.trace.push_back(f);
            best.iterates.push_back({ph.signal, ph.dark, ph.crosstalk});
        };
        double fx = nll(x);
        best.restart_index.push_back(best.trace.size());
        record(fx);
        bool converged = false;
        for (long sweep = 0; sweep < options.max_iterations; ++sweep) {
            const auto x_start = x;
            double max_change = 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                const double width = box_hi[c] - box_lo[c];
                auto along = [&](double v) {
                    auto y = x;
                    y[c] = v;
                    return nll(y);
                };
                // Local golden-section bracket, widened while the optimum sits on its edge.
                double v = x[c];
                double r = radius[c];
                for (;;) {
                    const double a = std::max(box_lo[c], x[c] - r);
                    const double b = std::min(box_hi[c], x[c] + r);
                    long line_evals = 0;
                    v = golden_section_min(along, a, b, options.rel_tol * 1e-2, line_evals);
                    const double edge = 0.05 * (b - a);
                    const bool at_lo = v - a < edge && a > box_lo[c];
                    const bool at_hi = b - v < edge && b < box_hi[c];
                    if (!(at_lo || at_hi) || r >= width) break;
                    r *= 4.0;
                }
                const double fv = along(v);
                if (fv < fx) {
                    max_change = std::max(max_change, std::abs(v - x[c]) / width);
                    radius[c] = std::max(4.0 * std::abs(v - x[c]), 1e-3 * width);
                    x[c] = v;
                    fx = fv;
                    record(fx);
                } else {
                    radius[c] = std::max(0.5 * radius[c], 1e-3 * width);
                }
            }
            if (max_change <= options.rel_tol) {
                converged = true;
                break;
            }
            // Pattern step along this sweep's displacement, kept inside the box.
            double alpha_max = 4.0;
            for (std::size_t c = 0; c < 3; ++c) {
                const double d = x[c] - x_start[c];
                if (d > 0.0) alpha_max = std::min(alpha_max, (box_hi[c] - x_start[c]) / d);
                if (d < 0.0) alpha_max = std::min(alpha_max, (box_lo[c] - x_start[c]) / d);
            }
            if (alpha_max > 1.0) {
                auto along_d = [&](double alpha) {
                    std::array<double, 3> y{};
                    for (std::size_t c = 0; c < 3; ++c) y[c] = x_start[c] + alpha * (x[c] - x_start[c]);
                    return nll(y);
                };
                long line_evals = 0;
                const double alpha = golden_section_min(along_d, 1.0, alpha_max, 1e-4, line_evals);
                const double fa = along_d(alpha);
                if (fa < fx) {
                    for (std::size_t c = 0; c < 3; ++c) x[c] = x_start[c] + alpha * (x[c] - x_start[c]);
                    fx = fa;
                    record(fx);
                }
            }
        }
        if (!have_best || fx < best.objective) {
            const Physical ph = to_physical(x[0], x[1], x[2]);
            best.signal_mean = ph.signal;
            best.dark_mean = ph.dark;
            best.crosstalk = ph.crosstalk;
            best.objective = fx;
            best.converged = converged;
            have_best = true;
        }
        any_converged = any_converged || converged;
    }
    best.evaluations = evaluations;
    if (!any_converged) {
        throw CalibrationFailure("dark/cross-talk fit did not converge within the iteration budget", best);
    }
    return best;
}

ArmCalibration calibrate_arm(const PulseHeightSpectrum& spectrum, SourceKind source_kind,
                             const DarkCrosstalkOptions& options) {
    ArmCalibration out;
    const GainFit gain = estimate_gain(spectrum);
    out.result.gain_hat = gain.gain;
    out.result.objective_value = gain.objective;
    out.counts = assign_counts(spectrum.values(), gain.gain);

    if (source_kind != SourceKind::thermal) {
        out.result.converged = gain.objective < kGainResidualThreshold;
        return out;
    }
    out.result.spurious_fitted = true;
    DarkCrosstalkFit fit;
    try {
        fit = estimate_dark_crosstalk(out.counts, source_kind, options);
    } catch (const CalibrationFailure& failure) {
        fit = failure.best();
    }
    out.result.dark_hat = fit.dark_mean;
    out.result.crosstalk_hat = fit.crosstalk;
    out.result.signal_mean_hat = fit.signal_mean;
    out.result.nll_per_shot = fit.objective;
    out.result.converged = fit.converged && gain.objective < kGainResidualThreshold;
    return out;
}

}  // namespace photocorr
