#pragma once

// Shared statistical helpers for the test suites.

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <vector>

namespace testing_support {

struct ChiSquare {
    double statistic = 0.0;
    int dof = 0;
    double p_value = 1.0;
};

/// Pearson goodness of fit of integer samples against a pmf. Categories are
/// pooled left to right until each expects at least 5 samples; the leftover
/// tail joins the last pool.
inline ChiSquare chi_square_gof(const std::vector<long>& samples, const std::function<double(long)>& pmf) {
    std::map<long, double> observed;
    long max_k = 0;
    for (long s : samples) {
        observed[s] += 1.0;
        max_k = std::max(max_k, s);
    }
    const double n = static_cast<double>(samples.size());
    std::vector<double> obs, exp;
    double o = 0.0, e = 0.0, covered = 0.0;
    for (long k = 0; k <= max_k; ++k) {
        const double p = pmf(k);
        covered += p;
        o += observed.count(k) ? observed[k] : 0.0;
        e += n * p;
        if (e >= 5.0) {
            obs.push_back(o);
            exp.push_back(e);
            o = e = 0.0;
        }
    }
    // Remaining probability mass beyond the largest sample.
    e += n * std::max(0.0, 1.0 - covered);
    if (!exp.empty()) {
        obs.back() += o;
        exp.back() += e;
    } else {
        obs.push_back(o);
        exp.push_back(e);
    }
    ChiSquare out;
    for (std::size_t i = 0; i < obs.size(); ++i) out.statistic += (obs[i] - exp[i]) * (obs[i] - exp[i]) / exp[i];
    out.dof = static_cast<int>(obs.size()) - 1;
    if (out.dof >= 1) {
        boost::math::chi_squared dist(out.dof);
        out.p_value = boost::math::cdf(boost::math::complement(dist, out.statistic));
    }
    return out;
}

/// Two-sample chi-square homogeneity test on integer samples, pooling
/// categories until both expected counts reach 5.
inline ChiSquare chi_square_two_sample(const std::vector<long>& a, const std::vector<long>& b) {
    std::map<long, std::pair<double, double>> table;
    for (long x : a) table[x].first += 1.0;
    for (long x : b) table[x].second += 1.0;
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double frac_a = na / (na + nb);
    std::vector<std::pair<double, double>> pooled;
    double ca = 0.0, cb = 0.0;
    for (const auto& [k, counts] : table) {
        ca += counts.first;
        cb += counts.second;
        const double total = ca + cb;
        if (total * frac_a >= 5.0 && total * (1.0 - frac_a) >= 5.0) {
            pooled.emplace_back(ca, cb);
            ca = cb = 0.0;
        }
    }
    if (!pooled.empty()) {
        pooled.back().first += ca;
        pooled.back().second += cb;
    }
    ChiSquare out;
    for (const auto& [oa, ob] : pooled) {
        const double total = oa + ob;
        const double ea = total * frac_a, eb = total * (1.0 - frac_a);
        out.statistic += (oa - ea) * (oa - ea) / ea + (ob - eb) * (ob - eb) / eb;
    }
    out.dof = static_cast<int>(pooled.size()) - 1;
    if (out.dof >= 1) {
        boost::math::chi_squared dist(out.dof);
        out.p_value = boost::math::cdf(boost::math::complement(dist, out.statistic));
    }
    return out;
}

inline double mean_of(const std::vector<double>& x) {
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double variance_of(const std::vector<double>& x) {
    const double m = mean_of(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size() - 1);
}

inline std::vector<double> as_double(const std::vector<long>& x) { return {x.begin(), x.end()}; }

/// |sample mean - expected| in units of the standard error of the mean.
inline double mean_z(const std::vector<double>& x, double expected) {
    const double se = std::sqrt(variance_of(x) / static_cast<double>(x.size()));
    return std::abs(mean_of(x) - expected) / se;
}

}  // namespace testing_support
