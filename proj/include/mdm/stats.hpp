// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace mdm {

inline double mean(const std::vector<double>& xs) {
    if (xs.empty()) throw std::invalid_argument("mean: empty sample");
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

inline double sample_variance(const std::vector<double>& xs) {
    if (xs.size() < 2) throw std::invalid_argument("sample_variance: need n >= 2");
    const double m = mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return s / static_cast<double>(xs.size() - 1);
}

inline double stddev(const std::vector<double>& xs) { return std::sqrt(sample_variance(xs)); }

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// One-sided p-value for H1: mean(a) < mean(b), paired samples, normal
// approximation of the t statistic (sample sizes here are ~100).
inline double paired_less_p_value(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw std::invalid_argument("paired_less_p_value: bad sample sizes");
    }
    std::vector<double> d(a.size());
    for (size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    const double m = mean(d);
    const double se = stddev(d) / std::sqrt(static_cast<double>(d.size()));
    if (se == 0.0) return m < 0.0 ? 0.0 : 1.0;
    return normal_cdf(m / se);
}

// One-sided p-value for H1: mean(xs) < c (one-sample, normal approximation).
inline double one_sample_less_p_value(const std::vector<double>& xs, double c) {
    const double m = mean(xs);
    const double se = stddev(xs) / std::sqrt(static_cast<double>(xs.size()));
    if (se == 0.0) return m < c ? 0.0 : 1.0;
    return normal_cdf((m - c) / se);
}

// One-sided p-value for H1: mean(a) > mean(b), unpaired, Welch statistic with
// a normal approximation.
inline double welch_greater_p_value(const std::vector<double>& a, const std::vector<double>& b) {
    const double ma = mean(a), mb = mean(b);
    const double va = sample_variance(a) / static_cast<double>(a.size());
    const double vb = sample_variance(b) / static_cast<double>(b.size());
    const double se = std::sqrt(va + vb);
    if (se == 0.0) return ma > mb ? 0.0 : 1.0;
    return normal_cdf((mb - ma) / se);
}

// Regularized upper incomplete gamma Q(a, x); series/continued-fraction split.
inline double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_q: domain");
    if (x == 0.0) return 1.0;
    const double gln = std::lgamma(a);
    if (x < a + 1.0) {
        // P(a,x) by series, return 1 - P
        double ap = a, sum = 1.0 / a, del = sum;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::abs(del) < std::abs(sum) * 1e-15) break;
        }
        return 1.0 - sum * std::exp(-x + a * std::log(x) - gln);
    }
    // Q(a,x) by continued fraction (Lentz)
    const double tiny = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-15) break;
    }
    return std::exp(-x + a * std::log(x) - gln) * h;
}

// Survival function of the chi-square distribution (upper tail p-value).
inline double chi_square_sf(double stat, int dof) {
    if (dof < 1) throw std::invalid_argument("chi_square_sf: dof < 1");
    return gamma_q(0.5 * dof, 0.5 * stat);
}

// Pearson chi-square statistic for observed counts against expected counts.
inline double chi_square_stat(const std::vector<double>& observed,
                              const std::vector<double>& expected) {
    if (observed.size() != expected.size() || observed.empty()) {
        throw std::invalid_argument("chi_square_stat: size mismatch");
    }
    double s = 0.0;
    for (size_t i = 0; i < observed.size(); ++i) {
        if (expected[i] <= 0.0) throw std::invalid_argument("chi_square_stat: expected <= 0");
        const double d = observed[i] - expected[i];
        s += d * d / expected[i];
    }
    return s;
}

}  // namespace mdm
