#pragma once

// Independent reference computations used by the tests. Nothing here calls into the
// library code paths the tests check.

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <functional>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

namespace oracle {

/// log of the binomial pmf via lgamma.
inline double log_binom_pmf(int k, int n, double p) {
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) + k * std::log(p) +
           (n - k) * std::log1p(-p);
}

/// P(X <= k) for X ~ Binomial(n, p), by direct summation of the pmf.
inline double binom_cdf(int k, int n, double p) {
    double s = 0.0;
    for (int i = 0; i <= k; ++i) s += std::exp(log_binom_pmf(i, n, p));
    return s;
}

/// Smallest-to-largest equal-tailed interval [lo, hi] with P(X < lo) <= a/2 and P(X > hi) <= a/2.
inline std::pair<int, int> binom_interval(int n, double p, double alpha) {
    int lo = 0;
    double cdf = 0.0;
    for (int k = 0; k <= n; ++k) {
        cdf += std::exp(log_binom_pmf(k, n, p));
        if (cdf > alpha / 2) {
            lo = k;
            break;
        }
    }
    int hi = n;
    double tail = 0.0;
    for (int k = n; k >= 0; --k) {
        tail += std::exp(log_binom_pmf(k, n, p));
        if (tail > alpha / 2) {
            hi = k;
            break;
        }
    }
    return {lo, hi};
}

/// Survival function of the chi-square distribution with 3 degrees of freedom:
///   Q(x) = erfc(sqrt(x/2)) + sqrt(2x/pi) * exp(-x/2)
inline double chi2_sf_df3(double x) {
    return std::erfc(std::sqrt(x / 2.0)) + std::sqrt(2.0 * x / std::numbers::pi) * std::exp(-x / 2.0);
}

/// Critical value c with Q(c) = alpha, by bisection.
inline double chi2_critical_df3(double alpha) {
    double lo = 0.0, hi = 100.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (chi2_sf_df3(mid) > alpha ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

/// Euclidean norm accumulated in extended precision.
inline double norm(const std::vector<double>& v) {
    long double s = 0;
    for (double x : v) s += static_cast<long double>(x) * x;
    return static_cast<double>(std::sqrt(s));
}

inline double central_difference(const std::function<double()>& f, double& coord, double h) {
    const double saved = coord;
    coord = saved + h;
    const double up = f();
    coord = saved - h;
    const double down = f();
    coord = saved;
    return (up - down) / (2.0 * h);
}

inline double relative_error(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace oracle
