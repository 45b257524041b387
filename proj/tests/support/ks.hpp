#pragma once

// One-sample Kolmogorov-Smirnov test against a continuous CDF.
// The p-value uses the asymptotic Kolmogorov series with Stephens'
// small-sample correction, lambda = (sqrt(n) + 0.12 + 0.11/sqrt(n)) D.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace eiv::testing {

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

// Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2)
inline double kolmogorov_sf(double lambda) {
    if (lambda < 1e-3) return 1.0;
    double sum = 0.0, sign = 1.0;
    for (int k = 1; k <= 200; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += sign * term;
        if (term < 1e-16 * std::abs(sum)) break;
        sign = -sign;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

inline KsResult ks_test(std::vector<double> xs, const std::function<double(double)>& cdf) {
    KsResult out;
    if (xs.empty()) return out;
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double f = cdf(xs[i]);
        d = std::max({d, (i + 1) / n - f, f - i / n});
    }
    const double rn = std::sqrt(n);
    out.statistic = d;
    out.p_value = kolmogorov_sf((rn + 0.12 + 0.11 / rn) * d);
    return out;
}

}  // namespace eiv::testing
