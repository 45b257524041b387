#pragma once

// Chi-square distribution functions via the regularized incomplete gamma.

#include <cmath>
#include <string>

#include <boost/math/special_functions/gamma.hpp>

#include "eivtest/errors.hpp"

namespace eiv {

namespace detail {
inline void check_dof(int q) {
    if (q < 1) throw DomainError("chi-square degrees of freedom must be positive, got " + std::to_string(q));
}
}  // namespace detail

inline double chi2_cdf(double x, int q) {
    detail::check_dof(q);
    if (std::isnan(x) || x < 0.0) throw DomainError("chi2_cdf needs x >= 0");
    if (std::isinf(x)) return 1.0;
    return boost::math::gamma_p(0.5 * q, 0.5 * x);
}

// Upper tail 1 - F(x), accurate for small tail probabilities.
inline double chi2_sf(double x, int q) {
    detail::check_dof(q);
    if (std::isnan(x) || x < 0.0) throw DomainError("chi2_sf needs x >= 0");
    if (std::isinf(x)) return 0.0;
    return boost::math::gamma_q(0.5 * q, 0.5 * x);
}

inline double chi2_quantile(double prob, int q) {
    detail::check_dof(q);
    if (!(prob > 0.0 && prob < 1.0)) throw DomainError("chi2_quantile needs 0 < prob < 1");
    return 2.0 * boost::math::gamma_p_inv(0.5 * q, prob);
}

}  // namespace eiv
