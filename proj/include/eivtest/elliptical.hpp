#pragma once

// Density generating functions of elliptical laws.
//
// A d-variate elliptical vector with location mu and dispersion Sigma has
// density |Sigma|^{-1/2} p0((z-mu)^T Sigma^{-1} (z-mu)). The generator is
// tagged with d because its normalizing constant depends on it.

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "eivtest/errors.hpp"
#include "eivtest/linalg.hpp"
#include "eivtest/random.hpp"

namespace eiv {

enum class Family { Normal, StudentT };

inline std::string to_string(Family f) {
    return f == Family::Normal ? "normal" : "student_t";
}

class DensityGenerator {
public:
    static DensityGenerator normal(int dim) { return DensityGenerator(Family::Normal, dim, 0.0); }
    static DensityGenerator student_t(int dim, double dof) {
        if (!(dof > 0.0) || !std::isfinite(dof)) {
            throw DomainError("student_t generator needs dof > 0");
        }
        return DensityGenerator(Family::StudentT, dim, dof);
    }
    // Same family and dof, different dimension.
    DensityGenerator with_dim(int dim) const { return DensityGenerator(family_, dim, dof_); }

    Family family() const noexcept { return family_; }
    int dim() const noexcept { return dim_; }
    // Degrees of freedom; 0 for the normal family.
    double dof() const noexcept { return dof_; }

private:
    DensityGenerator(Family family, int dim, double dof) : family_(family), dim_(dim), dof_(dof) {
        if (dim < 1) {
            throw DomainError("density generator dimension must be >= 1");
        }
        const double d = dim;
        if (family == Family::Normal) {
            log_const_ = -0.5 * d * std::log(2.0 * std::numbers::pi);
        } else {
            log_const_ = std::lgamma(0.5 * (dof + d)) - std::lgamma(0.5 * dof) -
                         0.5 * d * std::log(dof * std::numbers::pi);
        }
    }

    Family family_;
    int dim_;
    double dof_;
    double log_const_ = 0.0;

    friend double log_p0(const DensityGenerator&, double);
};

namespace detail {
inline void check_quadratic_form(double u) {
    if (!(u >= 0.0)) {
        throw DomainError("density generator evaluated at a negative (or NaN) quadratic form");
    }
}
}  // namespace detail

// log p0(u), normalized so that the elliptical density integrates to one.
inline double log_p0(const DensityGenerator& gen, double u) {
    detail::check_quadratic_form(u);
    if (gen.family() == Family::Normal) {
        return gen.log_const_ - 0.5 * u;
    }
    const double nu = gen.dof();
    return gen.log_const_ - 0.5 * (nu + gen.dim()) * std::log1p(u / nu);
}

// W(u) = d log p0(u) / du.
inline double weight_w(const DensityGenerator& gen, double u) {
    detail::check_quadratic_form(u);
    if (gen.family() == Family::Normal) {
        return -0.5;
    }
    const double nu = gen.dof();
    return -(nu + gen.dim()) / (2.0 * (nu + u));
}

// W'(u) = dW(u) / du.
inline double weight_w_prime(const DensityGenerator& gen, double u) {
    detail::check_quadratic_form(u);
    if (gen.family() == Family::Normal) {
        return 0.0;
    }
    const double nu = gen.dof();
    return (nu + gen.dim()) / (2.0 * (nu + u) * (nu + u));
}

// `count` draws of the spherical seed vector Z*, one per row.
// Student-t draws are standard normals scaled by sqrt(nu / g), g ~ chi-square(nu).
inline Matrix sample_spherical(const DensityGenerator& gen, RandomStream& rng, int count) {
    if (count < 0) {
        throw DomainError("sample_spherical: negative count");
    }
    Matrix draws(count, gen.dim());
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int r = 0; r < count; ++r) {
        for (int c = 0; c < gen.dim(); ++c) {
            draws(r, c) = normal(rng);
        }
        if (gen.family() == Family::StudentT) {
            std::gamma_distribution<double> chi2(0.5 * gen.dof(), 2.0);
            draws.row(r) *= std::sqrt(gen.dof() / chi2(rng));
        }
    }
    return draws;
}

}  // namespace eiv
