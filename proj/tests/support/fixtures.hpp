#pragma once

// Shared helpers for the test suites: random model points, random data
// and finite-difference oracles. Nothing in here calls the analytic
// derivative code it is used to check.

#include <functional>
#include <random>
#include <vector>

#include "eivtest/elliptical.hpp"
#include "eivtest/linalg.hpp"
#include "eivtest/model.hpp"
#include "eivtest/random.hpp"

namespace eiv::testing {

inline double unif(RandomStream& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

inline SmallMatrix random_spd(RandomStream& rng, int n) {
    SmallMatrix a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = unif(rng, -1.0, 1.0);
    SmallMatrix out = a * a.transpose();
    out.diagonal().array() += 0.5;
    return out;
}

inline SmallMatrix random_symmetric(RandomStream& rng, int n) {
    SmallMatrix a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) a(i, j) = a(j, i) = unif(rng, -1.0, 1.0);
    return a;
}

inline ModelSpec make_spec(CaseKind kind, int l, std::vector<int> sizes, RandomStream* rng = nullptr) {
    const auto p = sizes.size();
    auto pick = [&](double lo, double hi, double fallback) { return rng ? unif(*rng, lo, hi) : fallback; };
    switch (kind) {
        case CaseKind::LambdaXKnown: {
            std::vector<double> lx;
            for (std::size_t k = 0; k < p; ++k) lx.push_back(pick(0.5, 4.0, 3.0));
            return ModelSpec(l, std::move(sizes), LambdaXKnown{lx});
        }
        case CaseKind::LambdaEKnown: {
            std::vector<std::vector<double>> le(p);
            for (auto& g : le)
                for (int i = 0; i < l; ++i) g.push_back(pick(0.5, 4.0, 4.0));
            return ModelSpec(l, std::move(sizes), LambdaEKnown{le});
        }
        case CaseKind::InterceptKnown: {
            std::vector<std::vector<double>> a(p);
            for (auto& g : a)
                for (int i = 0; i < l; ++i) g.push_back(pick(-1.0, 1.0, 0.0));
            return ModelSpec(l, std::move(sizes), InterceptKnown{a});
        }
    }
    throw DomainError("unknown case");
}

// Random point with slopes in [-1.5, 1.5] and variances in [0.3, 2.5].
inline ParamVector random_params(const ModelSpec& spec, RandomStream& rng) {
    ParamVector theta = ParamVector::zeros(spec);
    const ParamLayout& lay = spec.layout();
    for (int k = 0; k < spec.p(); ++k) {
        for (int i = 0; i < spec.s(); ++i) {
            double v = 0.0;
            if (lay.is_slope(i)) v = unif(rng, -1.5, 1.5);
            else if (lay.is_variance(i)) v = unif(rng, 0.3, 2.5);
            else if (i == lay.mu_x) v = unif(rng, -2.0, 2.0);
            else v = unif(rng, -1.0, 1.0);
            theta[spec.flat_index(k, i)] = v;
        }
    }
    return theta;
}

// Draws from El(mu_k, Sigma_k) directly through a Cholesky factor of Sigma_k
// (not through the latent-variable representation used by the simulator).
inline Dataset random_dataset(const ModelSpec& spec, const DensityGenerator& gen, const ParamVector& theta,
                              RandomStream& rng) {
    Dataset data;
    for (int k = 0; k < spec.p(); ++k) {
        GroupModel gm(spec, k);
        const SmallVector mu = gm.mu(theta.group(k));
        const Eigen::LLT<Matrix> llt(Matrix(gm.sigma(theta.group(k))));
        const Matrix seeds = sample_spherical(gen, rng, spec.group_size(k));
        Matrix z = seeds * Matrix(llt.matrixL()).transpose();
        z.rowwise() += Vector(mu).transpose();
        data.groups.push_back(z);
    }
    return data;
}

// Centered finite difference of a scalar function along coordinate i.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double rel_step = 1e-6) {
    Vector g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = rel_step * std::max(1.0, std::abs(x[i]));
        Vector xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f(xp) - f(xm)) / (2.0 * h);
    }
    return g;
}

// Jacobian (columns = coordinates) of a vector function by centered differences.
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x, double rel_step = 1e-6) {
    const Vector f0 = f(x);
    Matrix jac(f0.size(), x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = rel_step * std::max(1.0, std::abs(x[i]));
        Vector xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        jac.col(i) = (f(xp) - f(xm)) / (2.0 * h);
    }
    return jac;
}

// max |a - b| / max(1, max |b|)
inline double rel_err(const Matrix& a, const Matrix& b) {
    const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
    return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace eiv::testing
