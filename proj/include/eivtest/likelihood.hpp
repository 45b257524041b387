#pragma once

// Log-likelihood, score and observed information of the p-group model.
//
// For group k with d_jk = z_jk - mu_k and u_jk = d_jk^T Sigma_k^{-1} d_jk,
//
//   l_k = -(n_k/2) log|Sigma_k| + sum_j log p0(u_jk).
//
// Derivatives follow from du/dtheta_i = d^T Sigma^i d - 2 mu_i^T Sigma^{-1} d
// where Sigma^i = d(Sigma^{-1})/dtheta_i.

#include <optional>
#include <utility>
#include <vector>

#include "eivtest/elliptical.hpp"
#include "eivtest/linalg.hpp"
#include "eivtest/model.hpp"

namespace eiv {

class LikelihoodContext {
public:
    LikelihoodContext(ModelSpec spec, DensityGenerator generator, Dataset data)
        : spec_(std::move(spec)), gen_(std::move(generator)), data_(std::move(data)) {
        if (gen_.dim() != spec_.obs_dim()) {
            throw DomainError("density generator dimension must equal l + 1");
        }
        check_dataset(spec_, data_);
    }

    const ModelSpec& spec() const noexcept { return spec_; }
    const DensityGenerator& generator() const noexcept { return gen_; }
    const Dataset& data() const noexcept { return data_; }

private:
    ModelSpec spec_;
    DensityGenerator gen_;
    Dataset data_;
};

// mu_k, Sigma_k, their factor and inverse and (optionally) first
// derivatives, evaluated at one group block.
struct GroupGeometry {
    GroupModel model;
    SmallVector mu;
    SmallMatrix sigma;
    CholeskyFactor chol;
    SmallMatrix sigma_inv;
    std::vector<SmallVector> mu_d;
    std::vector<SmallMatrix> sigma_d;
    std::vector<SmallMatrix> sigma_inv_d;

    GroupGeometry(const ModelSpec& spec, int k, GroupParams th, bool with_derivatives)
        : model(spec, k), mu(model.mu(th)), sigma(model.sigma(th)), chol(cholesky(sigma)),
          sigma_inv(inverse_spd(chol)) {
        if (with_derivatives) {
            const int s = model.s();
            mu_d.reserve(s);
            sigma_d.reserve(s);
            sigma_inv_d.reserve(s);
            for (int i = 0; i < s; ++i) {
                mu_d.push_back(model.d_mu(th, i));
                sigma_d.push_back(model.d_sigma(th, i));
                sigma_inv_d.push_back(d_sigma_inv(sigma_inv, sigma_d.back()));
            }
        }
    }
};

namespace detail {

template <class Fn>
decltype(auto) guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const NotPositiveDefinite& e) {
        throw EvaluationError(std::string("dispersion matrix: ") + e.what());
    } catch (const DomainError& e) {
        throw EvaluationError(e.what());
    }
}

inline double group_loglik(const LikelihoodContext& ctx, int k, GroupParams th) {
    const GroupGeometry geo(ctx.spec(), k, th, false);
    const Matrix& z = ctx.data().groups[k];
    const int n = static_cast<int>(z.rows());
    double total = -0.5 * n * log_det(geo.chol);
    for (int j = 0; j < n; ++j) {
        const SmallVector d = z.row(j).transpose() - geo.mu;
        const SmallVector w = solve_lower(geo.chol, d);
        total += log_p0(ctx.generator(), w.squaredNorm());
    }
    return total;
}

// Adds group k's score into `out` (length s); returns the group log-likelihood.
inline double group_score(const LikelihoodContext& ctx, int k, GroupParams th, Eigen::Ref<Vector> out) {
    const GroupGeometry geo(ctx.spec(), k, th, true);
    const Matrix& z = ctx.data().groups[k];
    const int n = static_cast<int>(z.rows());
    const int s = geo.model.s();
    double value = -0.5 * n * log_det(geo.chol);
    for (int i = 0; i < s; ++i) {
        out[i] = -0.5 * n * (geo.sigma_inv.cwiseProduct(geo.sigma_d[i])).sum();
    }
    for (int j = 0; j < n; ++j) {
        const SmallVector d = z.row(j).transpose() - geo.mu;
        const SmallVector w = solve_lower(geo.chol, d);
        const SmallVector y = solve_upper(geo.chol, w);  // Sigma^{-1} d
        const double u = w.squaredNorm();
        value += log_p0(ctx.generator(), u);
        const double wt = weight_w(ctx.generator(), u);
        for (int i = 0; i < s; ++i) {
            const double h = -y.dot(geo.sigma_d[i] * y) - 2.0 * geo.mu_d[i].dot(y);
            out[i] += wt * h;
        }
    }
    return value;
}

inline void group_info(const LikelihoodContext& ctx, int k, GroupParams th, Eigen::Ref<Matrix> out) {
    const GroupGeometry geo(ctx.spec(), k, th, true);
    const Matrix& z = ctx.data().groups[k];
    const int n = static_cast<int>(z.rows());
    const int s = geo.model.s();
    const SmallMatrix& sinv = geo.sigma_inv;

    // Pair-level pieces: mu_ij, Sigma^{ij} and the trace term.
    struct Pair {
        SmallVector mu2;
        SmallMatrix sinv2;
        double muSmu;
    };
    std::vector<Pair> pairs(static_cast<std::size_t>(s) * s);
    for (int i = 0; i < s; ++i) {
        for (int i2 = i; i2 < s; ++i2) {
            const SmallMatrix s2 = geo.model.d2_sigma(th, i, i2);
            Pair& pr = pairs[i * s + i2];
            pr.mu2 = geo.model.d2_mu(th, i, i2);
            pr.sinv2 = d2_sigma_inv(sinv, geo.sigma_d[i], geo.sigma_d[i2], s2);
            pr.muSmu = geo.mu_d[i].dot(sinv * geo.mu_d[i2]);
            out(i, i2) = 0.5 * n *
                         ((geo.sigma_inv_d[i].cwiseProduct(geo.sigma_d[i2])).sum() + (sinv.cwiseProduct(s2)).sum());
        }
    }

    std::vector<double> h(s);
    std::vector<SmallVector> sinv_d_d(s);
    for (int j = 0; j < n; ++j) {
        const SmallVector d = z.row(j).transpose() - geo.mu;
        const SmallVector w = solve_lower(geo.chol, d);
        const SmallVector y = solve_upper(geo.chol, w);
        const double u = w.squaredNorm();
        const double wt = weight_w(ctx.generator(), u);
        const double wp = weight_w_prime(ctx.generator(), u);
        for (int i = 0; i < s; ++i) {
            sinv_d_d[i] = geo.sigma_inv_d[i] * d;
            h[i] = d.dot(sinv_d_d[i]) - 2.0 * geo.mu_d[i].dot(y);
        }
        for (int i = 0; i < s; ++i) {
            for (int i2 = i; i2 < s; ++i2) {
                const Pair& pr = pairs[i * s + i2];
                const double m = d.dot(pr.sinv2 * d) - 2.0 * geo.mu_d[i].dot(sinv_d_d[i2]) -
                                 2.0 * geo.mu_d[i2].dot(sinv_d_d[i]) - 2.0 * pr.mu2.dot(y) + 2.0 * pr.muSmu;
                out(i, i2) -= wp * h[i] * h[i2] + wt * m;
            }
        }
    }
    for (int i = 0; i < s; ++i) {
        for (int i2 = 0; i2 < i; ++i2) out(i, i2) = out(i2, i);
    }
}

}  // namespace detail

inline double loglik(const LikelihoodContext& ctx, const ParamVector& theta) {
    return detail::guarded([&] {
        check_params(ctx.spec(), theta);
        double total = 0.0;
        for (int k = 0; k < ctx.spec().p(); ++k) total += detail::group_loglik(ctx, k, theta.group(k));
        return total;
    });
}

// Log-likelihood and score from one pass over the data.
inline std::pair<double, Vector> loglik_and_score(const LikelihoodContext& ctx, const ParamVector& theta) {
    return detail::guarded([&] {
        check_params(ctx.spec(), theta);
        const int s = ctx.spec().s();
        Vector grad = Vector::Zero(ctx.spec().m());
        double total = 0.0;
        for (int k = 0; k < ctx.spec().p(); ++k) {
            total += detail::group_score(ctx, k, theta.group(k), grad.segment(static_cast<Eigen::Index>(k) * s, s));
        }
        return std::make_pair(total, grad);
    });
}

inline Vector score(const LikelihoodContext& ctx, const ParamVector& theta) {
    return loglik_and_score(ctx, theta).second;
}

// J = -d^2 l / dtheta dtheta^T, block diagonal across groups.
inline Matrix observed_info(const LikelihoodContext& ctx, const ParamVector& theta) {
    return detail::guarded([&] {
        check_params(ctx.spec(), theta);
        const int s = ctx.spec().s();
        Matrix info = Matrix::Zero(ctx.spec().m(), ctx.spec().m());
        for (int k = 0; k < ctx.spec().p(); ++k) {
            const auto off = static_cast<Eigen::Index>(k) * s;
            detail::group_info(ctx, k, theta.group(k), info.block(off, off, s, s));
        }
        return info;
    });
}

}  // namespace eiv
