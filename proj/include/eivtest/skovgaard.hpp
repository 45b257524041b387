#pragma once

// Ancillary statistic, sample-space derivatives and the adjusted
// likelihood-ratio statistics LR* and LR**.
//
// With a_jk = P_hat^{-1}(z_jk - mu_hat) held fixed, the data are rewritten as
// z_jk = P_hat a_jk + mu_hat and the log-likelihood becomes a function
// l(theta; theta_hat, a). Below, g = P_hat a + mu_hat - mu and
// e_i' = P_hat_i' a + mu_hat_i' (the derivative of z along theta_hat_i').

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "eivtest/chi2.hpp"
#include "eivtest/fit.hpp"
#include "eivtest/likelihood.hpp"

namespace eiv {

struct Ancillary {
    std::vector<Matrix> groups;  // row j of groups[k] is a_jk
};

inline Ancillary ancillary(const LikelihoodContext& ctx, const ParamVector& theta_hat) {
    return detail::guarded([&] {
        check_params(ctx.spec(), theta_hat);
        Ancillary anc;
        for (int k = 0; k < ctx.spec().p(); ++k) {
            GroupModel gm(ctx.spec(), k);
            const auto th = theta_hat.group(k);
            const CholeskyFactor chol = cholesky(gm.sigma(th));
            const SmallVector mu = gm.mu(th);
            const Matrix& z = ctx.data().groups[k];
            Matrix a(z.rows(), z.cols());
            for (Eigen::Index j = 0; j < z.rows(); ++j) {
                const SmallVector d = z.row(j).transpose() - mu;
                a.row(j) = solve_lower(chol, d).transpose();
            }
            anc.groups.push_back(std::move(a));
        }
        return anc;
    });
}

// Hat-side quantities of one group: P_hat, mu_hat and their derivatives,
// computed once per theta_hat.
struct HatFrame {
    SmallMatrix p;
    SmallVector mu;
    std::vector<SmallMatrix> p_d;
    std::vector<SmallVector> mu_d;

    HatFrame(const ModelSpec& spec, int k, GroupParams th) {
        GroupModel gm(spec, k);
        const CholeskyFactor chol = cholesky(gm.sigma(th));
        p = chol.matrix();
        mu = gm.mu(th);
        for (int i = 0; i < spec.s(); ++i) {
            p_d.push_back(d_cholesky(chol, gm.d_sigma(th, i)));
            mu_d.push_back(gm.d_mu(th, i));
        }
    }
};

inline std::vector<HatFrame> hat_frames(const ModelSpec& spec, const ParamVector& theta_hat) {
    check_params(spec, theta_hat);
    std::vector<HatFrame> frames;
    for (int k = 0; k < spec.p(); ++k) frames.emplace_back(spec, k, theta_hat.group(k));
    return frames;
}

namespace detail {

inline void check_ancillary(const LikelihoodContext& ctx, const Ancillary& anc) {
    const ModelSpec& spec = ctx.spec();
    if (static_cast<int>(anc.groups.size()) != spec.p()) throw DomainError("ancillary has the wrong number of groups");
    for (int k = 0; k < spec.p(); ++k) {
        if (anc.groups[k].rows() != spec.group_size(k) || anc.groups[k].cols() != spec.obs_dim()) {
            throw DomainError("ancillary group " + std::to_string(k + 1) + " has the wrong shape");
        }
    }
}

inline Vector ell_prime_from_frames(const LikelihoodContext& ctx, const Ancillary& anc,
                                    const std::vector<HatFrame>& frames, const ParamVector& theta) {
    const ModelSpec& spec = ctx.spec();
    const int s = spec.s();
    Vector out = Vector::Zero(spec.m());
    for (int k = 0; k < spec.p(); ++k) {
        const GroupGeometry geo(spec, k, theta.group(k), false);
        const HatFrame& hf = frames[k];
        const Matrix& a = anc.groups[k];
        for (Eigen::Index j = 0; j < a.rows(); ++j) {
            const SmallVector aj = a.row(j).transpose();
            const SmallVector g = hf.p * aj + hf.mu - geo.mu;
            const SmallVector sg = geo.sigma_inv * g;
            const double wt = weight_w(ctx.generator(), g.dot(sg));
            for (int i2 = 0; i2 < s; ++i2) {
                const SmallVector e = hf.p_d[i2] * aj + hf.mu_d[i2];
                out[spec.flat_index(k, i2)] += 2.0 * wt * e.dot(sg);
            }
        }
    }
    return out;
}

// Row i indexes theta, column i' indexes theta_hat.
inline Matrix u_prime_from_frames(const LikelihoodContext& ctx, const Ancillary& anc, const std::vector<HatFrame>& frames,
                                  const ParamVector& theta) {
    const ModelSpec& spec = ctx.spec();
    const int s = spec.s();
    Matrix out = Matrix::Zero(spec.m(), spec.m());
    std::vector<SmallVector> e(s);
    for (int k = 0; k < spec.p(); ++k) {
        const GroupGeometry geo(spec, k, theta.group(k), true);
        const HatFrame& hf = frames[k];
        const Matrix& a = anc.groups[k];
        auto block = out.block(static_cast<Eigen::Index>(k) * s, static_cast<Eigen::Index>(k) * s, s, s);
        std::vector<SmallVector> sinv_mu_d(s);
        for (int i = 0; i < s; ++i) sinv_mu_d[i] = geo.sigma_inv * geo.mu_d[i];
        for (Eigen::Index j = 0; j < a.rows(); ++j) {
            const SmallVector aj = a.row(j).transpose();
            const SmallVector g = hf.p * aj + hf.mu - geo.mu;
            const SmallVector sg = geo.sigma_inv * g;
            const double u = g.dot(sg);
            const double wt = weight_w(ctx.generator(), u);
            const double wp = weight_w_prime(ctx.generator(), u);
            for (int i2 = 0; i2 < s; ++i2) e[i2] = hf.p_d[i2] * aj + hf.mu_d[i2];
            for (int i = 0; i < s; ++i) {
                const SmallVector sig_i_g = geo.sigma_inv_d[i] * g;
                const double du = g.dot(sig_i_g) - 2.0 * sinv_mu_d[i].dot(g);
                for (int i2 = 0; i2 < s; ++i2) {
                    const double b = e[i2].dot(sig_i_g) - sinv_mu_d[i].dot(e[i2]);
                    const double c = e[i2].dot(sg) * du;
                    block(i, i2) += 2.0 * (wt * b + wp * c);
                }
            }
        }
    }
    return out;
}

}  // namespace detail

// l' = d l(theta; theta_hat, a) / d theta_hat.
inline Vector sample_space_ell_prime(const LikelihoodContext& ctx, const Ancillary& anc, const ParamVector& theta_hat,
                                     const ParamVector& theta) {
    return detail::guarded([&] {
        detail::check_ancillary(ctx, anc);
        check_params(ctx.spec(), theta);
        return detail::ell_prime_from_frames(ctx, anc, hat_frames(ctx.spec(), theta_hat), theta);
    });
}

// U' = d^2 l(theta; theta_hat, a) / d theta d theta_hat^T, block diagonal.
inline Matrix sample_space_u_prime(const LikelihoodContext& ctx, const Ancillary& anc, const ParamVector& theta_hat,
                                   const ParamVector& theta) {
    return detail::guarded([&] {
        detail::check_ancillary(ctx, anc);
        check_params(ctx.spec(), theta);
        return detail::u_prime_from_frames(ctx, anc, hat_frames(ctx.spec(), theta_hat), theta);
    });
}

// U' with both arguments at theta_tilde, written out directly: with
// g = P_tilde a the weight argument reduces to a^T a.
inline Matrix j_breve(const LikelihoodContext& ctx, const Ancillary& anc, const ParamVector& theta_tilde) {
    return detail::guarded([&] {
        detail::check_ancillary(ctx, anc);
        const ModelSpec& spec = ctx.spec();
        const int s = spec.s();
        const auto frames = hat_frames(spec, theta_tilde);
        Matrix out = Matrix::Zero(spec.m(), spec.m());
        for (int k = 0; k < spec.p(); ++k) {
            const GroupGeometry geo(spec, k, theta_tilde.group(k), true);
            const HatFrame& hf = frames[k];
            const Matrix& a = anc.groups[k];
            const CholeskyFactor& chol = geo.chol;
            auto block = out.block(static_cast<Eigen::Index>(k) * s, static_cast<Eigen::Index>(k) * s, s, s);
            for (Eigen::Index j = 0; j < a.rows(); ++j) {
                const SmallVector aj = a.row(j).transpose();
                const double u = aj.squaredNorm();
                const double wt = weight_w(ctx.generator(), u);
                const double wp = weight_w_prime(ctx.generator(), u);
                const SmallVector pa = hf.p * aj;
                const SmallVector spa = solve_upper(chol, aj);  // Sigma^{-1} P a = P^{-T} a
                for (int i = 0; i < s; ++i) {
                    const SmallVector sig_i_pa = geo.sigma_inv_d[i] * pa;
                    const SmallVector sinv_mu_i = geo.sigma_inv * geo.mu_d[i];
                    const double bracket = pa.dot(sig_i_pa) - 2.0 * geo.mu_d[i].dot(spa);
                    for (int i2 = 0; i2 < s; ++i2) {
                        const SmallVector e = hf.p_d[i2] * aj + hf.mu_d[i2];
                        const double f = e.dot(sig_i_pa) - sinv_mu_i.dot(e);
                        const double gterm = e.dot(spa) * bracket;
                        block(i, i2) += 2.0 * (wt * f + wp * gterm);
                    }
                }
            }
        }
        return out;
    });
}

enum class RhoExponent { QHalf, PHalf, MHalf };

inline std::string to_string(RhoExponent e) {
    switch (e) {
        case RhoExponent::QHalf: return "q-half";
        case RhoExponent::PHalf: return "p-half";
        case RhoExponent::MHalf: return "m-half";
    }
    return "?";
}

enum class Degeneracy { None, TinyLR, NonPositiveRho };

inline std::string to_string(Degeneracy d) {
    switch (d) {
        case Degeneracy::None: return "none";
        case Degeneracy::TinyLR: return "tiny_lr";
        case Degeneracy::NonPositiveRho: return "non_positive_rho";
    }
    return "?";
}

inline constexpr double kTinyLR = 1e-8;
inline constexpr double kLRNegativeTolerance = 1e-6;

// Everything rho needs, at the unrestricted (hat) and restricted (tilde) fits.
struct RhoInputs {
    Matrix j_hat;            // observed information at theta_hat
    Matrix j_tilde;          // observed information at theta_tilde
    Matrix u_prime_tilde;    // U'(theta_tilde; theta_hat, a)
    Matrix j_breve;
    Vector ell_prime_hat;    // l'(theta_hat; theta_hat, a)
    Vector ell_prime_tilde;  // l'(theta_tilde; theta_hat, a)
    Vector score_tilde;
    std::vector<bool> nuisance;
    int groups = 1;
};

struct RhoOutcome {
    double log_rho = 0.0;
    Degeneracy degeneracy = Degeneracy::None;
    bool negative_determinant = false;
};

namespace detail {

struct LogDet {
    double log_abs = 0.0;
    int sign = 1;
    bool singular = false;
};

inline LogDet log_det_lu(const Matrix& a) {
    LogDet out;
    if (a.rows() == 0) return out;
    const Eigen::PartialPivLU<Matrix> lu(a);
    const Matrix& m = lu.matrixLU();
    const double scale = m.diagonal().cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double v = m(i, i);
        if (!(std::abs(v) > 1e-14 * scale) || !std::isfinite(v)) {
            out.singular = true;
            return out;
        }
        out.log_abs += std::log(std::abs(v));
        if (v < 0.0) out.sign = -out.sign;
    }
    out.sign *= static_cast<int>(lu.permutationP().determinant());
    return out;
}

inline Matrix select(const Matrix& a, const std::vector<bool>& mask) {
    std::vector<Eigen::Index> idx;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) idx.push_back(static_cast<Eigen::Index>(i));
    }
    Matrix out(idx.size(), idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t c = 0; c < idx.size(); ++c) out(r, c) = a(idx[r], idx[c]);
    return out;
}

}  // namespace detail

inline double rho_exponent(RhoExponent e, int q, int groups, int m) {
    switch (e) {
        case RhoExponent::QHalf: return 0.5 * q;
        case RhoExponent::PHalf: return 0.5 * groups;
        case RhoExponent::MHalf: return 0.5 * m;
    }
    return 0.5 * q;
}

// log rho, with all determinants as absolute values.
inline RhoOutcome rho(const RhoInputs& in, double lr, int q, RhoExponent exponent = RhoExponent::QHalf) {
    RhoOutcome out;
    if (!(lr >= kTinyLR)) {
        out.degeneracy = Degeneracy::TinyLR;
        return out;
    }
    auto fail = [&] {
        out.log_rho = 0.0;
        out.degeneracy = Degeneracy::NonPositiveRho;
        return out;
    };
    const detail::LogDet jh = detail::log_det_lu(in.j_hat);
    const detail::LogDet up = detail::log_det_lu(in.u_prime_tilde);
    const detail::LogDet jtw = detail::log_det_lu(detail::select(in.j_tilde, in.nuisance));
    const detail::LogDet jbw = detail::log_det_lu(detail::select(in.j_breve, in.nuisance));
    const detail::LogDet jb = detail::log_det_lu(in.j_breve);
    for (const auto* d : {&jh, &jtw, &jbw}) {
        if (d->singular) return fail();
    }
    if (up.singular || jb.singular) return fail();
    out.negative_determinant = jh.sign < 0 || up.sign < 0 || jtw.sign < 0 || jbw.sign < 0 || jb.sign < 0;

    const Vector jb_u = in.j_breve.partialPivLu().solve(in.score_tilde);
    const Vector up_u = in.u_prime_tilde.partialPivLu().solve(in.score_tilde);
    const double quad = in.score_tilde.dot(jb_u);
    const double denom = (in.ell_prime_hat - in.ell_prime_tilde).dot(up_u);
    if (!(quad > 0.0) || !(denom > 0.0) || !std::isfinite(quad) || !std::isfinite(denom)) return fail();

    const int m = static_cast<int>(in.j_hat.rows());
    const double e = rho_exponent(exponent, q, in.groups, m);
    out.log_rho = 0.5 * jh.log_abs - up.log_abs + 0.5 * jtw.log_abs - 0.5 * jbw.log_abs + 0.5 * jb.log_abs +
                  e * std::log(quad) - (0.5 * q - 1.0) * std::log(lr) - std::log(denom);
    if (!std::isfinite(out.log_rho)) return fail();
    return out;
}

struct AdjustedStatistics {
    double lr_star = 0.0;
    double lr_star_star = 0.0;
};

// LR* = LR (1 - log(rho)/LR)^2, LR** = LR - 2 log(rho).
inline AdjustedStatistics adjusted_statistics(double lr, double log_rho) {
    if (!(lr > 0.0)) throw DomainError("adjusted statistics need LR > 0");
    const double r = 1.0 - log_rho / lr;
    return {lr * r * r, lr - 2.0 * log_rho};
}

struct TestResult {
    double lr = 0.0;
    double lr_star = 0.0;
    double lr_star_star = 0.0;
    double rho = 1.0;
    double log_rho = 0.0;
    int q = 0;
    double p_lr = 1.0;
    double p_star = 1.0;
    double p_star_star = 1.0;
    Degeneracy degenerate = Degeneracy::None;
    bool negative_determinant = false;
};

class FitNotConverged : public Error {
public:
    FitNotConverged(FitResult full, FitResult restricted)
        : Error(std::string("maximum-likelihood fit did not converge (") + (full.converged ? "restricted" : "full") + " fit)"),
          full_(std::move(full)), restricted_(std::move(restricted)) {}

    const FitResult& full() const noexcept { return full_; }
    const FitResult& restricted() const noexcept { return restricted_; }

private:
    FitResult full_;
    FitResult restricted_;
};

// Restricted log-likelihood exceeds the full one by more than optimizer noise.
class InconsistentFits : public Error {
public:
    using Error::Error;
};

struct TestOptions {
    RhoExponent exponent = RhoExponent::QHalf;
};

inline RhoInputs rho_inputs(const LikelihoodContext& ctx, const Hypothesis& h, const ParamVector& theta_hat,
                            const ParamVector& theta_tilde) {
    return detail::guarded([&] {
        RhoInputs in;
        const Ancillary anc = ancillary(ctx, theta_hat);
        const auto frames = hat_frames(ctx.spec(), theta_hat);
        in.j_hat = observed_info(ctx, theta_hat);
        in.j_tilde = observed_info(ctx, theta_tilde);
        in.u_prime_tilde = detail::u_prime_from_frames(ctx, anc, frames, theta_tilde);
        in.j_breve = j_breve(ctx, anc, theta_tilde);
        in.ell_prime_hat = detail::ell_prime_from_frames(ctx, anc, frames, theta_hat);
        in.ell_prime_tilde = detail::ell_prime_from_frames(ctx, anc, frames, theta_tilde);
        in.score_tilde = score(ctx, theta_tilde);
        in.nuisance = h.nuisance_mask(ctx.spec().m());
        in.groups = ctx.spec().p();
        return in;
    });
}

inline TestResult run_test(const LikelihoodContext& ctx, const Hypothesis& h, const FitResult& full,
                           const FitResult& restricted, const TestOptions& opt = {}) {
    if (!full.converged || !restricted.converged) throw FitNotConverged(full, restricted);
    h.validate(ctx.spec());
    TestResult r;
    r.q = h.q();
    double lr = 2.0 * (full.loglik - restricted.loglik);
    if (lr < -kLRNegativeTolerance) {
        throw InconsistentFits("restricted log-likelihood exceeds the unrestricted one (LR = " + std::to_string(lr) + ")");
    }
    lr = std::max(lr, 0.0);
    r.lr = lr;

    RhoOutcome ro;
    if (lr < kTinyLR) {
        ro.degeneracy = Degeneracy::TinyLR;
    } else {
        ro = rho(rho_inputs(ctx, h, full.theta, restricted.theta), lr, r.q, opt.exponent);
    }
    r.degenerate = ro.degeneracy;
    r.negative_determinant = ro.negative_determinant;
    if (ro.degeneracy == Degeneracy::None) {
        const AdjustedStatistics adj = adjusted_statistics(lr, ro.log_rho);
        r.log_rho = ro.log_rho;
        r.rho = std::exp(ro.log_rho);
        r.lr_star = adj.lr_star;
        r.lr_star_star = adj.lr_star_star;
    } else {
        r.lr_star = r.lr_star_star = lr;
    }
    r.p_lr = chi2_sf(r.lr, r.q);
    r.p_star = chi2_sf(std::max(r.lr_star, 0.0), r.q);
    r.p_star_star = chi2_sf(std::max(r.lr_star_star, 0.0), r.q);
    return r;
}

}  // namespace eiv
