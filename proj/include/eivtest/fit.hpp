#pragma once

// Maximum-likelihood fitting, full and restricted.
//
// The optimizer works on the free coordinates only, with every variance
// replaced by its logarithm. A converged BFGS run is followed by a few
// Newton steps on the observed information, which drive the score to
// rounding level.

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "eivtest/bfgs.hpp"
#include "eivtest/likelihood.hpp"
#include "eivtest/random.hpp"

namespace eiv {

struct Constraint {
    int index = 0;  // flat coordinate in ParamVector
    double value = 0.0;
};

// H0: psi = psi0, with psi a subset of the flat coordinates.
class Hypothesis {
public:
    explicit Hypothesis(std::vector<Constraint> constraints) : constraints_(std::move(constraints)) {
        if (constraints_.empty()) throw DomainError("hypothesis needs at least one constraint");
        std::set<int> seen;
        for (const auto& c : constraints_) {
            if (c.index < 0) throw DomainError("constraint index must be non-negative");
            if (!std::isfinite(c.value)) throw DomainError("constraint value must be finite");
            if (!seen.insert(c.index).second) {
                throw DomainError("coordinate " + std::to_string(c.index) + " constrained twice");
            }
        }
    }

    // beta1 of the first q groups fixed at `value`.
    static Hypothesis slopes(const ModelSpec& spec, int q, double value) {
        if (q < 1 || q > spec.p()) throw DomainError("q must be between 1 and the number of groups");
        std::vector<Constraint> cs;
        for (int k = 0; k < q; ++k) cs.push_back({spec.flat_index(k, 0), value});
        return Hypothesis(std::move(cs));
    }

    int q() const noexcept { return static_cast<int>(constraints_.size()); }
    const std::vector<Constraint>& constraints() const noexcept { return constraints_; }

    void validate(const ModelSpec& spec) const {
        for (const auto& c : constraints_) {
            if (c.index >= spec.m()) {
                throw DomainError("constraint index " + std::to_string(c.index) + " out of range");
            }
            if (spec.layout().is_variance(c.index % spec.s()) && !(c.value > 0.0)) {
                throw DomainError("domain violation: variance " + spec.layout().name(c.index % spec.s()) +
                                  " fixed at a non-positive value");
            }
        }
    }

    // true for coordinates not under test (omega), in original order.
    std::vector<bool> nuisance_mask(int m) const {
        std::vector<bool> mask(m, true);
        for (const auto& c : constraints_) mask.at(c.index) = false;
        return mask;
    }

    void apply(ParamVector& theta) const {
        for (const auto& c : constraints_) theta[c.index] = c.value;
    }

    bool satisfied_by(const ParamVector& theta) const {
        for (const auto& c : constraints_) {
            if (theta[c.index] != c.value) return false;
        }
        return true;
    }

private:
    std::vector<Constraint> constraints_;
};

struct FitResult {
    ParamVector theta;
    double loglik = 0.0;
    double grad_inf_norm = 0.0;
    // Largest |dl/dtheta_i| over free coordinates in natural units. Large
    // when a variance estimate sits on the boundary of the parameter space.
    double score_inf_norm = 0.0;
    int iterations = 0;
    // Converged requires an interior stationary point: a working-coordinate
    // optimum whose natural-coordinate score is not small is on_boundary.
    bool converged = false;
    bool on_boundary = false;
    int restarts_used = 0;
};

struct FitOptions {
    BfgsOptions bfgs;
    int max_restarts = 3;
    double jitter_scale = 0.2;
    std::uint64_t seed = 0;
    int newton_steps = 8;
};

inline constexpr double kInitFloor = 1e-4;

// Moment-based starting point.
inline ParamVector default_init(const LikelihoodContext& ctx) {
    const ModelSpec& spec = ctx.spec();
    const ParamLayout& lay = spec.layout();
    const int l = spec.l();
    ParamVector theta = ParamVector::zeros(spec);
    for (int k = 0; k < spec.p(); ++k) {
        const Matrix& z = ctx.data().groups[k];
        const auto n = z.rows();
        if (n < 3) throw InitializationError("group " + std::to_string(k + 1) + " has fewer than 3 observations");
        const Vector mean = z.colwise().mean();
        const Matrix centered = z.rowwise() - mean.transpose();
        const Matrix cov = centered.transpose() * centered / static_cast<double>(n - 1);
        const double var_x = cov(l, l);
        if (!(var_x > 0.0)) throw InitializationError("group " + std::to_string(k + 1) + " has constant X");

        auto at = [&](int i) -> double& { return theta[spec.flat_index(k, i)]; };
        double s2x = 0.0;
        if (spec.kind() == CaseKind::LambdaXKnown) {
            const double lx = spec.lambda_x(k);
            at(lay.sigma2_u) = var_x / (lx + 1.0);
            s2x = lx * at(lay.sigma2_u);
        } else {
            at(lay.sigma2_u) = std::max(var_x / 2.0, kInitFloor);
            s2x = var_x - at(lay.sigma2_u);
            if (!(s2x > 0.0)) s2x = kInitFloor;
            at(lay.sigma2_x) = s2x;
        }
        at(lay.mu_x) = mean[l];
        double alpha = 0.0;
        for (int i = 0; i < l; ++i) {
            const double beta = cov(i, l) / s2x;
            at(i) = beta;
            alpha += (mean[i] - beta * mean[l]) / l;
            if (lay.sigma2_e >= 0) at(lay.sigma2_e + i) = std::max(cov(i, i) - beta * beta * s2x, kInitFloor);
        }
        if (lay.alpha >= 0) at(lay.alpha) = alpha;
    }
    return theta;
}

namespace detail {

// Free coordinates with log-transformed variances.
class WorkingMap {
public:
    WorkingMap(const ModelSpec& spec, const ParamVector& base, const std::vector<bool>& free)
        : base_(base), s_(spec.s()) {
        for (int i = 0; i < spec.m(); ++i) {
            if (free[i]) {
                index_.push_back(i);
                log_.push_back(spec.layout().is_variance(i % s_));
            }
        }
    }

    int size() const { return static_cast<int>(index_.size()); }

    Vector to_working(const ParamVector& theta) const {
        Vector w(size());
        for (int j = 0; j < size(); ++j) {
            const double v = theta[index_[j]];
            w[j] = log_[j] ? std::log(v) : v;
        }
        return w;
    }

    ParamVector to_natural(const Vector& w) const {
        ParamVector theta = base_;
        for (int j = 0; j < size(); ++j) theta[index_[j]] = log_[j] ? std::exp(w[j]) : w[j];
        return theta;
    }

    // Chain rule from a natural-coordinate gradient.
    Vector working_gradient(const ParamVector& theta, const Vector& grad) const {
        Vector g(size());
        for (int j = 0; j < size(); ++j) g[j] = grad[index_[j]] * (log_[j] ? theta[index_[j]] : 1.0);
        return g;
    }

    const std::vector<int>& index() const { return index_; }
    bool is_log(int j) const { return log_[j]; }

private:
    ParamVector base_;
    int s_;
    std::vector<int> index_;
    std::vector<bool> log_;
};

inline double working_grad_norm(const WorkingMap& map, const ParamVector& theta, const Vector& score) {
    const Vector g = map.working_gradient(theta, score);
    return g.size() == 0 ? 0.0 : g.cwiseAbs().maxCoeff();
}

// Newton iterations on the free natural coordinates; keeps a step only if
// it shrinks the score without lowering the log-likelihood beyond rounding.
inline void newton_polish(const LikelihoodContext& ctx, const WorkingMap& map, FitResult& fit, int steps) {
    const auto& idx = map.index();
    const int nf = map.size();
    if (nf == 0) return;
    auto [ll, sc] = loglik_and_score(ctx, fit.theta);
    auto free_score = [&](const Vector& s) {
        Vector out(nf);
        for (int j = 0; j < nf; ++j) out[j] = s[idx[j]];
        return out;
    };
    Vector uf = free_score(sc);
    for (int it = 0; it < steps; ++it) {
        if (uf.cwiseAbs().maxCoeff() <= 1e-13 * (1.0 + std::abs(ll))) break;
        Matrix info;
        try {
            info = observed_info(ctx, fit.theta);
        } catch (const EvaluationError&) {
            break;
        }
        Matrix jf(nf, nf);
        for (int a = 0; a < nf; ++a)
            for (int b = 0; b < nf; ++b) jf(a, b) = info(idx[a], idx[b]);
        const Eigen::LLT<Matrix> llt(jf);
        if (llt.info() != Eigen::Success) break;
        const Vector step = llt.solve(uf);
        ParamVector cand = fit.theta;
        for (int j = 0; j < nf; ++j) cand[idx[j]] += step[j];
        double cll;
        Vector csc;
        try {
            std::tie(cll, csc) = loglik_and_score(ctx, cand);
        } catch (const EvaluationError&) {
            break;
        }
        const Vector cuf = free_score(csc);
        if (cll < ll - 1e-10 * (1.0 + std::abs(ll)) || cuf.cwiseAbs().maxCoeff() >= uf.cwiseAbs().maxCoeff()) break;
        fit.theta = std::move(cand);
        ll = cll;
        sc = csc;
        uf = cuf;
    }
    fit.loglik = ll;
    fit.grad_inf_norm = working_grad_norm(map, fit.theta, sc);
    fit.score_inf_norm = uf.cwiseAbs().maxCoeff();
}

}  // namespace detail

// Maximizes the log-likelihood over the coordinates not fixed by `fixed`.
inline FitResult fit_mle(const LikelihoodContext& ctx, ParamVector init, const std::optional<Hypothesis>& fixed = std::nullopt,
                         const FitOptions& opt = {}) {
    const ModelSpec& spec = ctx.spec();
    std::vector<bool> free(spec.m(), true);
    if (fixed) {
        fixed->validate(spec);
        fixed->apply(init);
        free = fixed->nuisance_mask(spec.m());
    }
    check_params(spec, init);
    const detail::WorkingMap map(spec, init, free);

    auto objective = [&](const Vector& w, Vector& grad) {
        const ParamVector theta = map.to_natural(w);
        if (!theta.values.allFinite()) return std::numeric_limits<double>::infinity();
        auto [ll, sc] = loglik_and_score(ctx, theta);
        grad = -map.working_gradient(theta, sc);
        return -ll;
    };

    FitResult best;
    best.theta = init;
    best.loglik = -std::numeric_limits<double>::infinity();
    Vector start = map.to_working(init);
    RandomStream jitter_rng(opt.seed);
    int total_iterations = 0;
    for (int attempt = 0; attempt <= opt.max_restarts; ++attempt) {
        const BfgsResult r = bfgs_minimize(objective, start, opt.bfgs);
        total_iterations += r.iterations;
        best.restarts_used = attempt;
        if (std::isfinite(r.value)) {
            FitResult cand;
            cand.theta = map.to_natural(r.x);
            cand.loglik = -r.value;
            cand.grad_inf_norm = r.gradient.size() == 0 ? 0.0 : r.gradient.cwiseAbs().maxCoeff();
            cand.restarts_used = attempt;
            detail::newton_polish(ctx, map, cand, r.converged ? opt.newton_steps : 0);
            cand.on_boundary = cand.score_inf_norm > opt.bfgs.gradient_tolerance * (1.0 + std::abs(cand.loglik));
            cand.converged = r.converged && !cand.on_boundary;
            if (cand.converged || cand.loglik > best.loglik) best = std::move(cand);
            if (best.converged) break;
        }
        if (attempt == opt.max_restarts) break;
        // Jitter the best point so far: log-normal on variances, additive elsewhere.
        std::normal_distribution<double> normal(0.0, 1.0);
        RandomStream rng = jitter_rng.split(static_cast<std::uint64_t>(attempt));
        start = map.to_working(std::isfinite(best.loglik) ? best.theta : init);
        for (int j = 0; j < map.size(); ++j) {
            const double z = normal(rng);
            start[j] += map.is_log(j) ? opt.jitter_scale * z : opt.jitter_scale * z * std::max(1.0, std::abs(start[j]));
        }
    }
    best.iterations = total_iterations;
    return best;
}

}  // namespace eiv
