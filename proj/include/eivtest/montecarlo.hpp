#pragma once

// Null rejection-rate study: simulate under H0, test, tally.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "eivtest/chi2.hpp"
#include "eivtest/inference.hpp"
#include "eivtest/random.hpp"

namespace eiv {

// Draws Z_jk = delta_k + Delta_k b_jk with b_jk ~ El_{l+2}(eta_k, Omega_k),
// b = (x, e_1..e_l, u), eta = (mu_x, 0, .., 0), Omega = diag(sigma2_x, sigma2_e, sigma2_u).
inline Dataset generate_dataset(const ModelSpec& spec, const DensityGenerator& gen, const ParamVector& theta,
                                RandomStream& rng) {
    check_params(spec, theta);
    const int l = spec.l();
    const DensityGenerator latent = gen.with_dim(l + 2);
    Dataset data;
    for (int k = 0; k < spec.p(); ++k) {
        GroupModel gm(spec, k);
        const auto th = theta.group(k);
        const SmallVector c = gm.slope_direction(th);
        const double mu_x = th[spec.layout().mu_x];
        const SmallVector delta = gm.mu(th) - mu_x * c;
        Vector scale(l + 2);
        scale[0] = std::sqrt(gm.sigma2_x(th));
        for (int i = 0; i < l; ++i) scale[1 + i] = std::sqrt(gm.error_variance(th, i));
        scale[l + 1] = std::sqrt(th[spec.layout().sigma2_u]);

        const Matrix s = sample_spherical(latent, rng, spec.group_size(k));
        Matrix z(spec.group_size(k), l + 1);
        for (Eigen::Index j = 0; j < s.rows(); ++j) {
            const double x = mu_x + scale[0] * s(j, 0);
            for (int i = 0; i < l; ++i) z(j, i) = delta[i] + c[i] * x + scale[1 + i] * s(j, 1 + i);
            z(j, l) = delta[l] + x + scale[l + 1] * s(j, l + 1);
        }
        data.groups.push_back(std::move(z));
    }
    return data;
}

// Simulation truth: alpha = 0.5, sigma2_x = 1.5, sigma2_u = 0.5,
// sigma2_e = 2.0, mu_x = 0.5 (5.0 with a known intercept) and every slope
// at the null value.
inline constexpr double kLambdaX = 3.0;
inline constexpr double kLambdaE = 4.0;

inline double null_slope(CaseKind kind) { return kind == CaseKind::InterceptKnown ? 1.0 : 0.0; }

inline ModelSpec reference_spec(CaseKind kind, int p, int n, int l = 1) {
    const std::vector<int> sizes(p, n);
    switch (kind) {
        case CaseKind::LambdaXKnown: return ModelSpec(l, sizes, LambdaXKnown{std::vector<double>(p, kLambdaX)});
        case CaseKind::LambdaEKnown:
            return ModelSpec(l, sizes, LambdaEKnown{std::vector<std::vector<double>>(p, std::vector<double>(l, kLambdaE))});
        case CaseKind::InterceptKnown:
            return ModelSpec(l, sizes, InterceptKnown{std::vector<std::vector<double>>(p, std::vector<double>(l, 0.0))});
    }
    throw DomainError("unknown case");
}

inline ParamVector reference_truth(const ModelSpec& spec) {
    const ParamLayout& lay = spec.layout();
    ParamVector theta = ParamVector::zeros(spec);
    for (int k = 0; k < spec.p(); ++k) {
        auto at = [&](int i) -> double& { return theta[spec.flat_index(k, i)]; };
        for (int i = 0; i < spec.l(); ++i) at(i) = null_slope(spec.kind());
        if (lay.alpha >= 0) at(lay.alpha) = 0.5;
        at(lay.mu_x) = spec.kind() == CaseKind::InterceptKnown ? 5.0 : 0.5;
        if (lay.sigma2_x >= 0) at(lay.sigma2_x) = 1.5;
        at(lay.sigma2_u) = 0.5;
        if (lay.sigma2_e >= 0) {
            for (int i = 0; i < spec.l(); ++i) at(lay.sigma2_e + i) = 2.0;
        }
    }
    return theta;
}

struct SimConfig {
    ModelSpec spec;
    DensityGenerator generator;
    ParamVector theta_true;
    Hypothesis hypothesis;
    int replications = 1000;
    std::vector<double> levels{0.01, 0.05, 0.10};
    std::uint64_t master_seed = 1;
    int threads = 1;
    FitOptions fit;
    TestOptions test;

    void validate() const {
        if (replications < 1) throw DomainError("replications must be positive");
        if (threads < 1) throw DomainError("threads must be positive");
        if (levels.empty()) throw DomainError("at least one level is required");
        for (double g : levels) {
            if (!(g > 0.0 && g < 1.0)) throw DomainError("levels must lie in (0, 1)");
        }
        if (generator.dim() != spec.obs_dim()) throw DomainError("generator dimension must equal l + 1");
        hypothesis.validate(spec);
        check_params(spec, theta_true);
        for (const auto& c : hypothesis.constraints()) {
            if (theta_true[c.index] != c.value) throw DomainError("theta_true must satisfy the null hypothesis");
        }
    }
};

// `standard` preset: l = 1, p = 5, H0 fixes beta of groups 1..q.
inline SimConfig reference_config(CaseKind kind, Family family, int q, int n, int replications, std::uint64_t seed,
                                  int p = 5) {
    ModelSpec spec = reference_spec(kind, p, n);
    DensityGenerator gen = family == Family::Normal ? DensityGenerator::normal(2) : DensityGenerator::student_t(2, 3.0);
    ParamVector truth = reference_truth(spec);
    Hypothesis h = Hypothesis::slopes(spec, q, null_slope(kind));
    SimConfig cfg{std::move(spec), gen, std::move(truth), std::move(h)};
    cfg.replications = replications;
    cfg.master_seed = seed;
    return cfg;
}

enum class ReplicationStatus { Ok, NotConverged, Failed };

struct ReplicationOutcome {
    ReplicationStatus status = ReplicationStatus::Failed;
    bool boundary = false;
    TestResult result;
};

inline constexpr int kStatistics = 3;

inline const char* statistic_name(int s) {
    static const char* names[] = {"LR", "LR*", "LR**"};
    return names[s];
}

struct LevelRates {
    double level = 0.0;
    double critical_value = 0.0;
    // Percent. `rate` keeps degenerate replications (LR fallback); `rate_excluding` drops them.
    double rate[kStatistics] = {0, 0, 0};
    double rate_excluding[kStatistics] = {0, 0, 0};
    int rejections[kStatistics] = {0, 0, 0};
    int rejections_excluding[kStatistics] = {0, 0, 0};
};

struct SimReport {
    int replications = 0;
    int used = 0;            // converged, tested
    int not_converged = 0;   // includes boundary estimates
    int boundary = 0;
    int failed = 0;          // other per-replication errors
    int degenerate = 0;
    int tiny_lr = 0;
    int non_positive_rho = 0;
    int negative_determinant = 0;
    std::vector<LevelRates> levels;
    std::vector<ReplicationOutcome> outcomes;  // indexed by replication
    double wall_seconds = 0.0;

    double degeneracy_fraction() const { return used == 0 ? 0.0 : static_cast<double>(degenerate) / used; }
    double non_convergence_fraction() const {
        return replications == 0 ? 0.0 : static_cast<double>(not_converged) / replications;
    }
};

// Stream for replication r: independent of thread count and execution order.
inline RandomStream replication_stream(std::uint64_t master_seed, std::uint64_t r) {
    return RandomStream(master_seed).split(r);
}

inline ReplicationOutcome run_replication(const SimConfig& cfg, int r) {
    ReplicationOutcome out;
    RandomStream rng = replication_stream(cfg.master_seed, static_cast<std::uint64_t>(r));
    FitOptions fit = cfg.fit;
    fit.seed = rng.split(1).key();
    try {
        const LikelihoodContext ctx(cfg.spec, cfg.generator, generate_dataset(cfg.spec, cfg.generator, cfg.theta_true, rng));
        out.result = test_hypothesis(ctx, cfg.hypothesis, fit, cfg.test).result;
        out.status = ReplicationStatus::Ok;
    } catch (const FitNotConverged& e) {
        out.status = ReplicationStatus::NotConverged;
        out.boundary = e.full().on_boundary || e.restricted().on_boundary;
    } catch (const Error&) {
        out.status = ReplicationStatus::Failed;
    }
    return out;
}

inline SimReport summarize(const SimConfig& cfg, std::vector<ReplicationOutcome> outcomes) {
    SimReport rep;
    rep.replications = static_cast<int>(outcomes.size());
    for (double g : cfg.levels) {
        LevelRates lr;
        lr.level = g;
        lr.critical_value = chi2_quantile(1.0 - g, cfg.hypothesis.q());
        rep.levels.push_back(lr);
    }
    for (const auto& o : outcomes) {
        if (o.status == ReplicationStatus::NotConverged) {
            ++rep.not_converged;
            rep.boundary += o.boundary;
            continue;
        }
        if (o.status == ReplicationStatus::Failed) {
            ++rep.failed;
            continue;
        }
        ++rep.used;
        const TestResult& t = o.result;
        const bool degenerate = t.degenerate != Degeneracy::None;
        rep.degenerate += degenerate;
        rep.tiny_lr += t.degenerate == Degeneracy::TinyLR;
        rep.non_positive_rho += t.degenerate == Degeneracy::NonPositiveRho;
        rep.negative_determinant += t.negative_determinant;
        const double stats[kStatistics] = {t.lr, t.lr_star, t.lr_star_star};
        for (auto& lv : rep.levels) {
            for (int s = 0; s < kStatistics; ++s) {
                const bool reject = stats[s] > lv.critical_value;
                lv.rejections[s] += reject;
                if (!degenerate || s == 0) lv.rejections_excluding[s] += reject;
            }
        }
    }
    const int kept = rep.used - rep.degenerate;
    for (auto& lv : rep.levels) {
        for (int s = 0; s < kStatistics; ++s) {
            lv.rate[s] = rep.used == 0 ? 0.0 : 100.0 * lv.rejections[s] / rep.used;
            const int denom = s == 0 ? rep.used : kept;
            lv.rate_excluding[s] = denom == 0 ? 0.0 : 100.0 * lv.rejections_excluding[s] / denom;
        }
    }
    rep.outcomes = std::move(outcomes);
    return rep;
}

inline SimReport rejection_study(const SimConfig& cfg) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    std::vector<ReplicationOutcome> outcomes(cfg.replications);
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int r = next.fetch_add(1); r < cfg.replications; r = next.fetch_add(1)) {
            outcomes[r] = run_replication(cfg, r);
        }
    };
    const int nthreads = std::min(cfg.threads, cfg.replications);
    if (nthreads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    SimReport rep = summarize(cfg, std::move(outcomes));
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

}  // namespace eiv
