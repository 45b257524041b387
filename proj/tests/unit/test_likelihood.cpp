#include <gtest/gtest.h>

#include <numbers>

#include <boost/math/special_functions/gamma.hpp>

#include "eivtest/likelihood.hpp"
#include "support/fixtures.hpp"

using namespace eiv;
using eiv::testing::make_spec;
using eiv::testing::random_dataset;
using eiv::testing::random_params;
using eiv::testing::rel_err;

namespace {

const CaseKind kAllCases[] = {CaseKind::LambdaXKnown, CaseKind::LambdaEKnown, CaseKind::InterceptKnown};

DensityGenerator generator(bool t, int dim) {
    return t ? DensityGenerator::student_t(dim, 3.0) : DensityGenerator::normal(dim);
}

// Direct multivariate density evaluation through Eigen's own factorization.
double oracle_loglik(const LikelihoodContext& ctx, const ParamVector& theta) {
    const ModelSpec& spec = ctx.spec();
    const double d = spec.obs_dim();
    double total = 0.0;
    for (int k = 0; k < spec.p(); ++k) {
        GroupModel gm(spec, k);
        const Vector mu = gm.mu(theta.group(k));
        const Matrix sigma = gm.sigma(theta.group(k));
        const Matrix inv = sigma.inverse();
        const double logdet = std::log(sigma.determinant());
        const Matrix& z = ctx.data().groups[k];
        for (Eigen::Index j = 0; j < z.rows(); ++j) {
            const Vector r = z.row(j).transpose() - mu;
            const double q = r.dot(inv * r);
            if (ctx.generator().family() == Family::Normal) {
                total += -0.5 * d * std::log(2 * std::numbers::pi) - 0.5 * logdet - 0.5 * q;
            } else {
                const double nu = ctx.generator().dof();
                total += boost::math::lgamma((nu + d) / 2) - boost::math::lgamma(nu / 2) -
                         0.5 * d * std::log(nu * std::numbers::pi) - 0.5 * logdet - 0.5 * (nu + d) * std::log1p(q / nu);
            }
        }
    }
    return total;
}

struct Fixture {
    ModelSpec spec;
    LikelihoodContext ctx;
    ParamVector theta;
};

Fixture make_fixture(CaseKind kind, bool t, int l, RandomStream& rng) {
    ModelSpec spec = make_spec(kind, l, {6, 9, 5}, &rng);
    const ParamVector truth = random_params(spec, rng);
    const auto gen = generator(t, l + 1);
    Dataset data = random_dataset(spec, gen, truth, rng);
    LikelihoodContext ctx(spec, gen, std::move(data));
    ParamVector at = random_params(spec, rng);
    return {spec, std::move(ctx), at};
}

}  // namespace

TEST(Loglik, SingleObservationAtTheMean) {
    const ModelSpec spec(1, {1}, LambdaXKnown{{1.0}});
    // beta = 0, alpha = 0.3, mu_x = -0.2, sigma2_u = 0.5 -> sigma2_x = 0.5, corner 1; sigma2_e = 1
    ParamVector theta(Vector{{0.0, 0.3, -0.2, 0.5, 1.0}}, 5);
    Dataset data{{Matrix{{0.3, -0.2}}}};
    LikelihoodContext ctx(spec, DensityGenerator::normal(2), data);
    EXPECT_NEAR(loglik(ctx, theta), -std::log(2 * std::numbers::pi), 1e-14);
}

TEST(Loglik, AgreesWithDirectDensityEvaluation) {
    RandomStream rng(31);
    for (CaseKind kind : kAllCases) {
        for (bool t : {false, true}) {
            for (int l : {1, 3}) {
                const Fixture f = make_fixture(kind, t, l, rng);
                EXPECT_NEAR(loglik(f.ctx, f.theta), oracle_loglik(f.ctx, f.theta), 1e-10 * std::max(1.0, std::abs(oracle_loglik(f.ctx, f.theta))));
            }
        }
    }
}

// Z -> cZ with mu -> c mu and Sigma -> c^2 Sigma shifts the log-likelihood by -n(l+1) log c.
TEST(Loglik, ChangeOfVariables) {
    RandomStream rng(32);
    const double c = 2.5;
    for (CaseKind kind : kAllCases) {
        const ModelSpec spec = kind == CaseKind::InterceptKnown ? ModelSpec(2, {7, 4}, InterceptKnown{{{0.0, 0.0}, {0.0, 0.0}}})
                                                                 : make_spec(kind, 2, {7, 4}, &rng);
        const ParamVector theta = random_params(spec, rng);
        const auto gen = DensityGenerator::student_t(3, 4.0);
        Dataset data = random_dataset(spec, gen, theta, rng);
        const LikelihoodContext ctx(spec, gen, data);
        ParamVector scaled = theta;
        const ParamLayout& lay = spec.layout();
        for (int k = 0; k < spec.p(); ++k) {
            for (int i = 0; i < spec.s(); ++i) {
                double& v = scaled[spec.flat_index(k, i)];
                if (lay.is_variance(i)) v *= c * c;
                else if (i == lay.alpha || i == lay.mu_x) v *= c;
            }
        }
        for (auto& g : data.groups) g *= c;
        const LikelihoodContext ctx2(spec, gen, data);
        const double n = spec.total_size();
        EXPECT_NEAR(loglik(ctx2, scaled), loglik(ctx, theta) - n * 3 * std::log(c), 1e-9);
    }
}

TEST(Loglik, InvalidParametersRaise) {
    RandomStream rng(33);
    Fixture f = make_fixture(CaseKind::LambdaXKnown, false, 1, rng);
    ParamVector bad = f.theta;
    bad[f.spec.layout().sigma2_u] = -1.0;
    EXPECT_THROW(loglik(f.ctx, bad), EvaluationError);
}

TEST(Score, MatchesFiniteDifferences) {
    RandomStream rng(34);
    for (CaseKind kind : kAllCases) {
        for (bool t : {false, true}) {
            for (int rep = 0; rep < 20; ++rep) {
                const Fixture f = make_fixture(kind, t, 1 + rep % 2, rng);
                const int s = f.spec.s();
                auto fn = [&](const Vector& x) { return loglik(f.ctx, ParamVector(x, s)); };
                const Vector fd = eiv::testing::fd_gradient(fn, f.theta.values);
                const auto [value, grad] = loglik_and_score(f.ctx, f.theta);
                EXPECT_NEAR(value, loglik(f.ctx, f.theta), 1e-12 * std::max(1.0, std::abs(value)));
                EXPECT_LT(rel_err(grad, fd), 1e-5) << to_string(kind) << " t=" << t;
            }
        }
    }
}

// Gaussian score written from scratch: -n/2 tr(S^-1 S_i) + 1/2 sum d^T S^-1 S_i S^-1 d + sum mu_i^T S^-1 d.
TEST(Score, GaussianClosedForm) {
    RandomStream rng(35);
    for (CaseKind kind : kAllCases) {
        const Fixture f = make_fixture(kind, false, 2, rng);
        const ModelSpec& spec = f.spec;
        Vector expected = Vector::Zero(spec.m());
        for (int k = 0; k < spec.p(); ++k) {
            GroupModel gm(spec, k);
            const auto th = f.theta.group(k);
            const Matrix inv = Matrix(gm.sigma(th)).inverse();
            const Vector mu = gm.mu(th);
            const Matrix& z = f.ctx.data().groups[k];
            for (int i = 0; i < spec.s(); ++i) {
                const Matrix si = gm.d_sigma(th, i);
                const Vector mi = gm.d_mu(th, i);
                double g = -0.5 * z.rows() * (inv * si).trace();
                for (Eigen::Index j = 0; j < z.rows(); ++j) {
                    const Vector d = z.row(j).transpose() - mu;
                    g += 0.5 * d.dot(inv * si * inv * d) + mi.dot(inv * d);
                }
                expected[spec.flat_index(k, i)] = g;
            }
        }
        EXPECT_LT(rel_err(score(f.ctx, f.theta), expected), 1e-10);
    }
}

TEST(ObservedInfo, MatchesFiniteDifferenceHessian) {
    RandomStream rng(36);
    for (CaseKind kind : kAllCases) {
        for (bool t : {false, true}) {
            for (int rep = 0; rep < 20; ++rep) {
                const Fixture f = make_fixture(kind, t, 1 + rep % 2, rng);
                const int s = f.spec.s();
                auto grad = [&](const Vector& x) { return score(f.ctx, ParamVector(x, s)); };
                const Matrix hess = eiv::testing::fd_jacobian(grad, f.theta.values);
                const Matrix info = observed_info(f.ctx, f.theta);
                EXPECT_LT(rel_err(info, -hess), 1e-4) << to_string(kind) << " t=" << t;
                EXPECT_EQ(info, info.transpose());
            }
        }
    }
}

TEST(ObservedInfo, SecondDifferencesOfLoglik) {
    RandomStream rng(37);
    const Fixture f = make_fixture(CaseKind::LambdaEKnown, true, 1, rng);
    const int m = f.spec.m();
    const Matrix info = observed_info(f.ctx, f.theta);
    const double h = 1e-4;
    auto ll = [&](Vector x) { return loglik(f.ctx, ParamVector(std::move(x), f.spec.s())); };
    for (int i = 0; i < m; i += 3) {
        for (int j = 0; j < m; j += 2) {
            Vector x = f.theta.values;
            auto at = [&](double a, double b) {
                Vector y = x;
                y[i] += a;
                y[j] += b;
                return ll(y);
            };
            const double fd = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4 * h * h);
            EXPECT_NEAR(info(i, j), -fd, 1e-3 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST(ObservedInfo, BlockDiagonalAcrossGroups) {
    RandomStream rng(38);
    const Fixture f = make_fixture(CaseKind::InterceptKnown, true, 2, rng);
    const Matrix info = observed_info(f.ctx, f.theta);
    const int s = f.spec.s();
    for (int a = 0; a < f.spec.p(); ++a) {
        for (int b = 0; b < f.spec.p(); ++b) {
            if (a != b) EXPECT_EQ(info.block(a * s, b * s, s, s).cwiseAbs().maxCoeff(), 0.0);
        }
    }
}
