#include <gtest/gtest.h>

#include <cmath>

#include "eivtest/montecarlo.hpp"
#include "support/fixtures.hpp"

using namespace eiv;

namespace {

Matrix sample_cov(const Matrix& z) {
    const Matrix c = z.rowwise() - z.colwise().mean();
    return c.transpose() * c / static_cast<double>(z.rows() - 1);
}

}  // namespace

TEST(GenerateDataset, MomentsMatchTheModel) {
    RandomStream rng(1);
    for (CaseKind kind : {CaseKind::LambdaXKnown, CaseKind::LambdaEKnown, CaseKind::InterceptKnown}) {
        const ModelSpec spec = eiv::testing::make_spec(kind, 2, {100000}, &rng);
        const ParamVector theta = eiv::testing::random_params(spec, rng);
        const auto gen = DensityGenerator::normal(3);
        const Matrix z = generate_dataset(spec, gen, theta, rng).groups[0];
        GroupModel gm(spec, 0);
        const Matrix sigma = gm.sigma(theta.group(0));
        EXPECT_LT((sample_cov(z) - sigma).norm() / sigma.norm(), 0.03) << to_string(kind);
        const Vector mu = gm.mu(theta.group(0));
        EXPECT_LT((Vector(z.colwise().mean().transpose()) - mu).cwiseAbs().maxCoeff(), 0.05) << to_string(kind);
    }
}

// The t latent vector has covariance nu/(nu-2) Sigma.
TEST(GenerateDataset, StudentTScale) {
    RandomStream rng(2);
    const ModelSpec spec = reference_spec(CaseKind::LambdaEKnown, 1, 200000);
    const ParamVector theta = reference_truth(spec);
    const Matrix z = generate_dataset(spec, DensityGenerator::student_t(2, 6.0), theta, rng).groups[0];
    const Matrix sigma = GroupModel(spec, 0).sigma(theta.group(0));
    EXPECT_LT((sample_cov(z) - 1.5 * sigma).norm() / sigma.norm(), 0.05);
}

TEST(GenerateDataset, TinyVariancesCollapseOnTheMean) {
    RandomStream rng(3);
    const ModelSpec spec = reference_spec(CaseKind::LambdaXKnown, 2, 50);
    ParamVector theta = reference_truth(spec);
    const ParamLayout& lay = spec.layout();
    for (int k = 0; k < 2; ++k) {
        theta[spec.flat_index(k, lay.sigma2_u)] = 1e-20;
        theta[spec.flat_index(k, lay.sigma2_e)] = 1e-20;
    }
    const Dataset data = generate_dataset(spec, DensityGenerator::normal(2), theta, rng);
    for (int k = 0; k < 2; ++k) {
        const Vector mu = GroupModel(spec, k).mu(theta.group(k));
        // sigma2_x = lambda_x sigma2_u shrinks with sigma2_u.
        EXPECT_LT((data.groups[k].rowwise() - mu.transpose()).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(GenerateDataset, SameSeedSameData) {
    const ModelSpec spec = reference_spec(CaseKind::LambdaEKnown, 3, 10);
    const auto gen = DensityGenerator::student_t(2, 3.0);
    RandomStream a(99), b(99), c(100);
    const Dataset da = generate_dataset(spec, gen, reference_truth(spec), a);
    const Dataset db = generate_dataset(spec, gen, reference_truth(spec), b);
    const Dataset dc = generate_dataset(spec, gen, reference_truth(spec), c);
    for (int k = 0; k < 3; ++k) {
        EXPECT_EQ(da.groups[k], db.groups[k]);
        EXPECT_NE(da.groups[k], dc.groups[k]);
    }
}

TEST(ReferenceConfig, TruthSatisfiesTheNull) {
    for (CaseKind kind : {CaseKind::LambdaXKnown, CaseKind::LambdaEKnown, CaseKind::InterceptKnown}) {
        const SimConfig cfg = reference_config(kind, Family::Normal, 3, 10, 5, 1);
        EXPECT_NO_THROW(cfg.validate());
        EXPECT_TRUE(cfg.hypothesis.satisfied_by(cfg.theta_true));
        EXPECT_EQ(cfg.spec.p(), 5);
    }
}

TEST(SimConfig, Validation) {
    SimConfig cfg = reference_config(CaseKind::LambdaXKnown, Family::Normal, 2, 10, 5, 1);
    cfg.replications = 0;
    EXPECT_THROW(rejection_study(cfg), DomainError);
    cfg.replications = 5;
    cfg.levels = {0.05, 1.0};
    EXPECT_THROW(cfg.validate(), DomainError);
    cfg.levels = {0.05};
    cfg.theta_true[0] = 0.3;
    EXPECT_THROW(cfg.validate(), DomainError);
    cfg.theta_true[0] = 0.0;
    cfg.threads = 0;
    EXPECT_THROW(cfg.validate(), DomainError);
}

TEST(RejectionStudy, DeterministicAcrossThreadCounts) {
    SimConfig cfg = reference_config(CaseKind::LambdaEKnown, Family::StudentT, 2, 10, 40, 7);
    cfg.threads = 1;
    const SimReport one = rejection_study(cfg);
    cfg.threads = 3;
    const SimReport three = rejection_study(cfg);
    ASSERT_EQ(one.outcomes.size(), three.outcomes.size());
    for (std::size_t r = 0; r < one.outcomes.size(); ++r) {
        EXPECT_EQ(one.outcomes[r].status, three.outcomes[r].status);
        EXPECT_EQ(one.outcomes[r].result.lr, three.outcomes[r].result.lr);
        EXPECT_EQ(one.outcomes[r].result.lr_star, three.outcomes[r].result.lr_star);
    }
    for (std::size_t i = 0; i < one.levels.size(); ++i) {
        for (int s = 0; s < kStatistics; ++s) EXPECT_EQ(one.levels[i].rate[s], three.levels[i].rate[s]);
    }
}

TEST(RejectionStudy, CountsAddUp) {
    const SimReport rep = rejection_study(reference_config(CaseKind::LambdaXKnown, Family::Normal, 2, 10, 30, 3));
    EXPECT_EQ(rep.replications, 30);
    EXPECT_EQ(rep.used + rep.not_converged + rep.failed, 30);
    EXPECT_LE(rep.boundary, rep.not_converged);
    EXPECT_EQ(rep.tiny_lr + rep.non_positive_rho, rep.degenerate);
    EXPECT_GT(rep.used, 20);
}

TEST(Summarize, Arithmetic) {
    SimConfig cfg = reference_config(CaseKind::LambdaXKnown, Family::Normal, 1, 10, 6, 1);
    cfg.levels = {0.05};
    const double crit = chi2_quantile(0.95, 1);
    auto ok = [](double lr, double star, double star2, Degeneracy d = Degeneracy::None) {
        ReplicationOutcome o;
        o.status = ReplicationStatus::Ok;
        o.result.lr = lr;
        o.result.lr_star = star;
        o.result.lr_star_star = star2;
        o.result.degenerate = d;
        return o;
    };
    std::vector<ReplicationOutcome> outs{
        ok(5.0, 5.0, 3.0),
        ok(1.0, 1.0, 1.0),
        ok(4.5, 4.5, 4.5, Degeneracy::NonPositiveRho),
        ok(0.0, 0.0, 0.0, Degeneracy::TinyLR),
    };
    ReplicationOutcome nc;
    nc.status = ReplicationStatus::NotConverged;
    nc.boundary = true;
    outs.push_back(nc);
    outs.push_back(ReplicationOutcome{});
    ASSERT_GT(5.0, crit);
    ASSERT_GT(4.5, crit);
    ASSERT_LT(3.0, crit);

    const SimReport rep = summarize(cfg, outs);
    EXPECT_EQ(rep.used, 4);
    EXPECT_EQ(rep.not_converged, 1);
    EXPECT_EQ(rep.boundary, 1);
    EXPECT_EQ(rep.failed, 1);
    EXPECT_EQ(rep.degenerate, 2);
    EXPECT_EQ(rep.tiny_lr, 1);
    EXPECT_EQ(rep.non_positive_rho, 1);
    const LevelRates& lv = rep.levels[0];
    EXPECT_NEAR(lv.critical_value, crit, 1e-12);
    EXPECT_DOUBLE_EQ(lv.rate[0], 50.0);
    EXPECT_DOUBLE_EQ(lv.rate[1], 50.0);
    EXPECT_DOUBLE_EQ(lv.rate[2], 25.0);
    EXPECT_DOUBLE_EQ(lv.rate_excluding[0], 50.0);
    EXPECT_DOUBLE_EQ(lv.rate_excluding[1], 50.0);
    EXPECT_DOUBLE_EQ(lv.rate_excluding[2], 0.0);
    EXPECT_DOUBLE_EQ(rep.degeneracy_fraction(), 0.5);
    EXPECT_NEAR(rep.non_convergence_fraction(), 1.0 / 6.0, 1e-15);
}
