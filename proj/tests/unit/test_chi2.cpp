#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "eivtest/chi2.hpp"

using namespace eiv;

TEST(Chi2, Endpoints) {
    for (int q = 1; q <= 6; ++q) {
        EXPECT_EQ(chi2_cdf(0.0, q), 0.0);
        EXPECT_EQ(chi2_cdf(std::numeric_limits<double>::infinity(), q), 1.0);
        EXPECT_EQ(chi2_sf(0.0, q), 1.0);
        EXPECT_GT(chi2_cdf(1e4, q), 1.0 - 1e-15);
    }
}

TEST(Chi2, TableQuantiles) {
    EXPECT_NEAR(chi2_quantile(0.95, 3), 7.8147, 1e-4);
    EXPECT_NEAR(chi2_quantile(0.95, 1), 3.8415, 1e-4);
    EXPECT_NEAR(chi2_quantile(0.99, 2), 9.2103, 1e-4);
    EXPECT_NEAR(chi2_quantile(0.90, 5), 9.2364, 1e-4);
}

// q = 2 is exponential with mean 2; q = 1 is a squared standard normal.
TEST(Chi2, ClosedFormsForSmallDegrees) {
    for (double x : {0.01, 0.5, 1.0, 3.0, 10.0, 40.0}) {
        EXPECT_NEAR(chi2_cdf(x, 2), -std::expm1(-x / 2), 1e-15);
        EXPECT_NEAR(chi2_sf(x, 2), std::exp(-x / 2), 1e-15 * std::max(1.0, std::exp(-x / 2)));
        EXPECT_NEAR(chi2_cdf(x, 1), std::erf(std::sqrt(x / 2)), 1e-14);
    }
}

TEST(Chi2, RoundTrip) {
    for (int q = 1; q <= 10; ++q) {
        for (double p : {1e-6, 0.01, 0.05, 0.3, 0.5, 0.9, 0.95, 0.99, 1 - 1e-6}) {
            EXPECT_NEAR(chi2_cdf(chi2_quantile(p, q), q), p, 1e-9) << q << " " << p;
        }
    }
}

TEST(Chi2, DomainErrors) {
    EXPECT_THROW(chi2_cdf(-1.0, 2), DomainError);
    EXPECT_THROW(chi2_cdf(1.0, 0), DomainError);
    EXPECT_THROW(chi2_quantile(0.0, 2), DomainError);
    EXPECT_THROW(chi2_quantile(1.0, 2), DomainError);
    EXPECT_THROW(chi2_sf(std::nan(""), 2), DomainError);
}
