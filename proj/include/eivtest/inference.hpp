#pragma once

// Full and restricted fits followed by the adjusted likelihood-ratio test.

#include <optional>

#include "eivtest/chi2.hpp"
#include "eivtest/fit.hpp"
#include "eivtest/skovgaard.hpp"

namespace eiv {

struct HypothesisTest {
    FitResult full;
    FitResult restricted;
    TestResult result;
};

// Throws FitNotConverged if either fit fails. When the restricted optimum
// beats the full one, the full fit is restarted from it.
inline HypothesisTest test_hypothesis(const LikelihoodContext& ctx, const Hypothesis& h, const FitOptions& fit_opt = {},
                                      const TestOptions& test_opt = {}) {
    h.validate(ctx.spec());
    HypothesisTest out;
    out.full = fit_mle(ctx, default_init(ctx), std::nullopt, fit_opt);
    if (!out.full.converged) throw FitNotConverged(out.full, out.restricted);
    ParamVector start = out.full.theta;
    h.apply(start);
    out.restricted = fit_mle(ctx, start, h, fit_opt);
    if (out.restricted.converged && out.restricted.loglik > out.full.loglik) {
        // The full fit stopped at a lower local maximum; climb again from the restricted optimum.
        FitResult again = fit_mle(ctx, out.restricted.theta, std::nullopt, fit_opt);
        if (again.converged && again.loglik > out.full.loglik) {
            again.iterations += out.full.iterations;
            out.full = std::move(again);
        }
    }
    out.result = run_test(ctx, h, out.full, out.restricted, test_opt);
    return out;
}

}  // namespace eiv
