#pragma once

// Quasi-Newton minimization with a strong-Wolfe line search.
//
// The objective is a callable `double f(const Vector& x, Vector& grad)`.
// Returning +inf (or throwing EvaluationError) marks x as infeasible; the
// line search then shrinks the step.

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "eivtest/errors.hpp"
#include "eivtest/linalg.hpp"

namespace eiv {

struct BfgsOptions {
    int max_iterations = 500;
    // Stop when max |grad| <= gradient_tolerance * (1 + |f|).
    double gradient_tolerance = 1e-6;
    double c1 = 1e-4;
    double c2 = 0.9;
    int max_line_search = 40;
};

struct BfgsResult {
    Vector x;
    double value = std::numeric_limits<double>::infinity();
    Vector gradient;
    int iterations = 0;
    bool converged = false;
};

namespace detail {

template <class F>
double safe_eval(F& f, const Vector& x, Vector& grad) {
    try {
        const double v = f(x, grad);
        if (!std::isfinite(v) || !grad.allFinite()) return std::numeric_limits<double>::infinity();
        return v;
    } catch (const EvaluationError&) {
        return std::numeric_limits<double>::infinity();
    }
}

// Minimizer of the cubic through (a, fa, ga) and (b, fb, gb), safeguarded
// to the interior of [a, b].
inline double cubic_step(double a, double fa, double ga, double b, double fb, double gb) {
    const double lo = std::min(a, b), hi = std::max(a, b);
    const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    const double disc = d1 * d1 - ga * gb;
    double t = 0.5 * (a + b);
    if (disc >= 0.0 && std::isfinite(disc)) {
        const double d2 = std::copysign(std::sqrt(disc), b - a);
        const double c = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
        if (std::isfinite(c)) t = c;
    }
    const double margin = 0.1 * (hi - lo);
    return std::clamp(t, lo + margin, hi - margin);
}

struct LinePoint {
    double t = 0.0;
    double f = 0.0;
    double slope = 0.0;
    Vector x;
    Vector grad;
};

// Strong-Wolfe search along d from x0; returns false if no acceptable step.
template <class F>
bool wolfe_search(F& f, const Vector& x0, double f0, double slope0, const Vector& d, double t_init,
                  const BfgsOptions& opt, LinePoint& out) {
    LinePoint prev{0.0, f0, slope0, x0, Vector()};
    double t = t_init;
    Vector grad(x0.size());
    auto eval = [&](double step) {
        LinePoint p;
        p.t = step;
        p.x = x0 + step * d;
        p.f = safe_eval(f, p.x, grad);
        p.grad = grad;
        p.slope = std::isfinite(p.f) ? grad.dot(d) : std::numeric_limits<double>::quiet_NaN();
        return p;
    };

    auto zoom = [&](LinePoint lo, LinePoint hi, int budget) {
        for (int it = 0; it < budget; ++it) {
            double tj;
            if (std::isfinite(hi.f) && std::isfinite(hi.slope)) {
                tj = cubic_step(lo.t, lo.f, lo.slope, hi.t, hi.f, hi.slope);
            } else {
                tj = lo.t + 0.5 * (hi.t - lo.t);
            }
            LinePoint pj = eval(tj);
            if (!std::isfinite(pj.f) || pj.f > f0 + opt.c1 * tj * slope0 || pj.f >= lo.f) {
                hi = std::move(pj);
            } else {
                if (std::abs(pj.slope) <= -opt.c2 * slope0) {
                    out = std::move(pj);
                    return true;
                }
                if (pj.slope * (hi.t - lo.t) >= 0.0) hi = lo;
                lo = std::move(pj);
            }
            if (std::abs(hi.t - lo.t) <= 1e-16 * std::max(1.0, lo.t)) break;
        }
        // Settle for sufficient decrease if the curvature condition never held.
        if (lo.t > 0.0 && lo.f < f0) {
            out = std::move(lo);
            return true;
        }
        return false;
    };

    for (int it = 0; it < opt.max_line_search; ++it) {
        LinePoint cur = eval(t);
        if (!std::isfinite(cur.f)) {
            if (prev.t > 0.0) return zoom(prev, cur, opt.max_line_search - it);
            t *= 0.25;
            continue;
        }
        if (cur.f > f0 + opt.c1 * t * slope0 || (it > 0 && prev.t > 0.0 && cur.f >= prev.f)) {
            return zoom(prev, cur, opt.max_line_search - it);
        }
        if (std::abs(cur.slope) <= -opt.c2 * slope0) {
            out = std::move(cur);
            return true;
        }
        if (cur.slope >= 0.0) return zoom(cur, prev, opt.max_line_search - it);
        prev = std::move(cur);
        t *= 2.0;
    }
    return false;
}

}  // namespace detail

template <class F>
BfgsResult bfgs_minimize(F&& f, Vector x0, const BfgsOptions& opt = {}) {
    const Eigen::Index n = x0.size();
    BfgsResult res;
    res.x = std::move(x0);
    res.gradient = Vector::Zero(n);
    res.value = detail::safe_eval(f, res.x, res.gradient);
    if (!std::isfinite(res.value)) return res;

    auto converged = [&] {
        return n == 0 || res.gradient.cwiseAbs().maxCoeff() <= opt.gradient_tolerance * (1.0 + std::abs(res.value));
    };
    if (converged()) {
        res.converged = true;
        return res;
    }

    Matrix h = Matrix::Identity(n, n);
    bool fresh = true;
    for (int iter = 0; iter < opt.max_iterations; ++iter) {
        Vector d = -h * res.gradient;
        double slope = d.dot(res.gradient);
        if (!(slope < 0.0)) {
            h.setIdentity();
            fresh = true;
            d = -res.gradient;
            slope = d.dot(res.gradient);
        }
        const double t0 = fresh ? std::min(1.0, 1.0 / std::max(1e-12, d.cwiseAbs().maxCoeff())) : 1.0;
        detail::LinePoint next;
        if (!detail::wolfe_search(f, res.x, res.value, slope, d, t0, opt, next)) {
            if (fresh) break;
            h.setIdentity();
            fresh = true;
            continue;
        }
        const Vector s = next.x - res.x;
        const Vector y = next.grad - res.gradient;
        res.x = std::move(next.x);
        res.value = next.f;
        res.gradient = std::move(next.grad);
        res.iterations = iter + 1;
        if (converged()) {
            res.converged = true;
            return res;
        }
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            if (fresh) h *= sy / y.squaredNorm();
            const double r = 1.0 / sy;
            const Vector hy = h * y;
            h += (r * r * y.dot(hy) + r) * (s * s.transpose()) - r * (hy * s.transpose() + s * hy.transpose());
            fresh = false;
        }
    }
    res.converged = converged();
    return res;
}

}  // namespace eiv
