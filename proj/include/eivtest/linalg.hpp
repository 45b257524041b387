#pragma once

// Small dense kernels for the (l+1)-dimensional dispersion matrices:
// Cholesky factorization, its forward-mode derivative, triangular solves
// and log-determinants.

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "eivtest/errors.hpp"

namespace eiv {

inline constexpr int kMaxObsDim = 8;

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// Heap-free storage for observation-sized objects (dimension <= kMaxObsDim).
using SmallVector = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxObsDim, 1>;
using SmallMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxObsDim, kMaxObsDim>;

inline constexpr double kSymmetryTolerance = 1e-10;

// Lower-triangular P with positive diagonal and P P^T = Sigma.
class CholeskyFactor {
public:
    const SmallMatrix& matrix() const noexcept { return lower_; }
    int dim() const noexcept { return static_cast<int>(lower_.rows()); }

private:
    explicit CholeskyFactor(SmallMatrix lower) : lower_(std::move(lower)) {}
    friend CholeskyFactor cholesky(const SmallMatrix& sigma);

    SmallMatrix lower_;
};

inline void require_square(const SmallMatrix& m, const char* what) {
    if (m.rows() != m.cols()) {
        throw DomainError(std::string(what) + ": matrix is not square");
    }
    if (m.rows() > kMaxObsDim) {
        throw DomainError(std::string(what) + ": dimension exceeds " + std::to_string(kMaxObsDim));
    }
}

// Symmetrizes within kSymmetryTolerance (relative to the largest entry)
// before factoring.
inline CholeskyFactor cholesky(const SmallMatrix& sigma) {
    require_square(sigma, "cholesky");
    const int n = static_cast<int>(sigma.rows());
    const double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
    if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > kSymmetryTolerance * scale) {
        throw DomainError("cholesky: matrix is not symmetric");
    }
    const SmallMatrix a = 0.5 * (sigma + sigma.transpose());
    SmallMatrix lower = SmallMatrix::Zero(n, n);
    for (int j = 0; j < n; ++j) {
        double pivot = a(j, j);
        for (int k = 0; k < j; ++k) {
            pivot -= lower(j, k) * lower(j, k);
        }
        if (!(pivot > 0.0) || !std::isfinite(pivot)) {
            throw NotPositiveDefinite(j);
        }
        const double ljj = std::sqrt(pivot);
        lower(j, j) = ljj;
        for (int i = j + 1; i < n; ++i) {
            double v = a(i, j);
            for (int k = 0; k < j; ++k) {
                v -= lower(i, k) * lower(j, k);
            }
            lower(i, j) = v / ljj;
        }
    }
    return CholeskyFactor(std::move(lower));
}

// Derivative of the Cholesky factor along a symmetric direction dSigma,
// by differentiating the factorization recurrences column by column
// (forward mode). The result satisfies dP P^T + P dP^T = dSigma.
inline SmallMatrix d_cholesky(const CholeskyFactor& factor, const SmallMatrix& d_sigma) {
    const SmallMatrix& l = factor.matrix();
    const int n = factor.dim();
    if (d_sigma.rows() != n || d_sigma.cols() != n) {
        throw DomainError("d_cholesky: dimension mismatch");
    }
    SmallMatrix dl = SmallMatrix::Zero(n, n);
    for (int j = 0; j < n; ++j) {
        double acc = d_sigma(j, j);
        for (int k = 0; k < j; ++k) {
            acc -= 2.0 * l(j, k) * dl(j, k);
        }
        dl(j, j) = acc / (2.0 * l(j, j));
        for (int i = j + 1; i < n; ++i) {
            double v = 0.5 * (d_sigma(i, j) + d_sigma(j, i));
            for (int k = 0; k < j; ++k) {
                v -= dl(i, k) * l(j, k) + l(i, k) * dl(j, k);
            }
            v -= l(i, j) * dl(j, j);
            dl(i, j) = v / l(j, j);
        }
    }
    return dl;
}

// Solves P x = rhs by forward substitution; rhs may have several columns.
template <class Derived>
auto solve_lower(const CholeskyFactor& factor, const Eigen::MatrixBase<Derived>& rhs) {
    if (rhs.rows() != factor.dim()) {
        throw DomainError("solve_lower: dimension mismatch");
    }
    using Result = Eigen::Matrix<double, Eigen::Dynamic, Derived::ColsAtCompileTime, Eigen::ColMajor,
                                 kMaxObsDim, Derived::MaxColsAtCompileTime>;
    Result x = rhs;
    const SmallMatrix& l = factor.matrix();
    const int n = factor.dim();
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        for (int i = 0; i < n; ++i) {
            double v = x(i, c);
            for (int k = 0; k < i; ++k) {
                v -= l(i, k) * x(k, c);
            }
            x(i, c) = v / l(i, i);
        }
    }
    return x;
}

// Solves P^T x = rhs by back substitution.
template <class Derived>
auto solve_upper(const CholeskyFactor& factor, const Eigen::MatrixBase<Derived>& rhs) {
    if (rhs.rows() != factor.dim()) {
        throw DomainError("solve_upper: dimension mismatch");
    }
    using Result = Eigen::Matrix<double, Eigen::Dynamic, Derived::ColsAtCompileTime, Eigen::ColMajor,
                                 kMaxObsDim, Derived::MaxColsAtCompileTime>;
    Result x = rhs;
    const SmallMatrix& l = factor.matrix();
    const int n = factor.dim();
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        for (int i = n - 1; i >= 0; --i) {
            double v = x(i, c);
            for (int k = i + 1; k < n; ++k) {
                v -= l(k, i) * x(k, c);
            }
            x(i, c) = v / l(i, i);
        }
    }
    return x;
}

// Sigma^{-1} = P^{-T} P^{-1}; symmetric by construction.
inline SmallMatrix inverse_spd(const CholeskyFactor& factor) {
    const int n = factor.dim();
    const SmallMatrix linv = solve_lower(factor, SmallMatrix::Identity(n, n));
    SmallMatrix inv = linv.transpose() * linv;
    return 0.5 * (inv + inv.transpose());
}

inline double log_det(const CholeskyFactor& factor) {
    return 2.0 * factor.matrix().diagonal().array().log().sum();
}

}  // namespace eiv
