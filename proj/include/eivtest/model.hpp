#pragma once

// Structural errors-in-variables model with p independent groups:
//
//   Y_jk = alpha_k 1 + beta_k x_jk + e_jk,   X_jk = x_jk + u_jk,
//
// observed as Z_jk = (Y_jk, X_jk) ~ El_{l+1}(mu_k, Sigma_k; p0) with
//
//   mu_k    = (alpha_k 1 + beta_k mu_x, mu_x)
//   Sigma_k = sigma2_x c c^T + diag(Sigma_e, sigma2_u),   c = (beta_k, 1).
//
// One of three constraints makes the group identifiable; each fixes the
// per-group coordinate layout below (0-based, slopes first).
//
//   LambdaXKnown   (beta_1..l, alpha, mu_x, sigma2_u, sigma2_e1..l)   s = 2l+3
//   LambdaEKnown   (beta_1..l, alpha, mu_x, sigma2_x, sigma2_u)       s = l+4
//   InterceptKnown (beta_1..l, mu_x, sigma2_x, sigma2_u, sigma2_e1..l) s = 2l+3
//
// The intercept is a single scalar shared by the l responses.

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "eivtest/errors.hpp"
#include "eivtest/linalg.hpp"

namespace eiv {

enum class CaseKind { LambdaXKnown, LambdaEKnown, InterceptKnown };

inline std::string to_string(CaseKind kind) {
    switch (kind) {
        case CaseKind::LambdaXKnown: return "lambda_x";
        case CaseKind::LambdaEKnown: return "lambda_e";
        case CaseKind::InterceptKnown: return "intercept";
    }
    return "?";
}

// lambda_x = sigma2_x / sigma2_u, one value per group.
struct LambdaXKnown {
    std::vector<double> lambda_x;
};
// lambda_e,i = sigma2_e,i / sigma2_u, l values per group.
struct LambdaEKnown {
    std::vector<std::vector<double>> lambda_e;
};
// Known intercept vector (l values) per group.
struct InterceptKnown {
    std::vector<std::vector<double>> alpha;
};

using Identifiability = std::variant<LambdaXKnown, LambdaEKnown, InterceptKnown>;

// Index map of one group block.
struct ParamLayout {
    CaseKind kind = CaseKind::LambdaXKnown;
    int l = 1;
    int s = 0;
    int alpha = -1;      // scalar intercept, absent for InterceptKnown
    int mu_x = -1;
    int sigma2_x = -1;   // absent for LambdaXKnown
    int sigma2_u = -1;
    int sigma2_e = -1;   // first of l error variances, absent for LambdaEKnown

    static ParamLayout make(CaseKind kind, int l) {
        ParamLayout p;
        p.kind = kind;
        p.l = l;
        switch (kind) {
            case CaseKind::LambdaXKnown:
                p.alpha = l;
                p.mu_x = l + 1;
                p.sigma2_u = l + 2;
                p.sigma2_e = l + 3;
                p.s = 2 * l + 3;
                break;
            case CaseKind::LambdaEKnown:
                p.alpha = l;
                p.mu_x = l + 1;
                p.sigma2_x = l + 2;
                p.sigma2_u = l + 3;
                p.s = l + 4;
                break;
            case CaseKind::InterceptKnown:
                p.mu_x = l;
                p.sigma2_x = l + 1;
                p.sigma2_u = l + 2;
                p.sigma2_e = l + 3;
                p.s = 2 * l + 3;
                break;
        }
        return p;
    }

    bool is_slope(int i) const { return i >= 0 && i < l; }
    bool is_variance(int i) const {
        return i == sigma2_x || i == sigma2_u || (sigma2_e >= 0 && i >= sigma2_e && i < sigma2_e + l);
    }
    // Coordinate that multiplies sigma2_x: sigma2_u when lambda_x is known.
    int scale_index() const { return kind == CaseKind::LambdaXKnown ? sigma2_u : sigma2_x; }

    std::string name(int i) const {
        if (is_slope(i)) return "beta" + std::to_string(i + 1);
        if (i == alpha) return "alpha";
        if (i == mu_x) return "mu_x";
        if (i == sigma2_x) return "sigma2_x";
        if (i == sigma2_u) return "sigma2_u";
        if (sigma2_e >= 0 && i >= sigma2_e && i < sigma2_e + l) return "sigma2_e" + std::to_string(i - sigma2_e + 1);
        throw DomainError("coordinate index out of range");
    }

    // Accepts the names above; with l = 1 also "beta" and "sigma2_e".
    std::optional<int> find(std::string_view nm) const {
        for (int i = 0; i < s; ++i) {
            if (name(i) == nm) return i;
        }
        if (l == 1 && nm == "beta") return 0;
        if (l == 1 && nm == "sigma2_e" && sigma2_e >= 0) return sigma2_e;
        return std::nullopt;
    }
};

class ModelSpec {
public:
    ModelSpec(int l, std::vector<int> group_sizes, Identifiability ident)
        : l_(l), sizes_(std::move(group_sizes)), ident_(std::move(ident)) {
        if (l_ < 1 || l_ + 1 > kMaxObsDim) {
            throw DomainError("response dimension l must be in [1, " + std::to_string(kMaxObsDim - 1) + "]");
        }
        if (sizes_.empty()) {
            throw DomainError("model needs at least one group");
        }
        for (int n : sizes_) {
            if (n < 1) throw DomainError("group sizes must be positive");
        }
        const auto p = sizes_.size();
        std::visit(
            [&](const auto& c) {
                using T = std::decay_t<decltype(c)>;
                if constexpr (std::is_same_v<T, LambdaXKnown>) {
                    kind_ = CaseKind::LambdaXKnown;
                    if (c.lambda_x.size() != p) throw DomainError("lambda_x needs one value per group");
                    for (double v : c.lambda_x) {
                        if (!(v > 0.0)) throw DomainError("lambda_x must be positive");
                    }
                } else if constexpr (std::is_same_v<T, LambdaEKnown>) {
                    kind_ = CaseKind::LambdaEKnown;
                    if (c.lambda_e.size() != p) throw DomainError("lambda_e needs one vector per group");
                    for (const auto& g : c.lambda_e) {
                        if (static_cast<int>(g.size()) != l_) throw DomainError("lambda_e vectors need l values");
                        for (double v : g) {
                            if (!(v > 0.0)) throw DomainError("lambda_e must be positive");
                        }
                    }
                } else {
                    kind_ = CaseKind::InterceptKnown;
                    if (c.alpha.size() != p) throw DomainError("known intercept needs one vector per group");
                    for (const auto& g : c.alpha) {
                        if (static_cast<int>(g.size()) != l_) throw DomainError("known intercept vectors need l values");
                    }
                }
            },
            ident_);
        layout_ = ParamLayout::make(kind_, l_);
    }

    int l() const noexcept { return l_; }
    int p() const noexcept { return static_cast<int>(sizes_.size()); }
    int s() const noexcept { return layout_.s; }
    int m() const noexcept { return p() * s(); }
    int obs_dim() const noexcept { return l_ + 1; }
    int group_size(int k) const { return sizes_.at(k); }
    const std::vector<int>& group_sizes() const noexcept { return sizes_; }
    int total_size() const {
        int n = 0;
        for (int v : sizes_) n += v;
        return n;
    }
    CaseKind kind() const noexcept { return kind_; }
    const Identifiability& identifiability() const noexcept { return ident_; }
    const ParamLayout& layout() const noexcept { return layout_; }
    int flat_index(int k, int local) const { return k * s() + local; }

    double lambda_x(int k) const { return std::get<LambdaXKnown>(ident_).lambda_x.at(k); }
    const std::vector<double>& lambda_e(int k) const { return std::get<LambdaEKnown>(ident_).lambda_e.at(k); }
    const std::vector<double>& known_alpha(int k) const { return std::get<InterceptKnown>(ident_).alpha.at(k); }

    // Same geometry and constraint with different group sizes.
    ModelSpec with_group_sizes(std::vector<int> sizes) const { return ModelSpec(l_, std::move(sizes), ident_); }

private:
    int l_;
    std::vector<int> sizes_;
    Identifiability ident_;
    CaseKind kind_ = CaseKind::LambdaXKnown;
    ParamLayout layout_;
};

// Flat parameter vector of length m = p * s, group blocks in order.
struct ParamVector {
    Vector values;
    int s = 0;

    ParamVector() = default;
    ParamVector(Vector v, int block) : values(std::move(v)), s(block) {}
    static ParamVector zeros(const ModelSpec& spec) { return ParamVector(Vector::Zero(spec.m()), spec.s()); }

    int groups() const { return s == 0 ? 0 : static_cast<int>(values.size()) / s; }
    auto group(int k) { return values.segment(static_cast<Eigen::Index>(k) * s, s); }
    auto group(int k) const { return values.segment(static_cast<Eigen::Index>(k) * s, s); }
    double& operator[](int i) { return values[i]; }
    double operator[](int i) const { return values[i]; }
};

using GroupParams = Eigen::Ref<const Vector>;

// Throws DomainError unless theta has the right length and strictly
// positive, finite variance coordinates.
inline void check_params(const ModelSpec& spec, const ParamVector& theta) {
    if (theta.values.size() != spec.m() || theta.s != spec.s()) {
        throw DomainError("parameter vector does not match the model dimension");
    }
    const ParamLayout& lay = spec.layout();
    for (int k = 0; k < spec.p(); ++k) {
        for (int i = 0; i < spec.s(); ++i) {
            const double v = theta.values[spec.flat_index(k, i)];
            if (!std::isfinite(v)) throw DomainError("non-finite parameter " + lay.name(i));
            if (lay.is_variance(i) && !(v > 0.0)) {
                throw DomainError("variance " + lay.name(i) + " of group " + std::to_string(k + 1) + " must be positive");
            }
        }
    }
}

// Observations per group: row j of groups[k] is Z_jk = (Y_1jk..Y_ljk, X_jk).
struct Dataset {
    std::vector<Matrix> groups;

    int p() const { return static_cast<int>(groups.size()); }
    std::vector<int> group_sizes() const {
        std::vector<int> out;
        for (const auto& g : groups) out.push_back(static_cast<int>(g.rows()));
        return out;
    }
};

inline void check_dataset(const ModelSpec& spec, const Dataset& data) {
    if (data.p() != spec.p()) throw DomainError("dataset has a different number of groups than the model");
    for (int k = 0; k < spec.p(); ++k) {
        const Matrix& g = data.groups[k];
        if (g.rows() != spec.group_size(k) || g.cols() != spec.obs_dim()) {
            throw DomainError("group " + std::to_string(k + 1) + " has the wrong shape");
        }
        if (!g.allFinite()) throw DomainError("group " + std::to_string(k + 1) + " has non-finite entries");
    }
}

// Mean vector, dispersion matrix and their parameter derivatives for one
// group. Derivatives use compact outer-product forms; e_i is the i-th unit
// vector and c = (beta, 1).
class GroupModel {
public:
    GroupModel(const ModelSpec& spec, int k) : lay_(spec.layout()), dim_(spec.obs_dim()) {
        const int l = spec.l();
        lambda_e_ = SmallVector::Zero(l);
        known_alpha_ = SmallVector::Zero(l);
        switch (spec.kind()) {
            case CaseKind::LambdaXKnown: lambda_x_ = spec.lambda_x(k); break;
            case CaseKind::LambdaEKnown:
                for (int i = 0; i < l; ++i) lambda_e_[i] = spec.lambda_e(k)[i];
                break;
            case CaseKind::InterceptKnown:
                for (int i = 0; i < l; ++i) known_alpha_[i] = spec.known_alpha(k)[i];
                break;
        }
    }

    const ParamLayout& layout() const noexcept { return lay_; }
    int s() const noexcept { return lay_.s; }
    int dim() const noexcept { return dim_; }

    // sigma2_x, whether it is a free coordinate or lambda_x * sigma2_u.
    double sigma2_x(GroupParams th) const {
        return lay_.kind == CaseKind::LambdaXKnown ? lambda_x_ * th[lay_.sigma2_u] : th[lay_.sigma2_x];
    }
    double error_variance(GroupParams th, int i) const {
        return lay_.kind == CaseKind::LambdaEKnown ? lambda_e_[i] * th[lay_.sigma2_u] : th[lay_.sigma2_e + i];
    }

    SmallVector slope_direction(GroupParams th) const {
        SmallVector c(dim_);
        c.head(lay_.l) = th.head(lay_.l);
        c[lay_.l] = 1.0;
        return c;
    }

    SmallVector mu(GroupParams th) const {
        check(th);
        const int l = lay_.l;
        const double mx = th[lay_.mu_x];
        SmallVector out(dim_);
        for (int i = 0; i < l; ++i) {
            const double intercept = lay_.kind == CaseKind::InterceptKnown ? known_alpha_[i] : th[lay_.alpha];
            out[i] = intercept + th[i] * mx;
        }
        out[l] = mx;
        return out;
    }

    SmallMatrix sigma(GroupParams th) const {
        check(th);
        const int l = lay_.l;
        const SmallVector c = slope_direction(th);
        SmallMatrix out = c * c.transpose();
        out *= sigma2_x(th);
        for (int i = 0; i < l; ++i) out(i, i) += error_variance(th, i);
        out(l, l) += th[lay_.sigma2_u];
        return out;
    }

    SmallVector d_mu(GroupParams th, int i) const {
        check(th);
        check_index(i);
        SmallVector out = SmallVector::Zero(dim_);
        if (lay_.is_slope(i)) {
            out[i] = th[lay_.mu_x];
        } else if (i == lay_.alpha) {
            out.head(lay_.l).setOnes();
        } else if (i == lay_.mu_x) {
            out = slope_direction(th);
        }
        return out;
    }

    SmallVector d2_mu(GroupParams th, int i, int j) const {
        check(th);
        check_index(i);
        check_index(j);
        SmallVector out = SmallVector::Zero(dim_);
        if (lay_.is_slope(i) && j == lay_.mu_x) {
            out[i] = 1.0;
        } else if (i == lay_.mu_x && lay_.is_slope(j)) {
            out[j] = 1.0;
        }
        return out;
    }

    SmallMatrix d_sigma(GroupParams th, int i) const {
        check(th);
        check_index(i);
        const int l = lay_.l;
        SmallMatrix out = SmallMatrix::Zero(dim_, dim_);
        if (lay_.is_slope(i)) {
            const SmallVector c = slope_direction(th);
            add_sym_outer(out, i, c, sigma2_x(th));
        } else if (i == lay_.sigma2_u) {
            out(l, l) = 1.0;
            if (lay_.kind == CaseKind::LambdaXKnown) {
                const SmallVector c = slope_direction(th);
                out += lambda_x_ * (c * c.transpose());
            } else if (lay_.kind == CaseKind::LambdaEKnown) {
                for (int r = 0; r < l; ++r) out(r, r) = lambda_e_[r];
            }
        } else if (i == lay_.sigma2_x) {
            const SmallVector c = slope_direction(th);
            out = c * c.transpose();
        } else if (lay_.sigma2_e >= 0 && i >= lay_.sigma2_e) {
            const int r = i - lay_.sigma2_e;
            out(r, r) = 1.0;
        }
        return out;
    }

    SmallMatrix d2_sigma(GroupParams th, int i, int j) const {
        check(th);
        check_index(i);
        check_index(j);
        SmallMatrix out = SmallMatrix::Zero(dim_, dim_);
        if (lay_.is_slope(i) && lay_.is_slope(j)) {
            const double sx = sigma2_x(th);
            out(i, j) += sx;
            out(j, i) += sx;
            return out;
        }
        const int scale = lay_.scale_index();
        const double factor = lay_.kind == CaseKind::LambdaXKnown ? lambda_x_ : 1.0;
        int slope = -1;
        if (lay_.is_slope(i) && j == scale) slope = i;
        if (lay_.is_slope(j) && i == scale) slope = j;
        if (slope >= 0) {
            add_sym_outer(out, slope, slope_direction(th), factor);
        }
        return out;
    }

private:
    // out += w (e_i c^T + c e_i^T)
    void add_sym_outer(SmallMatrix& out, int i, const SmallVector& c, double w) const {
        out.row(i) += w * c.transpose();
        out.col(i) += w * c;
    }
    void check(GroupParams th) const {
        if (th.size() != lay_.s) throw DomainError("group parameter block has the wrong length");
    }
    void check_index(int i) const {
        if (i < 0 || i >= lay_.s) throw DomainError("coordinate index " + std::to_string(i) + " out of range");
    }

    ParamLayout lay_;
    int dim_;
    double lambda_x_ = 0.0;
    SmallVector lambda_e_;
    SmallVector known_alpha_;
};

inline SmallVector build_mu(const ModelSpec& spec, GroupParams theta_k, int k) {
    return GroupModel(spec, k).mu(theta_k);
}

// Throws NotPositiveDefinite if the result cannot be factored.
inline SmallMatrix build_sigma(const ModelSpec& spec, GroupParams theta_k, int k) {
    SmallMatrix sigma = GroupModel(spec, k).sigma(theta_k);
    (void)cholesky(sigma);
    return sigma;
}

inline SmallVector d_mu(const ModelSpec& spec, GroupParams theta_k, int k, int i) {
    return GroupModel(spec, k).d_mu(theta_k, i);
}

inline SmallVector d2_mu(const ModelSpec& spec, GroupParams theta_k, int k, int i, int j) {
    return GroupModel(spec, k).d2_mu(theta_k, i, j);
}

inline SmallMatrix d_sigma(const ModelSpec& spec, GroupParams theta_k, int k, int i) {
    return GroupModel(spec, k).d_sigma(theta_k, i);
}

inline SmallMatrix d2_sigma(const ModelSpec& spec, GroupParams theta_k, int k, int i, int j) {
    return GroupModel(spec, k).d2_sigma(theta_k, i, j);
}

// d(Sigma^{-1})/d theta_i = -Sigma^{-1} Sigma_i Sigma^{-1}
inline SmallMatrix d_sigma_inv(const SmallMatrix& sigma_inv, const SmallMatrix& sigma_i) {
    if (sigma_inv.rows() != sigma_i.rows() || sigma_inv.cols() != sigma_i.cols() || sigma_inv.rows() != sigma_inv.cols()) {
        throw DomainError("d_sigma_inv: dimension mismatch");
    }
    SmallMatrix out = -(sigma_inv * sigma_i * sigma_inv);
    return 0.5 * (out + out.transpose());
}

// d^2(Sigma^{-1})/d theta_i d theta_j
//   = S Sigma_j S Sigma_i S + S Sigma_i S Sigma_j S - S Sigma_ij S,  S = Sigma^{-1}.
inline SmallMatrix d2_sigma_inv(const SmallMatrix& sigma_inv, const SmallMatrix& sigma_i, const SmallMatrix& sigma_j,
                                const SmallMatrix& sigma_ij) {
    const auto n = sigma_inv.rows();
    for (const SmallMatrix* m : {&sigma_i, &sigma_j, &sigma_ij}) {
        if (m->rows() != n || m->cols() != n) throw DomainError("d2_sigma_inv: dimension mismatch");
    }
    const SmallMatrix a = sigma_inv * sigma_i * sigma_inv;
    const SmallMatrix b = sigma_inv * sigma_j * sigma_inv;
    SmallMatrix out = b * sigma_i * sigma_inv + a * sigma_j * sigma_inv - sigma_inv * sigma_ij * sigma_inv;
    return 0.5 * (out + out.transpose());
}

}  // namespace eiv
