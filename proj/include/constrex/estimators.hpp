#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "constrex/error.hpp"
#include "constrex/linalg.hpp"
#include "constrex/model.hpp"

namespace constrex {

enum class EstimatorKind { Ols, Projected, Cls, Oracle, ProjectedOracle, ChebMom, Glm };

constexpr std::string_view to_string(EstimatorKind k) {
    switch (k) {
        case EstimatorKind::Ols: return "ols";
        case EstimatorKind::Projected: return "projected";
        case EstimatorKind::Cls: return "cls";
        case EstimatorKind::Oracle: return "oracle";
        case EstimatorKind::ProjectedOracle: return "projected_oracle";
        case EstimatorKind::ChebMom: return "cheb_mom";
        case EstimatorKind::Glm: return "glm";
    }
    return "unknown";
}

inline std::optional<EstimatorKind> parse_estimator_kind(std::string_view s) {
    for (auto k : {EstimatorKind::Ols, EstimatorKind::Projected, EstimatorKind::Cls, EstimatorKind::Oracle,
                   EstimatorKind::ProjectedOracle, EstimatorKind::ChebMom, EstimatorKind::Glm}) {
        if (s == to_string(k)) return k;
    }
    return std::nullopt;
}

constexpr bool is_constrained(EstimatorKind k) {
    return k == EstimatorKind::Projected || k == EstimatorKind::Cls || k == EstimatorKind::ProjectedOracle ||
           k == EstimatorKind::ChebMom || k == EstimatorKind::Glm;
}

template <typename Scalar = double>
struct EstimateResult {
    Vec<Scalar> beta_hat;
    EstimatorKind kind = EstimatorKind::Ols;
    /// Condition number of the matrix that was inverted (sample Gram or population covariance).
    Scalar gram_condition = Scalar(1);
    /// Sup-norm constraint violation; present whenever a constraint set was applied.
    std::optional<Scalar> feasibility_residual;
};

struct FitOptions {
    /// Replace a singular sample Gram matrix by the identity in the constrained fit.
    bool fallback_identity_gram = false;
    double max_condition = 1e12;
};

/// Projector onto null(a) together with the minimum-norm solution of a v = c.
template <typename Scalar = double>
struct ProjectorPair {
    Vec<Scalar> feasible_point;
    /// Orthonormal basis of the row space of a (p x q).
    Mat<Scalar> basis;

    /// Dense I - basis * basis'. Formed on request; project() does not need it.
    Mat<Scalar> p_orth() const {
        const Eigen::Index p = basis.rows();
        Mat<Scalar> proj = Mat<Scalar>::Identity(p, p);
        if (basis.cols() > 0) proj.noalias() -= basis * basis.transpose();
        return Scalar(0.5) * (proj + proj.transpose());
    }

    template <typename Derived>
    Vec<Scalar> project(const Eigen::MatrixBase<Derived>& v) const {
        if (basis.cols() == 0) return v + feasible_point;
        return v - basis * (basis.transpose() * v) + feasible_point;
    }
};

template <typename Scalar>
ProjectorPair<Scalar> orthogonal_projector(const ConstraintSet<Scalar>& cs) {
    const Eigen::Index p = cs.p();
    const Eigen::Index q = cs.q();
    ProjectorPair<Scalar> out;
    if (q == 0) {
        out.feasible_point = Vec<Scalar>::Zero(p);
        out.basis = Mat<Scalar>(p, 0);
        return out;
    }
    // a' = Q R, so a a' = R' R and the min-norm solution of a v = c is Q R^{-T} c.
    Eigen::HouseholderQR<Mat<Scalar>> qr(cs.a().transpose());
    const Mat<Scalar> r = qr.matrixQR().topRows(q).template triangularView<Eigen::Upper>();
    const Scalar rmax = r.diagonal().cwiseAbs().maxCoeff();
    if (!(r.diagonal().cwiseAbs().minCoeff() > Scalar(kDefaultRankTol) * rmax)) {
        throw Error(ErrorCode::RankDeficient, "a a' is numerically singular");
    }
    out.basis = qr.householderQ() * Mat<Scalar>::Identity(p, q);
    const Vec<Scalar> w = r.transpose().template triangularView<Eigen::Lower>().solve(cs.c());
    out.feasible_point = out.basis * w;
    return out;
}

namespace detail {

/// QR of the design plus the Gram condition number; shared by the least-squares fits.
template <typename Scalar>
struct GramFactor {
    Eigen::HouseholderQR<Mat<Scalar>> qr;
    Mat<Scalar> r;  // p x p upper-triangular, X'X = R'R
    Scalar condition = Scalar(1);
};

template <typename Scalar>
GramFactor<Scalar> factor_design(const Dataset<Scalar>& data, const FitOptions& opts) {
    if (data.n() <= data.p()) {
        throw Error(ErrorCode::NTooSmall,
                    "least squares needs n > p (n = " + std::to_string(data.n()) + ", p = " + std::to_string(data.p()) + ")");
    }
    GramFactor<Scalar> g;
    g.qr.compute(data.x());
    g.r = g.qr.matrixQR().topRows(data.p()).template triangularView<Eigen::Upper>();
    const Mat<Scalar> gram = g.r.transpose() * g.r;
    g.condition = spd_condition(gram);
    if (!std::isfinite(double(g.condition)) || g.condition > Scalar(opts.max_condition)) {
        throw Error(ErrorCode::SingularGram, "sample Gram matrix condition number " + std::to_string(double(g.condition)));
    }
    return g;
}

template <typename Scalar>
Vec<Scalar> ls_solve(const GramFactor<Scalar>& g, const Dataset<Scalar>& data) {
    return g.qr.solve(data.y());
}

}  // namespace detail

template <typename Scalar>
EstimateResult<Scalar> fit_ols(const Dataset<Scalar>& data, const FitOptions& opts = {}) {
    const auto g = detail::factor_design(data, opts);
    EstimateResult<Scalar> res;
    res.beta_hat = detail::ls_solve(g, data);
    res.kind = EstimatorKind::Ols;
    res.gram_condition = g.condition;
    return res;
}

/// Maps an unconstrained estimate onto the constraint set and relabels it as `kind`.
template <typename Scalar>
EstimateResult<Scalar> project_estimate(EstimateResult<Scalar> res, EstimatorKind kind,
                                        const ProjectorPair<Scalar>& pair, const ConstraintSet<Scalar>& cs) {
    res.beta_hat = pair.project(res.beta_hat);
    res.kind = kind;
    res.feasibility_residual = cs.residual(res.beta_hat);
    return res;
}

template <typename Scalar>
EstimateResult<Scalar> fit_projected(const Dataset<Scalar>& data, const ProjectorPair<Scalar>& pair,
                                     const ConstraintSet<Scalar>& cs, const FitOptions& opts = {}) {
    return project_estimate(fit_ols(data, opts), EstimatorKind::Projected, pair, cs);
}

template <typename Scalar>
EstimateResult<Scalar> fit_projected(const Dataset<Scalar>& data, const ConstraintSet<Scalar>& cs,
                                     const FitOptions& opts = {}) {
    return fit_projected(data, orthogonal_projector(cs), cs, opts);
}

/// Constrained least squares, argmin ||y - X b||^2 subject to a b = c, in its
/// Lagrangian-correction form b_ls - G^{-1} a' (a G^{-1} a')^{-1} (a b_ls - c).
template <typename Scalar>
EstimateResult<Scalar> fit_cls(const Dataset<Scalar>& data, const ConstraintSet<Scalar>& cs,
                               const FitOptions& opts = {}) {
    if (cs.p() != data.p()) throw Error(ErrorCode::DimensionMismatch, "constraint and design widths differ");
    EstimateResult<Scalar> res;
    res.kind = EstimatorKind::Cls;
    std::optional<detail::GramFactor<Scalar>> g;
    try {
        g = detail::factor_design(data, opts);
    } catch (const Error& e) {
        if (!opts.fallback_identity_gram ||
            (e.code() != ErrorCode::SingularGram && e.code() != ErrorCode::NTooSmall)) {
            throw;
        }
        // Identity stand-in for the Gram: the correction collapses to the orthogonal projection
        // of the minimum-norm least-squares solution.
        Eigen::CompleteOrthogonalDecomposition<Mat<Scalar>> cod(data.x());
        res.beta_hat = orthogonal_projector(cs).project(cod.solve(data.y()));
        res.gram_condition = std::numeric_limits<Scalar>::infinity();
        res.feasibility_residual = cs.residual(res.beta_hat);
        return res;
    }
    const Vec<Scalar> beta_ls = detail::ls_solve(*g, data);
    res.gram_condition = g->condition;
    if (cs.is_empty()) {
        res.beta_hat = beta_ls;
        res.feasibility_residual = Scalar(0);
        return res;
    }
    const Eigen::Index q = cs.q();
    // G = R'R; W = R^{-T} a' gives a G^{-1} a' = W'W, factored again by QR for stability.
    const Mat<Scalar> w = g->r.transpose().template triangularView<Eigen::Lower>().solve(cs.a().transpose());
    Eigen::HouseholderQR<Mat<Scalar>> wqr(w);
    const Mat<Scalar> rw = wqr.matrixQR().topRows(q).template triangularView<Eigen::Upper>();
    const Scalar rwmax = rw.diagonal().cwiseAbs().maxCoeff();
    if (!(rw.diagonal().cwiseAbs().minCoeff() > Scalar(kDefaultRankTol) * rwmax)) {
        throw Error(ErrorCode::RankDeficient, "a G^{-1} a' is numerically singular");
    }
    const Vec<Scalar> gap = cs.a() * beta_ls - cs.c();
    const Vec<Scalar> t = rw.transpose().template triangularView<Eigen::Lower>().solve(gap);
    const Vec<Scalar> lambda = rw.template triangularView<Eigen::Upper>().solve(t);
    const Vec<Scalar> shift = g->r.template triangularView<Eigen::Upper>().solve(w * lambda);
    res.beta_hat = beta_ls - shift;
    res.feasibility_residual = cs.residual(res.beta_hat);
    return res;
}

/// Same estimator through the null-space reparameterisation b = u + V alpha, where V is an
/// orthonormal basis of null(a) and u the minimum-norm feasible point.
template <typename Scalar>
EstimateResult<Scalar> fit_cls_null_space(const Dataset<Scalar>& data, const ConstraintSet<Scalar>& cs,
                                          const FitOptions& opts = {}) {
    if (cs.p() != data.p()) throw Error(ErrorCode::DimensionMismatch, "constraint and design widths differ");
    if (data.n() <= data.p()) throw Error(ErrorCode::NTooSmall, "least squares needs n > p");
    const Vec<Scalar> u = orthogonal_projector(cs).feasible_point;
    const Mat<Scalar> v = null_space_basis(cs.a());
    const Mat<Scalar> z = data.x() * v;
    const Mat<Scalar> zz = z.transpose() * z;
    const Scalar cond = spd_condition(zz);
    if (!std::isfinite(double(cond)) || cond > Scalar(opts.max_condition)) {
        throw Error(ErrorCode::SingularGram, "reduced Gram matrix is numerically singular");
    }
    Eigen::LLT<Mat<Scalar>> llt(zz);
    const Vec<Scalar> alpha = llt.solve(z.transpose() * (data.y() - data.x() * u));
    EstimateResult<Scalar> res;
    res.beta_hat = u + v * alpha;
    res.kind = EstimatorKind::Cls;
    res.gram_condition = cond;
    res.feasibility_residual = cs.residual(res.beta_hat);
    return res;
}

/// Factored population covariance, reused across oracle fits.
template <typename Scalar = double>
class CovarianceFactor {
public:
    explicit CovarianceFactor(Mat<Scalar> sigma) : sigma_(std::move(sigma)) {
        if (sigma_.rows() != sigma_.cols() || sigma_.rows() < 1) {
            throw Error(ErrorCode::DimensionMismatch, "covariance must be square and non-empty");
        }
        llt_.compute(sigma_);
        if (llt_.info() != Eigen::Success) {
            throw Error(ErrorCode::NotPositiveDefinite, "covariance failed Cholesky factorization");
        }
        condition_ = spd_condition(sigma_);
        if (!std::isfinite(double(condition_))) {
            throw Error(ErrorCode::NotPositiveDefinite, "covariance is singular");
        }
        inverse_ = llt_.solve(Mat<Scalar>::Identity(sigma_.rows(), sigma_.cols()));
        inverse_ = Scalar(0.5) * (inverse_ + inverse_.transpose()).eval();
    }

    const Mat<Scalar>& matrix() const { return sigma_; }
    const Mat<Scalar>& inverse() const { return inverse_; }
    const Eigen::LLT<Mat<Scalar>>& llt() const { return llt_; }
    Scalar condition() const { return condition_; }
    Eigen::Index dimension() const { return sigma_.rows(); }

private:
    Mat<Scalar> sigma_;
    Eigen::LLT<Mat<Scalar>> llt_;
    Mat<Scalar> inverse_;
    Scalar condition_ = Scalar(1);
};

/// Sigma^{-1} X'y / n. Valid for any n, p.
template <typename Scalar>
EstimateResult<Scalar> fit_oracle(const Dataset<Scalar>& data, const CovarianceFactor<Scalar>& sigma) {
    if (sigma.dimension() != data.p()) throw Error(ErrorCode::DimensionMismatch, "covariance and design widths differ");
    EstimateResult<Scalar> res;
    res.beta_hat = sigma.llt().solve(data.x().transpose() * data.y()) / Scalar(data.n());
    res.kind = EstimatorKind::Oracle;
    res.gram_condition = sigma.condition();
    return res;
}

template <typename Scalar>
EstimateResult<Scalar> fit_oracle(const Dataset<Scalar>& data, const Mat<Scalar>& sigma_matrix) {
    return fit_oracle(data, CovarianceFactor<Scalar>(sigma_matrix));
}

template <typename Scalar>
EstimateResult<Scalar> fit_projected_oracle(const Dataset<Scalar>& data, const CovarianceFactor<Scalar>& sigma,
                                            const ProjectorPair<Scalar>& pair, const ConstraintSet<Scalar>& cs) {
    return project_estimate(fit_oracle(data, sigma), EstimatorKind::ProjectedOracle, pair, cs);
}

template <typename Scalar>
EstimateResult<Scalar> fit_projected_oracle(const Dataset<Scalar>& data, const Mat<Scalar>& sigma_matrix,
                                            const ConstraintSet<Scalar>& cs) {
    return fit_projected_oracle(data, CovarianceFactor<Scalar>(sigma_matrix), orthogonal_projector(cs), cs);
}

}  // namespace constrex
