#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <variant>

#include "constrex/error.hpp"
#include "constrex/linalg.hpp"

namespace constrex {

inline constexpr double kDefaultRankTol = 1e-10;
inline constexpr double kFeasibilityTol = 1e-8;

/// Target-population sample: design x (n x p) and outcome y (n).
template <typename Scalar = double>
class Dataset {
public:
    Dataset(Mat<Scalar> x, Vec<Scalar> y) : x_(std::move(x)), y_(std::move(y)) {
        if (x_.rows() != y_.size()) {
            throw Error(ErrorCode::DimensionMismatch,
                        "design has " + std::to_string(x_.rows()) + " rows but outcome has " +
                            std::to_string(y_.size()) + " entries");
        }
        if (x_.rows() < 1 || x_.cols() < 1) {
            throw Error(ErrorCode::InvalidInput, "dataset needs n >= 1 and p >= 1");
        }
        if (!all_finite(x_) || !all_finite(y_)) {
            throw Error(ErrorCode::InvalidInput, "dataset contains non-finite entries");
        }
    }

    const Mat<Scalar>& x() const { return x_; }
    const Vec<Scalar>& y() const { return y_; }
    Eigen::Index n() const { return x_.rows(); }
    Eigen::Index p() const { return x_.cols(); }

private:
    Mat<Scalar> x_;
    Vec<Scalar> y_;
};

/// Affine parameter restriction a * beta = c with a of full row rank and q < p.
/// q = 0 is the empty sentinel (no restriction).
template <typename Scalar = double>
class ConstraintSet {
public:
    ConstraintSet(Mat<Scalar> a, Vec<Scalar> c, Scalar rank_tol = Scalar(kDefaultRankTol))
        : a_(std::move(a)), c_(std::move(c)) {
        if (a_.rows() != c_.size()) {
            throw Error(ErrorCode::DimensionMismatch,
                        "constraint matrix has " + std::to_string(a_.rows()) +
                            " rows but constraint vector has " + std::to_string(c_.size()));
        }
        if (a_.cols() < 1) throw Error(ErrorCode::DimensionMismatch, "constraint matrix has no columns");
        if (!all_finite(a_) || !all_finite(c_)) {
            throw Error(ErrorCode::InvalidInput, "constraints contain non-finite entries");
        }
        if (!(rank_tol > Scalar(0))) throw Error(ErrorCode::InvalidInput, "rank_tol must be positive");
        const Eigen::Index q = a_.rows();
        if (q > 0) {
            // a' = Q R and R share singular values with a. sigma_min / sigma_max is bounded
            // below by 1 / (||R||_F ||R^{-1}||_F); the singular values are only needed when
            // that bound does not clear the tolerance.
            Eigen::HouseholderQR<Mat<Scalar>> qr(a_.transpose());
            const Eigen::Index k = std::min(q, a_.cols());
            const Mat<Scalar> r = qr.matrixQR().topLeftCorner(k, q).template triangularView<Eigen::Upper>();
            Eigen::Index rank = q;
            bool certified = false;
            if (k == q && r.diagonal().cwiseAbs().minCoeff() > Scalar(0)) {
                const Mat<Scalar> rinv = r.template triangularView<Eigen::Upper>().solve(Mat<Scalar>::Identity(q, q));
                const Scalar bound = Scalar(1) / (r.norm() * rinv.norm());
                certified = std::isfinite(double(bound)) && bound > rank_tol;
            }
            if (!certified) {
                Eigen::BDCSVD<Mat<Scalar>> svd(r);
                const auto& sv = svd.singularValues();
                const Scalar cutoff = rank_tol * sv(0);
                rank = 0;
                for (Eigen::Index i = 0; i < sv.size(); ++i) rank += sv(i) > cutoff ? 1 : 0;
            }
            if (rank < q) {
                throw Error(ErrorCode::RankDeficient,
                            "constraint matrix has rank " + std::to_string(rank) + " < q = " + std::to_string(q));
            }
        }
        if (q >= a_.cols()) {
            throw Error(ErrorCode::QNotLessThanP,
                        "q = " + std::to_string(q) + " must be below p = " + std::to_string(a_.cols()));
        }
    }

    static ConstraintSet empty(Eigen::Index p) { return ConstraintSet(Mat<Scalar>(0, p), Vec<Scalar>(0)); }

    const Mat<Scalar>& a() const { return a_; }
    const Vec<Scalar>& c() const { return c_; }
    Eigen::Index q() const { return a_.rows(); }
    Eigen::Index p() const { return a_.cols(); }
    bool is_empty() const { return a_.rows() == 0; }

    /// Sup-norm of a * beta - c (0 for the empty set).
    template <typename Derived>
    Scalar residual(const Eigen::MatrixBase<Derived>& beta) const {
        if (is_empty()) return Scalar(0);
        return (a_ * beta - c_).cwiseAbs().maxCoeff();
    }

private:
    Mat<Scalar> a_;
    Vec<Scalar> c_;
};

template <typename Scalar = double>
ConstraintSet<Scalar> validate_constraints(Mat<Scalar> a, Vec<Scalar> c,
                                           Scalar rank_tol = Scalar(kDefaultRankTol)) {
    return ConstraintSet<Scalar>(std::move(a), std::move(c), rank_tol);
}

/// Constraints borrowed from a reference sample: a = b * S_N, c = a * beta_star,
/// where S_N = ref_x' ref_x / N is the plain second-moment matrix of the reference design.
template <typename DerivedB, typename DerivedX, typename DerivedBeta>
ConstraintSet<typename DerivedB::Scalar> build_reference_constraints(
    const Eigen::MatrixBase<DerivedB>& b, const Eigen::MatrixBase<DerivedX>& ref_x,
    const Eigen::MatrixBase<DerivedBeta>& beta_star,
    typename DerivedB::Scalar rank_tol = typename DerivedB::Scalar(kDefaultRankTol)) {
    using Scalar = typename DerivedB::Scalar;
    const Eigen::Index p = ref_x.cols();
    if (ref_x.rows() < 1) throw Error(ErrorCode::InvalidInput, "reference sample is empty");
    if (b.cols() != p || beta_star.size() != p) {
        throw Error(ErrorCode::DimensionMismatch, "reference construction shapes do not conform");
    }
    Mat<Scalar> second_moment = Mat<Scalar>::Zero(p, p);
    second_moment.template selfadjointView<Eigen::Lower>().rankUpdate(ref_x.transpose(),
                                                                     Scalar(1) / Scalar(ref_x.rows()));
    second_moment.template triangularView<Eigen::StrictlyUpper>() = second_moment.transpose();
    Mat<Scalar> a = b * second_moment;
    Vec<Scalar> c = a * beta_star;
    return ConstraintSet<Scalar>(std::move(a), std::move(c), rank_tol);
}

struct Isotropic {
    Eigen::Index p = 0;
};

struct Equicorrelated {
    Eigen::Index p = 0;
    double rho = 0.0;
};

template <typename Scalar>
struct ExplicitCovariance {
    Mat<Scalar> sigma;
};

/// Population dispersion of the covariates.
template <typename Scalar = double>
class CovarianceSpec {
public:
    using Variant = std::variant<Isotropic, Equicorrelated, ExplicitCovariance<Scalar>>;

    static CovarianceSpec isotropic(Eigen::Index p) { return CovarianceSpec(Isotropic{p}); }
    static CovarianceSpec equicorrelated(Eigen::Index p, double rho) { return CovarianceSpec(Equicorrelated{p, rho}); }
    static CovarianceSpec explicit_matrix(Mat<Scalar> sigma) {
        return CovarianceSpec(ExplicitCovariance<Scalar>{std::move(sigma)});
    }

    const Variant& variant() const { return v_; }
    bool is_isotropic() const { return std::holds_alternative<Isotropic>(v_); }

    Eigen::Index dimension() const {
        return std::visit(
            [](const auto& v) -> Eigen::Index {
                using T = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<T, ExplicitCovariance<Scalar>>) {
                    return v.sigma.rows();
                } else {
                    return v.p;
                }
            },
            v_);
    }

private:
    explicit CovarianceSpec(Variant v) : v_(std::move(v)) {
        if (const auto* e = std::get_if<Equicorrelated>(&v_)) {
            if (e->p < 1) throw Error(ErrorCode::InvalidInput, "covariance dimension must be >= 1");
            const double lower = e->p > 1 ? -1.0 / double(e->p - 1) : -1.0;
            if (!(e->rho > lower && e->rho < 1.0)) {
                throw Error(ErrorCode::NotPositiveDefinite, "equicorrelation rho outside (-1/(p-1), 1)");
            }
        } else if (const auto* i = std::get_if<Isotropic>(&v_)) {
            if (i->p < 1) throw Error(ErrorCode::InvalidInput, "covariance dimension must be >= 1");
        } else {
            const auto& s = std::get<ExplicitCovariance<Scalar>>(v_).sigma;
            if (s.rows() != s.cols() || s.rows() < 1) {
                throw Error(ErrorCode::DimensionMismatch, "explicit covariance must be square and non-empty");
            }
        }
    }

    Variant v_;
};

/// Dense SPD matrix for a covariance spec. Equicorrelated(p, rho) is (1 - rho) I + rho J.
template <typename Scalar = double>
Mat<Scalar> realize_covariance(const CovarianceSpec<Scalar>& spec) {
    const Eigen::Index p = spec.dimension();
    if (spec.is_isotropic()) return Mat<Scalar>::Identity(p, p);
    if (const auto* e = std::get_if<Equicorrelated>(&spec.variant())) {
        Mat<Scalar> s = Mat<Scalar>::Constant(p, p, Scalar(e->rho));
        s.diagonal().setConstant(Scalar(1));
        return s;
    }
    const Mat<Scalar>& s = std::get<ExplicitCovariance<Scalar>>(spec.variant()).sigma;
    if (!all_finite(s)) throw Error(ErrorCode::InvalidInput, "covariance has non-finite entries");
    const Scalar scale = std::max(s.cwiseAbs().maxCoeff(), Scalar(1e-300));
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-12) * scale) {
        throw Error(ErrorCode::NotPositiveDefinite, "covariance is not symmetric");
    }
    Eigen::LLT<Mat<Scalar>> llt(s);
    if (llt.info() != Eigen::Success) {
        throw Error(ErrorCode::NotPositiveDefinite, "covariance failed Cholesky factorization");
    }
    const Scalar cond = spd_condition(s);
    if (!std::isfinite(double(cond))) {
        throw Error(ErrorCode::NotPositiveDefinite, "covariance condition number is not finite");
    }
    return s;
}

/// Generating law for a simulated sample. sigma = 0 is accepted for noiseless checks.
template <typename Scalar = double>
struct TrueModel {
    Vec<Scalar> beta_star;
    Scalar sigma = Scalar(1);
    CovarianceSpec<Scalar> covariance;

    TrueModel(Vec<Scalar> beta, Scalar noise_sd, CovarianceSpec<Scalar> cov)
        : beta_star(std::move(beta)), sigma(noise_sd), covariance(std::move(cov)) {
        if (!(sigma >= Scalar(0)) || !std::isfinite(double(sigma))) {
            throw Error(ErrorCode::InvalidInput, "noise standard deviation must be finite and >= 0");
        }
        if (beta_star.size() != covariance.dimension()) {
            throw Error(ErrorCode::DimensionMismatch, "beta_star and covariance dimensions differ");
        }
    }

    bool feasible_for(const ConstraintSet<Scalar>& cs, Scalar tol = Scalar(kFeasibilityTol)) const {
        return cs.p() == beta_star.size() && cs.residual(beta_star) <= tol;
    }
};

/// Aspect ratio alpha = p/n and constraint ratio gamma = q/p.
struct AspectRatios {
    double alpha = 0.0;
    double gamma = 0.0;

    AspectRatios(double a, double g) : alpha(a), gamma(g) {
        if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw Error(ErrorCode::RatioOutOfRange, "alpha must be >= 0");
        if (!(gamma >= 0.0 && gamma < 1.0)) throw Error(ErrorCode::RatioOutOfRange, "gamma must lie in [0, 1)");
    }

    static AspectRatios from_dims(Eigen::Index n, Eigen::Index p, Eigen::Index q) {
        if (n < 1 || p < 1) throw Error(ErrorCode::InvalidInput, "n and p must be positive");
        return AspectRatios(double(p) / double(n), double(q) / double(p));
    }

    /// 1 - (1 - gamma) alpha, the shrinkage of the effective sample size.
    double effective_fraction() const { return 1.0 - (1.0 - gamma) * alpha; }
    bool moderate() const { return effective_fraction() > 0.0; }

    void require_moderate() const {
        if (!moderate()) {
            throw Error(ErrorCode::RatioOutOfRange, "(1 - gamma) * alpha must be < 1");
        }
    }
};

}  // namespace constrex
