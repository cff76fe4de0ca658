#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <functional>
#include <optional>

#include "constrex/error.hpp"
#include "constrex/estimators.hpp"
#include "constrex/linalg.hpp"
#include "constrex/model.hpp"

namespace constrex {

struct RiskReport {
    /// (sigma^2 / n) Tr(C Sigma_n^{-1}) for a given design; present only when a design was supplied.
    std::optional<double> finite_sample_trace_risk;
    double asymptotic_risk = 0.0;
    std::optional<double> isotropic_closed_form;
};

struct GainReport {
    double expected_gain = 0.0;
    VectorXd eigen_weights;
    std::optional<double> empirical_gain;
};

/// Sigma^{-1} - Sigma^{-1} a' (a Sigma^{-1} a')^{-1} a Sigma^{-1}. Its diagonal holds the
/// per-coordinate constrained precision entries used by the risk and variance formulas.
template <typename Scalar>
Mat<Scalar> constrained_precision(const CovarianceFactor<Scalar>& sigma, const ConstraintSet<Scalar>& cs) {
    if (sigma.dimension() != cs.p()) throw Error(ErrorCode::DimensionMismatch, "covariance and constraint widths differ");
    Mat<Scalar> out = sigma.inverse();
    if (cs.is_empty()) return out;
    const Mat<Scalar> k = sigma.inverse() * cs.a().transpose();  // p x q
    Eigen::LLT<Mat<Scalar>> inner(cs.a() * k);
    if (inner.info() != Eigen::Success) throw Error(ErrorCode::RankDeficient, "a Sigma^{-1} a' is singular");
    out.noalias() -= k * inner.solve(k.transpose());
    return Scalar(0.5) * (out + out.transpose());
}

namespace detail {

template <typename Scalar>
Mat<Scalar> design_r_factor(const Mat<Scalar>& x, double max_condition) {
    if (x.rows() <= x.cols()) throw Error(ErrorCode::NTooSmall, "sample Gram needs n > p");
    Eigen::HouseholderQR<Mat<Scalar>> qr(x);
    Mat<Scalar> r = qr.matrixQR().topRows(x.cols()).template triangularView<Eigen::Upper>();
    const Scalar cond = spd_condition((r.transpose() * r).eval());
    if (!std::isfinite(double(cond)) || cond > Scalar(max_condition)) {
        throw Error(ErrorCode::SingularGram, "sample Gram matrix is numerically singular");
    }
    return r;
}

}  // namespace detail

/// (sigma^2 / n) Tr(C Sigma_n^{-1}): the exact conditional risk E[||b_cls - b*||^2 | X]
/// under Gaussian errors.
template <typename Scalar>
Scalar conditional_minimax_risk(const Mat<Scalar>& x, const ConstraintSet<Scalar>& cs, Scalar sigma_sq,
                                double max_condition = 1e12) {
    if (cs.p() != x.cols()) throw Error(ErrorCode::DimensionMismatch, "constraint and design widths differ");
    if (!(sigma_sq > Scalar(0))) throw Error(ErrorCode::InvalidInput, "sigma_sq must be positive");
    const Eigen::Index p = x.cols();
    const Mat<Scalar> r = detail::design_r_factor(x, max_condition);
    // Sigma_n^{-1} = n R^{-1} R^{-T}, so the n factors cancel against sigma^2 / n.
    const Mat<Scalar> rinv = r.template triangularView<Eigen::Upper>().solve(Mat<Scalar>::Identity(p, p));
    Scalar tr = rinv.squaredNorm();
    if (!cs.is_empty()) {
        const Mat<Scalar> w = r.transpose().template triangularView<Eigen::Lower>().solve(cs.a().transpose());
        Eigen::HouseholderQR<Mat<Scalar>> wqr(w);
        const Mat<Scalar> rw = wqr.matrixQR().topRows(cs.q()).template triangularView<Eigen::Upper>();
        // Tr(S^{-1} a'(a S^{-1} a')^{-1} a S^{-1}) = n ||R^{-1} W Rw^{-1}||_F^2
        const Mat<Scalar> t = rw.transpose().template triangularView<Eigen::Lower>()
                                  .solve((rinv * w).transpose())
                                  .transpose();
        tr -= t.squaredNorm();
    }
    return sigma_sq * tr;
}

/// Large-sample CLS risk evaluated at finite (p, q): the trace surrogate
/// (1/n) Tr(Sigma^{-1} - ...) scaled by sigma^2 / (1 - (1-gamma) alpha), with n = p / alpha.
template <typename Scalar>
RiskReport asymptotic_risk(Scalar sigma_sq, const CovarianceFactor<Scalar>& sigma, const ConstraintSet<Scalar>& cs,
                           const AspectRatios& ratios) {
    ratios.require_moderate();
    if (!(sigma_sq > Scalar(0))) throw Error(ErrorCode::InvalidInput, "sigma_sq must be positive");
    const double p = double(cs.p());
    const double trace = double(constrained_precision(sigma, cs).trace());
    RiskReport rep;
    const double scale = double(sigma_sq) / ratios.effective_fraction();
    rep.asymptotic_risk = scale * trace * ratios.alpha / p;
    if (sigma.matrix().isIdentity(0.0)) {
        const double free = (1.0 - ratios.gamma) * ratios.alpha;
        rep.isotropic_closed_form = double(sigma_sq) * free / (1.0 - free);
    }
    return rep;
}

template <typename Scalar>
RiskReport asymptotic_risk(Scalar sigma_sq, const Mat<Scalar>& sigma_matrix, const ConstraintSet<Scalar>& cs,
                           const AspectRatios& ratios) {
    return asymptotic_risk(sigma_sq, CovarianceFactor<Scalar>(sigma_matrix), cs, ratios);
}

/// Leading-order expected gain q sigma^2 / (n (1 - alpha)) of projecting OLS onto the constraints.
inline double expected_gain(Eigen::Index n, Eigen::Index q, double sigma_sq, const AspectRatios& ratios) {
    if (!(ratios.alpha < 1.0)) throw Error(ErrorCode::RatioOutOfRange, "expected gain needs alpha < 1");
    if (n < 1 || q < 0) throw Error(ErrorCode::InvalidInput, "need n >= 1 and q >= 0");
    return double(q) * sigma_sq / (double(n) * (1.0 - ratios.alpha));
}

/// Nonzero eigenvalues, descending, of n X (X'X)^{-1} P_A (X'X)^{-1} X'. The scaled gain
/// n G_n / sigma^2 is distributed as sum_i w_i chi^2_1 given X.
template <typename Scalar>
Vec<Scalar> gain_eigen_weights(const Mat<Scalar>& x, const ConstraintSet<Scalar>& cs, double max_condition = 1e12) {
    if (cs.p() != x.cols()) throw Error(ErrorCode::DimensionMismatch, "constraint and design widths differ");
    if (cs.q() < 1) throw Error(ErrorCode::InvalidInput, "gain weights need at least one constraint");
    const Eigen::Index n = x.rows();
    const Eigen::Index q = cs.q();
    const Mat<Scalar> r = detail::design_r_factor(x, max_condition);
    const Mat<Scalar> basis = row_space_basis(cs.a());
    // T = X (X'X)^{-1} Q with P_A = Q Q'; sandwich = n T T'.
    const Mat<Scalar> g_inv_q = r.template triangularView<Eigen::Upper>().solve(
        r.transpose().template triangularView<Eigen::Lower>().solve(basis));
    const Mat<Scalar> t = x * g_inv_q;
    Mat<Scalar> sandwich = Scalar(n) * t * t.transpose();
    sandwich = Scalar(0.5) * (sandwich + sandwich.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Mat<Scalar>> es(sandwich, Eigen::EigenvaluesOnly);
    Vec<Scalar> ev = es.eigenvalues().reverse();  // descending
    const Scalar top = ev(0);
    const Scalar cutoff = Scalar(1e-8) * std::max(top, Scalar(0));
    for (Eigen::Index i = q; i < n; ++i) {
        if (std::abs(ev(i)) > cutoff) {
            throw Error(ErrorCode::RankDeficient, "gain sandwich has more than q nonzero eigenvalues");
        }
    }
    return ev.head(q);
}

}  // namespace constrex
