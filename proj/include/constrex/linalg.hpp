#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>

#include "constrex/error.hpp"

namespace constrex {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Mat<double>;
using VectorXd = Vec<double>;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
    return m.size() == 0 || m.allFinite();
}

/// Condition number of a symmetric positive semi-definite matrix from its
/// eigenvalues. Returns +inf when the smallest eigenvalue is not positive.
template <typename Derived>
typename Derived::Scalar spd_condition(const Eigen::MatrixBase<Derived>& s) {
    using Scalar = typename Derived::Scalar;
    if (s.rows() == 0) return Scalar(1);
    Eigen::SelfAdjointEigenSolver<Mat<Scalar>> es(s, Eigen::EigenvaluesOnly);
    const auto& ev = es.eigenvalues();
    const Scalar lo = ev.minCoeff();
    const Scalar hi = ev.maxCoeff();
    if (!(lo > Scalar(0))) return std::numeric_limits<Scalar>::infinity();
    return hi / lo;
}

/// Orthonormal basis (p x (p - q)) for the null space of a full-row-rank q x p matrix,
/// taken from the trailing right singular vectors.
template <typename Derived>
Mat<typename Derived::Scalar> null_space_basis(const Eigen::MatrixBase<Derived>& a) {
    using Scalar = typename Derived::Scalar;
    const Eigen::Index q = a.rows();
    const Eigen::Index p = a.cols();
    if (q == 0) return Mat<Scalar>::Identity(p, p);
    Eigen::BDCSVD<Mat<Scalar>> svd(a, Eigen::ComputeFullV);
    return svd.matrixV().rightCols(p - q);
}

/// Orthonormal basis (p x q) for the row space of a full-row-rank q x p matrix.
template <typename Derived>
Mat<typename Derived::Scalar> row_space_basis(const Eigen::MatrixBase<Derived>& a) {
    using Scalar = typename Derived::Scalar;
    const Eigen::Index q = a.rows();
    const Eigen::Index p = a.cols();
    if (q == 0) return Mat<Scalar>(p, 0);
    Eigen::HouseholderQR<Mat<Scalar>> qr(a.transpose());
    return qr.householderQ() * Mat<Scalar>::Identity(p, q);
}

/// Inverse of an SPD matrix through its Cholesky factor.
template <typename Derived>
Mat<typename Derived::Scalar> spd_inverse(const Eigen::MatrixBase<Derived>& s) {
    using Scalar = typename Derived::Scalar;
    Eigen::LLT<Mat<Scalar>> llt(s);
    if (llt.info() != Eigen::Success) {
        throw Error(ErrorCode::NotPositiveDefinite, "Cholesky factorization failed");
    }
    return llt.solve(Mat<Scalar>::Identity(s.rows(), s.cols()));
}

}  // namespace constrex
