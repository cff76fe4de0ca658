#pragma once

#include <Eigen/Dense>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "constrex/rng.hpp"

namespace testing {

using Eigen::MatrixXd;
using Eigen::VectorXd;

class Gen {
public:
    explicit Gen(std::uint64_t seed, std::uint64_t stream = 0) : eng_(seed, stream) {}

    double normal() { return norm_(eng_); }
    double uniform() { return unif_(eng_); }

    MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols) {
        MatrixXd m(rows, cols);
        for (Eigen::Index j = 0; j < cols; ++j)
            for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal();
        return m;
    }

    VectorXd normal_vector(Eigen::Index n) { return normal_matrix(n, 1).col(0); }

    /// Rows drawn from N(0, sigma) through a Cholesky factor.
    MatrixXd correlated_rows(Eigen::Index rows, const MatrixXd& sigma) {
        const MatrixXd l = sigma.llt().matrixL();
        return normal_matrix(rows, sigma.rows()) * l.transpose();
    }

private:
    constrex::Philox4x32 eng_;
    boost::random::normal_distribution<double> norm_;
    boost::random::uniform_01<double> unif_;
};

inline double rel_err(const MatrixXd& a, const MatrixXd& b) {
    const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
    return (a - b).cwiseAbs().maxCoeff() / scale;
}

/// Equality-constrained least squares through the full (p + q) x (p + q) KKT system.
inline VectorXd kkt_solve(const MatrixXd& x, const VectorXd& y, const MatrixXd& a, const VectorXd& c) {
    const Eigen::Index p = x.cols();
    const Eigen::Index q = a.rows();
    MatrixXd k = MatrixXd::Zero(p + q, p + q);
    k.topLeftCorner(p, p) = x.transpose() * x;
    k.topRightCorner(p, q) = a.transpose();
    k.bottomLeftCorner(q, p) = a;
    VectorXd rhs(p + q);
    rhs << x.transpose() * y, c;
    return Eigen::FullPivLU<MatrixXd>(k).solve(rhs).head(p);
}

/// Projector onto null(a) formed literally as I - a'(a a')^{-1} a.
inline MatrixXd literal_null_projector(const MatrixXd& a) {
    const Eigen::Index p = a.cols();
    if (a.rows() == 0) return MatrixXd::Identity(p, p);
    return MatrixXd::Identity(p, p) - a.transpose() * (a * a.transpose()).inverse() * a;
}

/// Sum over ordered tuples of distinct indices of y_{i1} X_{i1}' X_{i2} X_{i2}' ... X_{i_{l+1}}' e_k,
/// divided by the number of tuples. Written as plain nested recursion.
inline double brute_ustat(const MatrixXd& x, const VectorXd& y, int ell, Eigen::Index k) {
    const Eigen::Index n = x.rows();
    std::vector<Eigen::Index> idx;
    double total = 0.0;
    long long count = 0;
    std::function<void()> rec = [&]() {
        if (Eigen::Index(idx.size()) == ell + 1) {
            for (std::size_t a = 0; a < idx.size(); ++a)
                for (std::size_t b = a + 1; b < idx.size(); ++b)
                    if (idx[a] == idx[b]) return;
            Eigen::RowVectorXd row = y(idx[0]) * x.row(idx[0]);
            for (std::size_t s = 1; s < idx.size(); ++s) row = (row.dot(x.row(idx[s]))) * x.row(idx[s]);
            total += row(k);
            ++count;
            return;
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            idx.push_back(i);
            rec();
            idx.pop_back();
        }
    };
    rec();
    return total / double(count);
}

inline double sample_mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / double(v.size());
}

inline double sample_var(const std::vector<double>& v) {
    const double m = sample_mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / double(v.size() - 1);
}

/// The fixed six-observation, three-coefficient instance with a single sum-to-six constraint.
struct SmallInstance {
    MatrixXd x;
    VectorXd y;
    MatrixXd a;
    VectorXd c;
};

inline SmallInstance small_instance() {
    SmallInstance s;
    s.x.resize(6, 3);
    s.x << 1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 0, 0, 1, 1, 1, 0, 1;
    s.y.resize(6);
    s.y << 1, 2, 3, 3, 5, 4;
    s.a.resize(1, 3);
    s.a << 1, 1, 1;
    s.c.resize(1);
    s.c << 6;
    return s;
}

}  // namespace testing
