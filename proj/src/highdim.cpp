#include "constrex/highdim.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace constrex {

namespace {

void check_bounds(SpectralBounds bounds) {
    if (!(bounds.lower > 0.0) || !(bounds.lower < bounds.upper) || !std::isfinite(bounds.upper)) {
        throw Error(ErrorCode::InvalidBounds, "spectral bounds need 0 < a < b");
    }
}

// Polynomial helpers over monomial coefficient vectors.
VectorXd poly_mul_linear(const VectorXd& poly, double slope, double offset) {
    VectorXd out = VectorXd::Zero(poly.size() + 1);
    out.head(poly.size()) += offset * poly;
    out.tail(poly.size()) += slope * poly;
    return out;
}

VectorXd poly_pad(const VectorXd& poly, Eigen::Index size) {
    VectorXd out = VectorXd::Zero(size);
    out.head(poly.size()) = poly;
    return out;
}

struct HermiteRule {
    VectorXd nodes;
    VectorXd weights;
};

// Golub-Welsch for the weight exp(-x^2).
HermiteRule make_hermite_rule(int n) {
    MatrixXd jacobi = MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) {
        jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(double(k) / 2.0);
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(jacobi);
    HermiteRule rule;
    rule.nodes = es.eigenvalues();
    rule.weights = std::sqrt(std::numbers::pi) * es.eigenvectors().row(0).transpose().array().square();
    return rule;
}

const HermiteRule& hermite_rule(int n) {
    static const HermiteRule r64 = make_hermite_rule(64);
    static const HermiteRule r128 = make_hermite_rule(128);
    if (n == 64) return r64;
    if (n == 128) return r128;
    throw Error(ErrorCode::InvalidInput, "Gauss-Hermite rules are tabulated for 64 and 128 nodes");
}

double logistic_slope(double z) {
    const double e = std::exp(-std::abs(z));
    return e / ((1.0 + e) * (1.0 + e));
}

// Above this variance the Gaussian is wide relative to the logistic bump and a fixed
// Hermite rule under-resolves it; switch to adaptive quadrature on the half line.
constexpr double kHermiteVarianceLimit = 4.0;

double logistic_slope_kronrod(double t) {
    const double scale = 1.0 / std::sqrt(2.0 * std::numbers::pi * t);
    auto integrand = [&](double z) { return 2.0 * logistic_slope(z) * scale * std::exp(-z * z / (2.0 * t)); };
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        integrand, 0.0, std::numeric_limits<double>::infinity(), 20, 1e-14);
}

}  // namespace

VectorXd cheb_coefficients(SpectralBounds bounds, int order_j) {
    check_bounds(bounds);
    if (order_j < 0) throw Error(ErrorCode::InvalidInput, "Chebyshev order must be >= 0");
    const double a = bounds.lower;
    const double b = bounds.upper;
    const double mid = 0.5 * (a + b);
    const double half = 0.5 * (b - a);
    const int nodes = std::max(256, 8 * (order_j + 1));

    // Discrete Chebyshev transform of 1/t at Chebyshev-Gauss nodes.
    VectorXd cheb = VectorXd::Zero(order_j + 1);
    for (int m = 0; m < nodes; ++m) {
        const double theta = std::numbers::pi * (double(m) + 0.5) / double(nodes);
        const double fx = 1.0 / (mid + half * std::cos(theta));
        for (int k = 0; k <= order_j; ++k) cheb(k) += fx * std::cos(double(k) * theta);
    }
    cheb *= 2.0 / double(nodes);
    cheb(0) *= 0.5;

    // T_k(u(t)) with u(t) = (t - mid) / half, expanded in powers of t.
    const double slope = 1.0 / half;
    const double offset = -mid / half;
    VectorXd out = VectorXd::Zero(order_j + 1);
    VectorXd t_prev = VectorXd::Ones(1);
    out(0) += cheb(0);
    if (order_j == 0) return out;
    VectorXd t_cur = poly_mul_linear(t_prev, slope, offset);
    out.head(2) += cheb(1) * t_cur;
    for (int k = 2; k <= order_j; ++k) {
        VectorXd t_next = 2.0 * poly_mul_linear(t_cur, slope, offset) - poly_pad(t_prev, k + 1);
        out.head(k + 1) += cheb(k) * t_next;
        t_prev = std::move(t_cur);
        t_cur = std::move(t_next);
    }
    return out;
}

double cheb_sup_error(const VectorXd& coefficients, SpectralBounds bounds, int grid_points) {
    check_bounds(bounds);
    double err = 0.0;
    for (int i = 0; i < grid_points; ++i) {
        const double t = bounds.lower + (bounds.upper - bounds.lower) * double(i) / double(grid_points - 1);
        double approx = 0.0;
        for (Eigen::Index l = coefficients.size() - 1; l >= 0; --l) approx = approx * t + coefficients(l);
        err = std::max(err, std::abs(approx - 1.0 / t));
    }
    return err;
}

ChebConfig ChebConfig::make(SpectralBounds bounds, int order_j) {
    ChebConfig cfg;
    cfg.order_j = order_j;
    cfg.bounds = bounds;
    cfg.coefficients = cheb_coefficients(bounds, order_j);
    return cfg;
}

namespace {

class TupleWalker {
public:
    TupleWalker(const Dataset<double>& data, int ell)
        : x_(data.x()), ell_(ell), used_(std::size_t(data.n()), 0), stack_(std::size_t(ell + 1)) {}

    /// Sum over ordered distinct tuples starting at `first` of y_first x_first' prod (x_s x_s').
    VectorXd run(Eigen::Index first, double y_first) {
        VectorXd acc = VectorXd::Zero(x_.cols());
        stack_[0] = y_first * x_.row(first).transpose();
        used_[std::size_t(first)] = 1;
        descend(1, acc);
        used_[std::size_t(first)] = 0;
        return acc;
    }

private:
    void descend(int depth, VectorXd& acc) {
        if (depth == ell_ + 1) {
            acc += stack_[std::size_t(depth - 1)];
            return;
        }
        const VectorXd& prev = stack_[std::size_t(depth - 1)];
        for (Eigen::Index s = 0; s < x_.rows(); ++s) {
            if (used_[std::size_t(s)]) continue;
            used_[std::size_t(s)] = 1;
            stack_[std::size_t(depth)] = prev.dot(x_.row(s)) * x_.row(s).transpose();
            descend(depth + 1, acc);
            used_[std::size_t(s)] = 0;
        }
    }

    const MatrixXd& x_;
    int ell_;
    std::vector<char> used_;
    std::vector<VectorXd> stack_;
};

}  // namespace

VectorXd ustat_moment_vector(const Dataset<double>& data, int ell) {
    if (ell < 0) throw Error(ErrorCode::InvalidInput, "moment order must be >= 0");
    const Eigen::Index n = data.n();
    if (n < ell + 1) throw Error(ErrorCode::NTooSmall, "U-statistic of order ell needs n >= ell + 1");
    if (std::pow(double(n), double(ell + 1)) > kUstatEnumerationLimit) {
        throw Error(ErrorCode::TooLarge, "tuple enumeration n^(ell+1) exceeds the 1e8 guard");
    }
    double tuples = 1.0;
    for (int s = 0; s <= ell; ++s) tuples *= double(n - s);

    // One partial sum per leading index, reduced in index order.
    MatrixXd partial(data.p(), n);
    TupleWalker walker(data, ell);
    for (Eigen::Index i = 0; i < n; ++i) partial.col(i) = walker.run(i, data.y()(i));
    VectorXd total = VectorXd::Zero(data.p());
    for (Eigen::Index i = 0; i < n; ++i) total += partial.col(i);
    return total / tuples;
}

double ustat_moment(const Dataset<double>& data, int ell, Eigen::Index k) {
    if (k < 0 || k >= data.p()) throw Error(ErrorCode::InvalidInput, "coordinate index out of range");
    return ustat_moment_vector(data, ell)(k);
}

EstimateResult<double> fit_cheb_mom(const Dataset<double>& data, const ChebConfig& cfg,
                                    const ConstraintSet<double>& cs) {
    check_bounds(cfg.bounds);
    if (cfg.coefficients.size() != cfg.order_j + 1) {
        throw Error(ErrorCode::InvalidInput, "Chebyshev coefficient vector must have J + 1 entries");
    }
    if (cs.p() != data.p()) throw Error(ErrorCode::DimensionMismatch, "constraint and design widths differ");
    VectorXd beta = VectorXd::Zero(data.p());
    for (int ell = 0; ell <= cfg.order_j; ++ell) {
        if (cfg.coefficients(ell) == 0.0) continue;
        beta += cfg.coefficients(ell) * ustat_moment_vector(data, ell);
    }
    EstimateResult<double> res;
    res.beta_hat = orthogonal_projector(cs).project(beta);
    res.kind = EstimatorKind::ChebMom;
    res.gram_condition = cfg.bounds.upper / cfg.bounds.lower;
    res.feasibility_residual = cs.residual(res.beta_hat);
    return res;
}

double logistic_slope_gauss_hermite(double t, int nodes) {
    const auto& rule = hermite_rule(nodes);
    const double scale = std::sqrt(2.0 * t);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < rule.nodes.size(); ++i) sum += rule.weights(i) * logistic_slope(scale * rule.nodes(i));
    return sum / std::sqrt(std::numbers::pi);
}

double glm_f(GlmLink link, double t) {
    if (!(t >= 0.0)) throw Error(ErrorCode::NegativeVariance, "glm_f needs t >= 0");
    if (link.variant == GlmLinkKind::Identity) return 1.0;
    if (t == 0.0) return 0.25;
    if (t <= kHermiteVarianceLimit) return logistic_slope_gauss_hermite(t, 64);
    return logistic_slope_kronrod(t);
}

double glm_h(GlmLink link, double u, double t_max) {
    if (!(u >= 0.0)) throw Error(ErrorCode::NoRoot, "moment U is negative");
    if (link.variant == GlmLinkKind::Identity) return u;
    if (u == 0.0) return 0.0;
    auto excess = [&](double t) {
        const double f = glm_f(link, t);
        return f * f * t - u;
    };
    if (excess(t_max) < 0.0) throw Error(ErrorCode::NoRoot, "moment U exceeds the range of f(t)^2 t on [0, t_max]");
    double lo = 0.0;
    double hi = t_max;
    for (int it = 0; it < 300 && hi - lo > 1e-15 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (excess(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

GlmMoments glm_moments(const Dataset<double>& data, const CovarianceFactor<double>& sigma) {
    if (sigma.dimension() != data.p()) throw Error(ErrorCode::DimensionMismatch, "covariance and design widths differ");
    const Eigen::Index n = data.n();
    if (n < 2) throw Error(ErrorCode::NTooSmall, "GLM moments need n >= 2");
    const VectorXd s = data.x().transpose() * data.y();
    const VectorXd sigma_inv_s = sigma.llt().solve(s);
    // sum_{i != j} y_i y_j x_i' S^{-1} x_j = s' S^{-1} s - sum_i y_i^2 x_i' S^{-1} x_i
    const MatrixXd whitened = sigma.llt().matrixL().solve(data.x().transpose());
    const double diag = (whitened.colwise().squaredNorm().transpose().array() * data.y().array().square()).sum();
    GlmMoments m;
    m.u = (s.dot(sigma_inv_s) - diag) / (double(n) * double(n - 1));
    m.v = sigma_inv_s / double(n);
    return m;
}

EstimateResult<double> fit_glm_projected(const Dataset<double>& data, const CovarianceFactor<double>& sigma,
                                         GlmLink link, const ConstraintSet<double>& cs) {
    if (cs.p() != data.p()) throw Error(ErrorCode::DimensionMismatch, "constraint and design widths differ");
    const GlmMoments m = glm_moments(data, sigma);
    VectorXd beta = m.v;
    if (link.variant != GlmLinkKind::Identity) {
        const double signal = glm_h(link, m.u);
        beta /= glm_f(link, signal);
    }
    EstimateResult<double> res;
    res.beta_hat = orthogonal_projector(cs).project(beta);
    res.kind = EstimatorKind::Glm;
    res.gram_condition = sigma.condition();
    res.feasibility_residual = cs.residual(res.beta_hat);
    return res;
}

EstimateResult<double> fit_glm_projected(const Dataset<double>& data, const MatrixXd& sigma_matrix, GlmLink link,
                                         const ConstraintSet<double>& cs) {
    return fit_glm_projected(data, CovarianceFactor<double>(sigma_matrix), link, cs);
}

}  // namespace constrex
