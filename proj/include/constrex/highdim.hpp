#pragma once

#include <Eigen/Dense>

#include <utility>

#include "constrex/estimators.hpp"
#include "constrex/linalg.hpp"
#include "constrex/model.hpp"

namespace constrex {

/// Interval [lower, upper] assumed to contain the spectrum of Sigma.
struct SpectralBounds {
    double lower = 0.2;
    double upper = 5.0;
};

/// Polynomial approximation of t -> 1/t used to stand in for Sigma^{-1}.
struct ChebConfig {
    int order_j = 3;
    SpectralBounds bounds;
    /// Monomial-basis coefficients c_0..c_J, so that 1/t ~ sum_l c_l t^l on the bounds.
    VectorXd coefficients;

    static ChebConfig make(SpectralBounds bounds = {}, int order_j = 3);
};

/// Chebyshev projection of 1/t on [a, b] truncated at degree J, re-expanded in powers of t.
VectorXd cheb_coefficients(SpectralBounds bounds, int order_j);

/// Sup-norm error of sum_l c_l t^l against 1/t over `grid_points` equispaced points of the bounds.
double cheb_sup_error(const VectorXd& coefficients, SpectralBounds bounds, int grid_points = 1000);

inline constexpr double kUstatEnumerationLimit = 1e8;

/// U-statistic estimate of E[y X'] Sigma^ell e_k by enumeration over ordered tuples of
/// ell + 1 distinct observations.
double ustat_moment(const Dataset<double>& data, int ell, Eigen::Index k);

/// All p coordinates of the same U-statistic at once. The sum is reduced in a fixed order
/// over the first tuple index, so the value does not depend on how the work is split.
VectorXd ustat_moment_vector(const Dataset<double>& data, int ell);

/// Chebyshev/U-statistic method-of-moments estimate, projected onto the constraint set.
EstimateResult<double> fit_cheb_mom(const Dataset<double>& data, const ChebConfig& cfg,
                                    const ConstraintSet<double>& cs);

enum class GlmLinkKind { Identity, Logistic };

struct GlmLink {
    GlmLinkKind variant = GlmLinkKind::Identity;
};

inline constexpr double kGlmRootUpper = 1e6;

/// f(t) = E[g'(Z)] with Z ~ N(0, t).
double glm_f(GlmLink link, double t);

/// Inverse of t -> f(t)^2 t, i.e. the signal strength b' Sigma b implied by the moment U.
double glm_h(GlmLink link, double u, double t_max = kGlmRootUpper);

/// Gauss-Hermite estimate of E[expit'(Z)], Z ~ N(0, t), with an explicit node count.
double logistic_slope_gauss_hermite(double t, int nodes);

struct GlmMoments {
    double u = 0.0;  // off-diagonal U-statistic estimate of E[y'X] Sigma^{-1} E[X'y]
    VectorXd v;      // (1/n) sum_i y_i Sigma^{-1} X_i
};

GlmMoments glm_moments(const Dataset<double>& data, const CovarianceFactor<double>& sigma);

EstimateResult<double> fit_glm_projected(const Dataset<double>& data, const CovarianceFactor<double>& sigma,
                                         GlmLink link, const ConstraintSet<double>& cs);
EstimateResult<double> fit_glm_projected(const Dataset<double>& data, const MatrixXd& sigma_matrix, GlmLink link,
                                         const ConstraintSet<double>& cs);

}  // namespace constrex
