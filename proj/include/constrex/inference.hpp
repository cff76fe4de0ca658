#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "constrex/estimators.hpp"
#include "constrex/linalg.hpp"
#include "constrex/model.hpp"

namespace constrex {

enum class VarianceKind { ClsAsymptotic, JackknifeCorrected, ProjectedOracleAsymptotic };

/// Per-coordinate variances of sqrt(n) (estimate_j - beta*_j). Divide by n for squared
/// standard errors of the estimate itself.
struct VarianceModel {
    VarianceKind kind = VarianceKind::ClsAsymptotic;
    VectorXd per_coordinate;
    /// Uncorrected leave-one-out values (jackknife only; empty otherwise), on the same sqrt(n) scale.
    VectorXd raw_per_coordinate;
    /// Set when an estimate was plugged in for an oracle quantity.
    bool approximate = false;
};

struct CoordinateInference {
    Eigen::Index index = 0;
    double estimate = 0.0;
    double std_error = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double p_value = 1.0;
    double p_adjusted = 1.0;
    bool rejected = false;
};

struct HolmResult {
    VectorXd adjusted;
    std::vector<bool> rejected;
};

enum class JackknifeMode {
    /// Rank-one (Sherman-Morrison) downdates of the reduced Gram matrix.
    Downdate,
    /// n explicit constrained refits; slow, for verification.
    Refit,
};

/// sigma^2 s_{C,j} / (1 - (1 - gamma) alpha) with s_{C,j} the diagonal of the constrained precision.
VarianceModel cls_asymptotic_variance(double sigma_sq, const CovarianceFactor<double>& sigma,
                                      const ConstraintSet<double>& cs, const AspectRatios& ratios);
VarianceModel cls_asymptotic_variance(double sigma_sq, const MatrixXd& sigma_matrix, const ConstraintSet<double>& cs,
                                      const AspectRatios& ratios);

/// Same limit for a unit-norm contrast v' beta.
double cls_contrast_variance(double sigma_sq, const CovarianceFactor<double>& sigma, const ConstraintSet<double>& cs,
                             const AspectRatios& ratios, const VectorXd& contrast);

struct JackknifeContrast {
    double raw = 0.0;
    double corrected = 0.0;
};

/// Leave-one-out variance of the CLS fit, multiplied by (1 - (1 - gamma) alpha) to undo the
/// proportional-regime inflation. Both raw and corrected values are returned on the sqrt(n) scale.
VarianceModel jackknife_variance(const Dataset<double>& data, const ConstraintSet<double>& cs,
                                 const AspectRatios& ratios, JackknifeMode mode = JackknifeMode::Downdate);

/// Jackknife for a unit-norm contrast v' beta, on the scale of Var(v' beta_cls) (not multiplied by n).
JackknifeContrast jackknife_contrast_variance(const Dataset<double>& data, const ConstraintSet<double>& cs,
                                              const AspectRatios& ratios, const VectorXd& contrast,
                                              JackknifeMode mode = JackknifeMode::Downdate);

/// (beta*_j)^2 + (sigma^2 + beta*' Sigma beta*) s_{P,j}, s_{P,j} = [P Sigma^{-1} P]_jj.
/// With plug_in = true, `beta` is an estimate and the result is flagged approximate.
VarianceModel projected_oracle_variance(const VectorXd& beta, double sigma_sq, const CovarianceFactor<double>& sigma,
                                        const ConstraintSet<double>& cs, bool plug_in = false);
VarianceModel projected_oracle_variance(const VectorXd& beta, double sigma_sq, const MatrixXd& sigma_matrix,
                                        const ConstraintSet<double>& cs, bool plug_in = false);

/// Wald intervals and tests of beta_j = 0, Holm-adjusted at the same level.
std::vector<CoordinateInference> coordinate_inference(const EstimateResult<double>& est, const VarianceModel& vm,
                                                      Eigen::Index n, double level = 0.05);

/// Step-down Holm procedure. Rejects p_(k) while p_(k) < level / (m - k + 1).
HolmResult holm_bonferroni(std::span<const double> p_values, double level = 0.05);

/// ||y - X b||^2 / (n - (p - q)), treating the constrained fit as having p - q free parameters.
double estimate_noise_variance(const Dataset<double>& data, const VectorXd& beta, Eigen::Index q);

}  // namespace constrex
