#include "constrex/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "constrex/stats.hpp"
#include "constrex/theory.hpp"

namespace constrex {

namespace {

void check_sigma_sq(double sigma_sq) {
    if (!(sigma_sq > 0.0) || !std::isfinite(sigma_sq)) throw Error(ErrorCode::InvalidInput, "sigma_sq must be positive");
}

void check_unit(const VectorXd& v, Eigen::Index p) {
    if (v.size() != p) throw Error(ErrorCode::DimensionMismatch, "contrast has the wrong length");
    if (std::abs(v.norm() - 1.0) > 1e-10) throw Error(ErrorCode::InvalidInput, "contrast must have unit norm");
}

/// Columns are the leave-one-out shifts beta_(i) - beta for i = 1..n.
MatrixXd leave_one_out_shifts(const Dataset<double>& data, const ConstraintSet<double>& cs, JackknifeMode mode) {
    const Eigen::Index n = data.n();
    const Eigen::Index p = data.p();
    if (cs.p() != p) throw Error(ErrorCode::DimensionMismatch, "constraint and design widths differ");
    if (n <= p + 1) throw Error(ErrorCode::NTooSmall, "jackknife needs n > p + 1");

    MatrixXd shifts(p, n);
    if (mode == JackknifeMode::Refit) {
        const VectorXd full = fit_cls(data, cs).beta_hat;
        for (Eigen::Index i = 0; i < n; ++i) {
            MatrixXd x(n - 1, p);
            VectorXd y(n - 1);
            x << data.x().topRows(i), data.x().bottomRows(n - i - 1);
            y << data.y().head(i), data.y().tail(n - i - 1);
            shifts.col(i) = fit_cls(Dataset<double>(std::move(x), std::move(y)), cs).beta_hat - full;
        }
        return shifts;
    }

    // beta = u + V alpha with V an orthonormal null-space basis; the reduced problem is OLS
    // on Z = X V, whose leave-one-out solution is alpha - M z_i r_i / (1 - h_i), M = (Z'Z)^{-1}.
    const VectorXd u = orthogonal_projector(cs).feasible_point;
    const MatrixXd v = null_space_basis(cs.a());
    const MatrixXd z = data.x() * v;
    const MatrixXd zz = z.transpose() * z;
    const double cond = spd_condition(zz);
    if (!std::isfinite(cond) || cond > 1e12) throw Error(ErrorCode::SingularGram, "reduced Gram matrix is singular");
    Eigen::LLT<MatrixXd> llt(zz);
    const VectorXd y_shift = data.y() - data.x() * u;
    const VectorXd alpha = llt.solve(z.transpose() * y_shift);
    const VectorXd resid = y_shift - z * alpha;
    const MatrixXd mz = llt.solve(z.transpose());  // d x n, columns M z_i
    const VectorXd leverage = (z.transpose().array() * mz.array()).colwise().sum().transpose();
    VectorXd scale(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double slack = 1.0 - leverage(i);
        if (!(slack > 1e-10)) throw Error(ErrorCode::SingularGram, "leave-one-out Gram matrix is singular");
        scale(i) = -resid(i) / slack;
    }
    shifts = v * (mz * scale.asDiagonal());
    return shifts;
}

}  // namespace

VarianceModel cls_asymptotic_variance(double sigma_sq, const CovarianceFactor<double>& sigma,
                                      const ConstraintSet<double>& cs, const AspectRatios& ratios) {
    check_sigma_sq(sigma_sq);
    ratios.require_moderate();
    VarianceModel vm;
    vm.kind = VarianceKind::ClsAsymptotic;
    vm.per_coordinate = (sigma_sq / ratios.effective_fraction()) * constrained_precision(sigma, cs).diagonal();
    vm.per_coordinate = vm.per_coordinate.cwiseMax(0.0);
    return vm;
}

VarianceModel cls_asymptotic_variance(double sigma_sq, const MatrixXd& sigma_matrix, const ConstraintSet<double>& cs,
                                      const AspectRatios& ratios) {
    return cls_asymptotic_variance(sigma_sq, CovarianceFactor<double>(sigma_matrix), cs, ratios);
}

double cls_contrast_variance(double sigma_sq, const CovarianceFactor<double>& sigma, const ConstraintSet<double>& cs,
                             const AspectRatios& ratios, const VectorXd& contrast) {
    check_sigma_sq(sigma_sq);
    ratios.require_moderate();
    check_unit(contrast, cs.p());
    const double s = contrast.dot(constrained_precision(sigma, cs) * contrast);
    return std::max(0.0, sigma_sq * s / ratios.effective_fraction());
}

VarianceModel jackknife_variance(const Dataset<double>& data, const ConstraintSet<double>& cs,
                                 const AspectRatios& ratios, JackknifeMode mode) {
    ratios.require_moderate();
    const MatrixXd shifts = leave_one_out_shifts(data, cs, mode);
    const double n = double(data.n());
    VarianceModel vm;
    vm.kind = VarianceKind::JackknifeCorrected;
    // ((n - 1) / n) sum_i (beta_(i) - beta)^2, reported on the sqrt(n) scale.
    vm.raw_per_coordinate = (n - 1.0) * shifts.rowwise().squaredNorm();
    vm.per_coordinate = ratios.effective_fraction() * vm.raw_per_coordinate;
    return vm;
}

JackknifeContrast jackknife_contrast_variance(const Dataset<double>& data, const ConstraintSet<double>& cs,
                                              const AspectRatios& ratios, const VectorXd& contrast,
                                              JackknifeMode mode) {
    ratios.require_moderate();
    check_unit(contrast, data.p());
    const MatrixXd shifts = leave_one_out_shifts(data, cs, mode);
    const double n = double(data.n());
    JackknifeContrast out;
    out.raw = (n - 1.0) / n * (contrast.transpose() * shifts).squaredNorm();
    out.corrected = ratios.effective_fraction() * out.raw;
    return out;
}

VarianceModel projected_oracle_variance(const VectorXd& beta, double sigma_sq, const CovarianceFactor<double>& sigma,
                                        const ConstraintSet<double>& cs, bool plug_in) {
    check_sigma_sq(sigma_sq);
    if (beta.size() != cs.p() || sigma.dimension() != cs.p()) {
        throw Error(ErrorCode::DimensionMismatch, "beta, covariance and constraints must share p");
    }
    // diag(P S P) with P = I - Q Q' and S = Sigma^{-1}, without forming P:
    // S_jj - 2 [Q o (S Q)] 1 + [(Q G) o Q] 1, G = Q' S Q.
    const MatrixXd& s = sigma.inverse();
    VectorXd s_p = s.diagonal();
    const MatrixXd basis = orthogonal_projector(cs).basis;
    if (basis.cols() > 0) {
        const MatrixXd k = s * basis;
        const MatrixXd g = basis.transpose() * k;
        s_p += ((basis * g).array() * basis.array() - 2.0 * basis.array() * k.array()).rowwise().sum().matrix();
    }
    const double signal = beta.dot(sigma.matrix() * beta);
    VarianceModel vm;
    vm.kind = VarianceKind::ProjectedOracleAsymptotic;
    vm.per_coordinate = beta.array().square().matrix() + (sigma_sq + signal) * s_p;
    vm.per_coordinate = vm.per_coordinate.cwiseMax(0.0);
    vm.approximate = plug_in;
    return vm;
}

VarianceModel projected_oracle_variance(const VectorXd& beta, double sigma_sq, const MatrixXd& sigma_matrix,
                                        const ConstraintSet<double>& cs, bool plug_in) {
    return projected_oracle_variance(beta, sigma_sq, CovarianceFactor<double>(sigma_matrix), cs, plug_in);
}

std::vector<CoordinateInference> coordinate_inference(const EstimateResult<double>& est, const VarianceModel& vm,
                                                      Eigen::Index n, double level) {
    if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::LevelOutOfRange, "level must lie in (0, 1)");
    const Eigen::Index p = est.beta_hat.size();
    if (vm.per_coordinate.size() != p) throw Error(ErrorCode::DimensionMismatch, "variance model has the wrong length");
    if (n < 1) throw Error(ErrorCode::InvalidInput, "n must be positive");
    const double z = stats::normal_quantile(1.0 - level / 2.0);

    std::vector<CoordinateInference> out(static_cast<std::size_t>(p));
    std::vector<double> pvals(static_cast<std::size_t>(p));
    for (Eigen::Index j = 0; j < p; ++j) {
        auto& ci = out[std::size_t(j)];
        ci.index = j;
        ci.estimate = est.beta_hat(j);
        const double var = vm.per_coordinate(j);
        if (!(var >= 0.0)) throw Error(ErrorCode::InvalidInput, "negative variance");
        ci.std_error = std::sqrt(var / double(n));
        ci.ci_low = ci.estimate - z * ci.std_error;
        ci.ci_high = ci.estimate + z * ci.std_error;
        if (ci.std_error == 0.0) {
            ci.p_value = ci.estimate != 0.0 ? 0.0 : 1.0;
        } else {
            ci.p_value = stats::normal_two_sided_p(ci.estimate / ci.std_error);
        }
        pvals[std::size_t(j)] = ci.p_value;
    }
    const auto holm = holm_bonferroni(pvals, level);
    for (std::size_t j = 0; j < out.size(); ++j) {
        out[j].p_adjusted = holm.adjusted(Eigen::Index(j));
        out[j].rejected = holm.rejected[j];
    }
    return out;
}

HolmResult holm_bonferroni(std::span<const double> p_values, double level) {
    if (!(level > 0.0 && level <= 1.0)) throw Error(ErrorCode::LevelOutOfRange, "level must lie in (0, 1]");
    const std::size_t m = p_values.size();
    for (double pv : p_values) {
        if (!(pv >= 0.0 && pv <= 1.0)) throw Error(ErrorCode::InvalidInput, "p-values must lie in [0, 1]");
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });

    HolmResult res;
    res.adjusted = VectorXd::Zero(Eigen::Index(m));
    res.rejected.assign(m, false);
    double running = 0.0;
    bool rejecting = true;
    for (std::size_t k = 0; k < m; ++k) {
        const std::size_t idx = order[k];
        const double mult = double(m - k);
        running = std::max(running, std::min(1.0, mult * p_values[idx]));
        res.adjusted(Eigen::Index(idx)) = running;
        if (rejecting && p_values[idx] < level / mult) {
            res.rejected[idx] = true;
        } else {
            rejecting = false;
        }
    }
    return res;
}

double estimate_noise_variance(const Dataset<double>& data, const VectorXd& beta, Eigen::Index q) {
    const Eigen::Index dof = data.n() - (data.p() - q);
    if (dof < 1) throw Error(ErrorCode::NTooSmall, "residual degrees of freedom n - (p - q) must be positive");
    return (data.y() - data.x() * beta).squaredNorm() / double(dof);
}

}  // namespace constrex
