#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "constrex/estimators.hpp"
#include "constrex/highdim.hpp"
#include "constrex/linalg.hpp"
#include "constrex/model.hpp"

namespace constrex {

enum class QRuleKind { Fixed, HalfPPlusOne, Grid };

/// How the number of constraints is chosen for each p of the grid.
struct QRule {
    QRuleKind kind = QRuleKind::Fixed;
    Eigen::Index fixed_q = 0;
    std::vector<Eigen::Index> grid;

    /// Values of q run at dimension p; for HalfPPlusOne this is floor(p/2) + 1.
    std::vector<Eigen::Index> values(Eigen::Index p) const;
};

/// Covariance family realized at each p of the grid. An explicit matrix fixes p.
struct CovarianceModel {
    enum class Family { Isotropic, Equicorrelated, Explicit };
    Family family = Family::Isotropic;
    double rho = 0.0;
    MatrixXd matrix;

    CovarianceSpec<double> at(Eigen::Index p) const;
};

struct BetaPrior {
    double mean = 5.0;
    double sd = 2.23606797749979;  // sqrt(5)
    /// When set, each drawn beta* is rescaled to this Euclidean norm.
    std::optional<double> norm;
};

enum class ReferenceMode { PerIteration, Fixed };
enum class BetaMode { Redraw, Fixed };

struct ScenarioConfig {
    std::string name = "scenario";
    Eigen::Index n = 200;
    Eigen::Index ref_n = 1000;
    std::vector<Eigen::Index> p_grid;
    QRule q_rule;
    CovarianceModel covariance;
    double sigma = 1.0;
    BetaPrior beta_prior;
    int iterations = 1000;
    std::uint64_t seed = 1;
    std::vector<EstimatorKind> estimators;
    std::optional<GlmLink> glm;
    ChebConfig cheb = ChebConfig::make();
    ReferenceMode reference_mode = ReferenceMode::PerIteration;
    BetaMode beta_mode = BetaMode::Redraw;
    /// Compute CI coverage and standardized errors for the estimators that have a variance formula.
    bool inference = true;
    double level = 0.05;
    Eigen::Index holdout_n = 100;
    int threads = 1;

    /// Throws ConfigInvalid on structural problems. (p, q) points with q >= p are not errors; they are skipped.
    void validate() const;
};

ScenarioConfig parse_scenario_config(std::string_view json_text);
ScenarioConfig load_scenario_config(const std::string& path);

struct IterationData {
    Dataset<double> data;
    ConstraintSet<double> constraints;
    TrueModel<double> truth;
    Dataset<double> holdout;
};

/// Draws one replicate. Every random quantity comes from its own Philox stream keyed by
/// cfg.seed and (p, q, iter_index), so the result does not depend on call order.
IterationData generate_iteration(const ScenarioConfig& cfg, Eigen::Index p, Eigen::Index q, int iter_index);

struct EstimatorSummary {
    EstimatorKind kind = EstimatorKind::Ols;
    double mse_mean = 0.0;
    double mse_sd = 0.0;
    double pred_mse_mean = 0.0;
    double gain_mean = 0.0;
    double gain_sd = 0.0;
    double coverage_rate = 0.0;
    double ks_stat = 0.0;
    int iters_ok = 0;
    int iters_skipped = 0;
};

struct McReport {
    std::string scenario;
    Eigen::Index n = 0;
    Eigen::Index p = 0;
    Eigen::Index q = 0;
    std::vector<EstimatorSummary> estimators;
    int iterations_completed = 0;

    const EstimatorSummary& at(EstimatorKind kind) const;
};

/// One report per (p, q) grid point, in grid order. Per-iteration failures are counted as
/// skipped. Results are identical for every thread count.
std::vector<McReport> run_scenario(const ScenarioConfig& cfg);

/// Columns: scenario,n,p,q,estimator,mse_mean,mse_sd,pred_mse_mean,gain_mean,gain_sd,
/// coverage_rate,ks_stat,iters_ok,iters_skipped
void write_mc_csv(std::ostream& out, const std::vector<McReport>& reports);

}  // namespace constrex
