#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "constrex/highdim.hpp"
#include "constrex/inference.hpp"
#include "constrex/io.hpp"
#include "constrex/sim.hpp"
#include "constrex/stats.hpp"
#include "constrex/theory.hpp"
#include "support.hpp"

using namespace constrex;
using testing::Gen;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

/// A = [I_q : 0] S_N with S_N the second moment of an N x p standard normal reference sample.
ConstraintSet<double> reference_constraints(Gen& g, Eigen::Index p, Eigen::Index q, const VectorXd& beta,
                                            Eigen::Index ref_n = 1000) {
    MatrixXd b = MatrixXd::Zero(q, p);
    b.leftCols(q).setIdentity();
    return build_reference_constraints(b, g.normal_matrix(ref_n, p), beta);
}

VectorXd prior_beta(Gen& g, Eigen::Index p) {
    VectorXd beta(p);
    for (Eigen::Index j = 0; j < p; ++j) beta(j) = 5.0 + std::sqrt(5.0) * g.normal();
    return beta;
}

ScenarioConfig iso_config(Eigen::Index p, std::vector<Eigen::Index> qs, int iterations,
                          std::vector<EstimatorKind> kinds) {
    ScenarioConfig cfg;
    cfg.name = "acceptance";
    cfg.n = 200;
    cfg.p_grid = {p};
    cfg.q_rule.kind = QRuleKind::Grid;
    cfg.q_rule.grid = std::move(qs);
    cfg.iterations = iterations;
    cfg.seed = 20240601;
    cfg.estimators = std::move(kinds);
    return cfg;
}

Outcome kkt_equivalence() {
    Gen g(1001);
    double worst = 0.0;
    const auto s = testing::small_instance();
    worst = testing::rel_err(fit_cls(Dataset<double>(s.x, s.y), validate_constraints<double>(s.a, s.c)).beta_hat,
                             testing::kkt_solve(s.x, s.y, s.a, s.c));
    for (int rep = 0; rep < 100; ++rep) {
        const Eigen::Index p = 2 + Eigen::Index(g.uniform() * 4);
        const Eigen::Index q = 1 + Eigen::Index(g.uniform() * std::min<Eigen::Index>(2, p - 1));
        const Eigen::Index n = p + 2 + Eigen::Index(g.uniform() * (12 - p - 1));
        const MatrixXd x = g.normal_matrix(n, p);
        const VectorXd y = g.normal_vector(n);
        const MatrixXd a = g.normal_matrix(q, p);
        const VectorXd c = g.normal_vector(q);
        const VectorXd b = fit_cls(Dataset<double>(x, y), validate_constraints<double>(a, c)).beta_hat;
        worst = std::max(worst, testing::rel_err(b, testing::kkt_solve(x, y, a, c)));
    }
    return {worst <= 1e-10, "max relative error " + fmt(worst) + " over 101 instances"};
}

Outcome conditional_identity() {
    Gen g(1002);
    const Eigen::Index n = 40, p = 10, q = 3;
    const int draws = 100000;
    int agree = 0;
    for (int d = 0; d < 20; ++d) {
        const MatrixXd x = g.normal_matrix(n, p);
        const VectorXd beta = g.normal_vector(p);
        const MatrixXd a = g.normal_matrix(q, p);
        const auto cs = validate_constraints<double>(a, a * beta);
        const double risk = conditional_minimax_risk(x, cs, 1.0);
        const VectorXd mean_y = x * beta;
        double s = 0.0, s2 = 0.0;
        for (int k = 0; k < draws; ++k) {
            const Dataset<double> data(x, mean_y + g.normal_vector(n));
            const double loss = (fit_cls(data, cs).beta_hat - beta).squaredNorm();
            s += loss;
            s2 += loss * loss;
        }
        const double m = s / draws;
        const double se = std::sqrt((s2 / draws - m * m) / (draws - 1));
        agree += std::abs(m - risk) < 3.0 * se ? 1 : 0;
    }
    return {agree >= 18, std::to_string(agree) + "/20 designs within 3 Monte Carlo SE"};
}

Outcome isotropic_risk() {
    ScenarioConfig cfg = iso_config(0, {}, 1000, {EstimatorKind::Cls});
    cfg.p_grid = {50, 100, 150};
    cfg.q_rule.kind = QRuleKind::HalfPPlusOne;
    cfg.inference = false;
    double worst = 0.0;
    for (const auto& r : run_scenario(cfg)) {
        const double free = double(r.p - r.q) / double(r.n);
        const double target = free / (1.0 - free);
        worst = std::max(worst, std::abs(r.at(EstimatorKind::Cls).mse_mean / target - 1.0));
    }
    return {worst <= 0.05, "max relative deviation " + fmt(worst)};
}

Outcome gain_mean() {
    auto cfg = iso_config(100, {10}, 2000, {EstimatorKind::Ols, EstimatorKind::Projected});
    cfg.inference = false;
    const auto rep = run_scenario(cfg);
    const double g = rep[0].at(EstimatorKind::Projected).gain_mean;
    const double scaled = 200.0 * g / 10.0;
    const bool ok = std::abs(g / 0.1 - 1.0) <= 0.10 && std::abs(scaled / 2.0 - 1.0) <= 0.10;
    return {ok, "mean gain " + fmt(g) + ", n*gain/q " + fmt(scaled)};
}

Outcome gain_distribution() {
    Gen g(1005);
    const Eigen::Index n = 40, p = 10, q = 2;
    const MatrixXd x = g.normal_matrix(n, p);
    const VectorXd beta = g.normal_vector(p);
    const MatrixXd a = g.normal_matrix(q, p);
    const auto cs = validate_constraints<double>(a, a * beta);
    const auto pair = orthogonal_projector(cs);
    const VectorXd w = gain_eigen_weights(x, cs);
    std::vector<double> gains;
    gains.reserve(100000);
    const VectorXd mean_y = x * beta;
    for (int k = 0; k < 100000; ++k) {
        const Dataset<double> data(x, mean_y + g.normal_vector(n));
        const auto ls = fit_ols(data);
        const auto pr = project_estimate(ls, EstimatorKind::Projected, pair, cs);
        gains.push_back(double(n) * ((ls.beta_hat - beta).squaredNorm() - (pr.beta_hat - beta).squaredNorm()));
    }
    std::vector<double> mixture;
    mixture.reserve(1000000);
    for (int k = 0; k < 1000000; ++k) {
        double v = 0.0;
        for (Eigen::Index i = 0; i < q; ++i) {
            const double z = g.normal();
            v += w(i) * z * z;
        }
        mixture.push_back(v);
    }
    const double d = stats::ks_two_sample_statistic(gains, mixture);
    const double n_eff = 1e5 * 1e6 / (1e5 + 1e6);
    const double pv = stats::ks_pvalue(d, n_eff);
    return {pv > 0.01, "KS distance " + fmt(d) + ", p-value " + fmt(pv)};
}

Outcome normality_coverage() {
    auto cfg = iso_config(100, {50}, 2000, {EstimatorKind::Cls});
    const auto& cls = run_scenario(cfg)[0].at(EstimatorKind::Cls);
    const double crit = stats::ks_critical_value(0.01, double(cls.iters_ok));
    const bool ok = cls.ks_stat < crit && cls.coverage_rate >= 0.93 && cls.coverage_rate <= 0.97;
    return {ok, "KS " + fmt(cls.ks_stat) + " (1% critical " + fmt(crit) + "), coverage " + fmt(cls.coverage_rate)};
}

Outcome jackknife() {
    Gen g(1007);
    const Eigen::Index n = 200, p = 100, q = 50;
    const VectorXd beta = prior_beta(g, p);
    const auto cs = reference_constraints(g, p, q, beta);
    const auto ratios = AspectRatios::from_dims(n, p, q);
    std::vector<double> est, raw, corrected;
    for (int it = 0; it < 500; ++it) {
        const MatrixXd x = g.normal_matrix(n, p);
        const Dataset<double> data(x, x * beta + g.normal_vector(n));
        est.push_back(fit_cls(data, cs).beta_hat(0));
        const auto vm = jackknife_variance(data, cs, ratios);
        raw.push_back(vm.raw_per_coordinate(0) / double(n));
        corrected.push_back(vm.per_coordinate(0) / double(n));
    }
    const double emp = testing::sample_var(est);
    const double ratio_raw = testing::sample_mean(raw) / emp;
    const double ratio_cor = testing::sample_mean(corrected) / emp;
    const double target = 1.0 / ratios.effective_fraction();
    const bool ok = std::abs(ratio_raw / target - 1.0) <= 0.10 && std::abs(ratio_cor - 1.0) <= 0.10;
    return {ok, "raw/empirical " + fmt(ratio_raw) + " (target " + fmt(target) + "), corrected/empirical " +
                    fmt(ratio_cor)};
}

Outcome projected_oracle_var() {
    Gen g(1008);
    const Eigen::Index n = 200, p = 300, q = 150;
    VectorXd beta = prior_beta(g, p);
    beta /= beta.norm();
    const auto cs = reference_constraints(g, p, q, beta);
    const CovarianceFactor<double> sigma{MatrixXd(MatrixXd::Identity(p, p))};
    const auto pair = orthogonal_projector(cs);
    const double target = projected_oracle_variance(beta, 1.0, sigma, cs).per_coordinate(0);
    std::vector<double> z;
    for (int it = 0; it < 2000; ++it) {
        const MatrixXd x = g.normal_matrix(n, p);
        const Dataset<double> data(x, x * beta + g.normal_vector(n));
        const auto est = fit_projected_oracle(data, sigma, pair, cs);
        z.push_back(std::sqrt(double(n)) * (est.beta_hat(0) - beta(0)));
    }
    const double emp = testing::sample_var(z);
    return {std::abs(emp / target - 1.0) <= 0.10, "empirical " + fmt(emp) + " vs formula " + fmt(target)};
}

Outcome figure_ordering() {
    auto s2 = load_scenario_config(std::string(CONSTREX_CONFIG_DIR) + "/s2_m2.json");
    s2.inference = false;
    int ordered = 0, valid = 0;
    for (const auto& r : run_scenario(s2)) {
        if (r.q >= r.p) continue;
        ++valid;
        const double ols = r.at(EstimatorKind::Ols).mse_mean;
        const double proj = r.at(EstimatorKind::Projected).mse_mean;
        const double cls = r.at(EstimatorKind::Cls).mse_mean;
        ordered += (cls <= proj && proj <= ols) ? 1 : 0;
    }
    auto s3 = load_scenario_config(std::string(CONSTREX_CONFIG_DIR) + "/s3_m1.json");
    s3.iterations = 100;
    s3.inference = false;
    int s3_ok = 0, s3_valid = 0;
    for (const auto& r : run_scenario(s3)) {
        if (r.q == 0 || r.q >= r.p) continue;
        ++s3_valid;
        s3_ok += r.at(EstimatorKind::ProjectedOracle).mse_mean <= r.at(EstimatorKind::Oracle).mse_mean ? 1 : 0;
    }
    const bool ok = valid > 0 && s3_valid > 0 && ordered >= 0.90 * valid && s3_ok >= 0.95 * s3_valid;
    return {ok, "s2/m2 ordered at " + std::to_string(ordered) + "/" + std::to_string(valid) +
                    " points; s3/m1 ordered at " + std::to_string(s3_ok) + "/" + std::to_string(s3_valid)};
}

Outcome ustat_oracle() {
    Gen g(1010);
    double worst = 0.0;
    for (int n : {3, 5, 8}) {
        const MatrixXd x = g.normal_matrix(n, 3);
        const VectorXd y = g.normal_vector(n);
        const Dataset<double> data(x, y);
        for (int ell : {1, 2}) {
            for (Eigen::Index k = 0; k < 3; ++k) {
                const double oracle = testing::brute_ustat(x, y, ell, k);
                worst = std::max(worst, std::abs(ustat_moment(data, ell, k) - oracle) / std::max(1.0, std::abs(oracle)));
            }
        }
    }
    MatrixXd sigma(2, 2);
    sigma << 1.0, 0.4, 0.4, 1.5;
    const Eigen::Vector2d beta(1.0, -0.5);
    bool unbiased = true;
    std::string mc;
    for (int ell : {1, 2}) {
        std::vector<double> vals;
        for (int rep = 0; rep < 5000; ++rep) {
            const MatrixXd x = g.correlated_rows(6, sigma);
            vals.push_back(ustat_moment(Dataset<double>(x, x * beta + g.normal_vector(6)), ell, 0));
        }
        MatrixXd power = sigma;
        for (int l = 0; l < ell; ++l) power = power * sigma;
        const double truth = beta.dot(power.col(0));
        const double se = std::sqrt(testing::sample_var(vals) / double(vals.size()));
        const double zscore = (testing::sample_mean(vals) - truth) / se;
        unbiased = unbiased && std::abs(zscore) < 3.0;
        mc += " z(l=" + std::to_string(ell) + ")=" + fmt(zscore);
    }
    return {worst <= 1e-12 && unbiased, "max enumeration error " + fmt(worst) + ";" + mc};
}

Outcome glm_reduction() {
    Gen g(1011);
    double worst = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
        const Eigen::Index n = 40, p = 8;
        const MatrixXd l = g.normal_matrix(p, p);
        const MatrixXd sigma = l * l.transpose() / double(p) + MatrixXd::Identity(p, p);
        const MatrixXd x = g.correlated_rows(n, sigma);
        const Dataset<double> data(x, x * g.normal_vector(p) + g.normal_vector(n));
        const auto cs = validate_constraints<double>(g.normal_matrix(3, p), g.normal_vector(3));
        const VectorXd a = fit_glm_projected(data, sigma, {GlmLinkKind::Identity}, cs).beta_hat;
        worst = std::max(worst, testing::rel_err(a, fit_projected_oracle(data, sigma, cs).beta_hat));
    }

    const Eigen::Index n = 500, p = 20, q = 5;
    VectorXd beta = g.normal_vector(p);
    beta /= beta.norm();
    MatrixXd a = MatrixXd::Zero(q, p);
    a.leftCols(q).setIdentity();
    const auto cs = validate_constraints<double>(a, a * beta);
    const CovarianceFactor<double> sigma{MatrixXd(MatrixXd::Identity(p, p))};
    const auto pair = orthogonal_projector(cs);
    VectorXd sum = VectorXd::Zero(p), sum_sq = VectorXd::Zero(p);
    const int seeds = 500;
    for (int s = 0; s < seeds; ++s) {
        const MatrixXd x = g.normal_matrix(n, p);
        const VectorXd eta = x * beta;
        VectorXd y(n);
        for (Eigen::Index i = 0; i < n; ++i) y(i) = g.uniform() < 1.0 / (1.0 + std::exp(-eta(i))) ? 1.0 : 0.0;
        const VectorXd b = fit_glm_projected(Dataset<double>(x, y), sigma, {GlmLinkKind::Logistic}, cs).beta_hat;
        sum += b;
        sum_sq += b.cwiseProduct(b);
    }
    const VectorXd mean = sum / seeds;
    const VectorXd var = ((sum_sq - seeds * mean.cwiseProduct(mean)) / (seeds - 1)).cwiseMax(0.0);
    const VectorXd se = (var / seeds).cwiseSqrt();
    int inside = 0;
    double worst_z = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
        const double dev = std::abs(mean(j) - beta(j));
        inside += dev <= 3.0 * se(j) + 1e-12 ? 1 : 0;
        if (se(j) > 0) worst_z = std::max(worst_z, dev / se(j));
    }
    return {worst <= 1e-10 && inside == p, "identity-link max relative difference " + fmt(worst) + "; logistic " +
                                               std::to_string(inside) + "/" + std::to_string(p) +
                                               " coordinates within 3 SE (max |z| " + fmt(worst_z) + ")"};
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(CONSTREX_CLI) + " " + args;
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism() {
    const auto dir = std::filesystem::temp_directory_path() / ("constrex_acceptance_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    const std::string cfg = std::string(CONSTREX_CONFIG_DIR) + "/s2_m1_smoke.json";
    const int a = run_cli("simulate " + cfg + " --threads 1 -o " + (dir / "t1.csv").string());
    const int b = run_cli("simulate " + cfg + " --threads 8 -o " + (dir / "t8.csv").string());
    bool same = false;
    if (a == 0 && b == 0) same = io::read_text(dir / "t1.csv") == io::read_text(dir / "t8.csv");
    std::filesystem::remove_all(dir);
    return {same, same ? "threads 1 and 8 outputs are byte-identical" : "outputs differ or the run failed"};
}

struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Outcome()> run;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "KKT oracle equivalence", 1.0, kkt_equivalence},
        {2, "conditional risk identity", 120.0, conditional_identity},
        {3, "isotropic risk adherence", 300.0, isotropic_risk},
        {4, "expected projection gain", 180.0, gain_mean},
        {5, "gain chi-square mixture", 120.0, gain_distribution},
        {6, "CLS normality and coverage", 300.0, normality_coverage},
        {7, "jackknife variance correction", 600.0, jackknife},
        {8, "projected oracle variance", 300.0, projected_oracle_var},
        {9, "simulation MSE ordering", 600.0, figure_ordering},
        {10, "U-statistic oracle", 120.0, ustat_oracle},
        {11, "GLM reduction and consistency", 300.0, glm_reduction},
        {12, "thread-count determinism", 60.0, determinism},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = secs < c.budget_seconds;
        const bool pass = out.pass && in_time;
        failures += pass ? 0 : 1;
        std::cout << (pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << out.detail << " ("
                  << fmt(secs) << " s of " << fmt(c.budget_seconds) << " s budget" << (in_time ? "" : ", over budget")
                  << ")" << std::endl;
    }
    std::cout << (criteria.size() - std::size_t(failures)) << "/" << criteria.size() << " criteria passed" << std::endl;
    return failures == 0 ? 0 : 1;
}
