#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "constrex/error.hpp"
#include "constrex/estimators.hpp"
#include "constrex/highdim.hpp"
#include "constrex/inference.hpp"
#include "constrex/io.hpp"
#include "constrex/log.hpp"
#include "constrex/model.hpp"
#include "constrex/sim.hpp"
#include "constrex/theory.hpp"

namespace fs = std::filesystem;
using namespace constrex;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

struct ConstraintFiles {
    std::string a_csv;
    std::string c_csv;
};

ConstraintSet<double> load_constraints(const ConstraintFiles& files, Eigen::Index p) {
    if (files.a_csv.empty() != files.c_csv.empty()) {
        throw Error(ErrorCode::InvalidInput, "--a and --c must be given together");
    }
    if (files.a_csv.empty()) return ConstraintSet<double>::empty(p);
    return ConstraintSet<double>(io::read_csv_matrix(files.a_csv), io::read_csv_vector(files.c_csv));
}

Dataset<double> load_dataset(const std::string& x_csv, const std::string& y_csv) {
    return Dataset<double>(io::read_csv_matrix(x_csv), io::read_csv_vector(y_csv));
}

GlmLink parse_link(const std::string& s) {
    if (s == "identity") return GlmLink{GlmLinkKind::Identity};
    if (s == "logistic") return GlmLink{GlmLinkKind::Logistic};
    throw Error(ErrorCode::InvalidInput, "unknown link '" + s + "'");
}

json json_number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// -- estimate ---------------------------------------------------------------

struct EstimateArgs {
    std::string x_csv, y_csv, sigma_csv, out;
    ConstraintFiles cons;
    std::string kind = "cls";
    std::string link = "identity";
    int cheb_order = 3;
    double lower = 0.2;
    double upper = 5.0;
    bool fallback = false;
};

int cmd_estimate(const EstimateArgs& args) {
    const auto kind = parse_estimator_kind(args.kind);
    if (!kind) throw Error(ErrorCode::InvalidInput, "unknown estimator '" + args.kind + "'");
    const auto data = load_dataset(args.x_csv, args.y_csv);
    const auto cs = load_constraints(args.cons, data.p());
    FitOptions opts;
    opts.fallback_identity_gram = args.fallback;

    auto need_sigma = [&] {
        if (args.sigma_csv.empty()) throw Error(ErrorCode::InvalidInput, "--sigma is required for " + args.kind);
        return CovarianceFactor<double>(io::read_csv_matrix(args.sigma_csv));
    };

    EstimateResult<double> est;
    switch (*kind) {
        case EstimatorKind::Ols: est = fit_ols(data, opts); break;
        case EstimatorKind::Projected: est = fit_projected(data, cs, opts); break;
        case EstimatorKind::Cls: est = fit_cls(data, cs, opts); break;
        case EstimatorKind::Oracle: est = fit_oracle(data, need_sigma()); break;
        case EstimatorKind::ProjectedOracle:
            est = fit_projected_oracle(data, need_sigma(), orthogonal_projector(cs), cs);
            break;
        case EstimatorKind::ChebMom:
            est = fit_cheb_mom(data, ChebConfig::make({args.lower, args.upper}, args.cheb_order), cs);
            break;
        case EstimatorKind::Glm: est = fit_glm_projected(data, need_sigma(), parse_link(args.link), cs); break;
    }

    io::write_csv_vector(args.out, est.beta_hat);
    json side = {{"kind", std::string(to_string(est.kind))},
                 {"gram_condition", json_number(est.gram_condition)},
                 {"feasibility_residual",
                  est.feasibility_residual ? json_number(*est.feasibility_residual) : json(nullptr)}};
    io::write_text(args.out + ".json", side.dump(2) + "\n");
    log_message(LogLevel::Info, "wrote " + args.out);
    return 0;
}

// -- infer ------------------------------------------------------------------

struct InferArgs {
    std::string x_csv, y_csv, sigma_csv, out;
    ConstraintFiles cons;
    std::string variance = "cls";
    std::optional<double> sigma_sq;
    double level = 0.05;
};

int cmd_infer(const InferArgs& args) {
    const auto data = load_dataset(args.x_csv, args.y_csv);
    const auto cs = load_constraints(args.cons, data.p());
    const auto ratios = AspectRatios::from_dims(data.n(), data.p(), cs.q());

    EstimateResult<double> est;
    VarianceModel vm;
    if (args.variance == "cls" || args.variance == "jackknife") {
        est = fit_cls(data, cs);
        const double s2 = args.sigma_sq ? *args.sigma_sq : estimate_noise_variance(data, est.beta_hat, cs.q());
        if (args.variance == "cls") {
            if (args.sigma_csv.empty()) throw Error(ErrorCode::InvalidInput, "--sigma is required for cls variance");
            vm = cls_asymptotic_variance(s2, io::read_csv_matrix(args.sigma_csv), cs, ratios);
        } else {
            vm = jackknife_variance(data, cs, ratios);
        }
    } else if (args.variance == "projected_oracle") {
        if (args.sigma_csv.empty()) {
            throw Error(ErrorCode::InvalidInput, "--sigma is required for projected_oracle variance");
        }
        if (!args.sigma_sq) throw Error(ErrorCode::InvalidInput, "--sigma-sq is required for projected_oracle");
        const CovarianceFactor<double> sigma(io::read_csv_matrix(args.sigma_csv));
        est = fit_projected_oracle(data, sigma, orthogonal_projector(cs), cs);
        vm = projected_oracle_variance(est.beta_hat, *args.sigma_sq, sigma, cs, true);
    } else {
        throw Error(ErrorCode::InvalidInput, "unknown variance '" + args.variance + "'");
    }

    const auto rows = coordinate_inference(est, vm, data.n(), args.level);
    std::ostringstream ss;
    io::write_inference_csv(ss, rows);
    if (args.out.empty()) {
        std::cout << ss.str();
    } else {
        io::write_text(args.out, ss.str());
    }
    return 0;
}

// -- theory -----------------------------------------------------------------

int cmd_theory(const std::string& params_path, const std::string& out) {
    json j;
    try {
        j = json::parse(io::read_text(params_path));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigInvalid, std::string("theory params: ") + e.what());
    }
    json report;
    try {
        const Eigen::Index n = j.at("n").get<long long>();
        const Eigen::Index p = j.at("p").get<long long>();
        const Eigen::Index q = j.value("q", 0LL);
        const double s2 = j.value("sigma_sq", 1.0);
        if (n < 1 || p < 1 || q < 0 || q >= p) {
            throw Error(ErrorCode::ConfigInvalid, "theory params need n, p >= 1 and 0 <= q < p");
        }
        json cov = j.value("covariance", json{{"variant", "isotropic"}});
        if (!cov.contains("p")) cov["p"] = p;
        const auto spec = io::parse_covariance_spec(cov.dump());
        if (spec.dimension() != p) throw Error(ErrorCode::DimensionMismatch, "covariance dimension differs from p");
        const CovarianceFactor<double> sigma(realize_covariance(spec));

        const fs::path base = fs::path(params_path).parent_path();
        auto resolve = [&](const std::string& s) { return fs::path(s).is_absolute() ? fs::path(s) : base / s; };
        ConstraintSet<double> cs = ConstraintSet<double>::empty(p);
        if (j.contains("a_csv") || j.contains("c_csv")) {
            if (!j.contains("a_csv") || !j.contains("c_csv")) {
                throw Error(ErrorCode::InvalidInput, "a_csv and c_csv must be given together");
            }
            cs = ConstraintSet<double>(io::read_csv_matrix(resolve(j.at("a_csv").get<std::string>())),
                                       io::read_csv_vector(resolve(j.at("c_csv").get<std::string>())));
            if (cs.q() != q || cs.p() != p) throw Error(ErrorCode::DimensionMismatch, "constraint files disagree with p, q");
        } else if (q > 0) {
            MatrixXd a = sigma.matrix().topRows(q);
            cs = ConstraintSet<double>(std::move(a), VectorXd::Zero(q));
        }

        const auto ratios = AspectRatios::from_dims(n, p, q);
        const auto risk = asymptotic_risk(s2, sigma, cs, ratios);
        report["n"] = n;
        report["p"] = p;
        report["q"] = q;
        report["sigma_sq"] = s2;
        report["alpha"] = ratios.alpha;
        report["gamma"] = ratios.gamma;
        report["asymptotic_risk"] = risk.asymptotic_risk;
        report["isotropic_closed_form"] = risk.isotropic_closed_form ? json(*risk.isotropic_closed_form) : json(nullptr);
        report["expected_gain"] = expected_gain(n, q, s2, ratios);
        if (j.contains("x_csv")) {
            const MatrixXd x = io::read_csv_matrix(resolve(j.at("x_csv").get<std::string>()));
            if (x.cols() != p) throw Error(ErrorCode::DimensionMismatch, "design width differs from p");
            report["finite_sample_trace_risk"] = conditional_minimax_risk(x, cs, s2);
            if (q > 0) {
                const VectorXd w = gain_eigen_weights(x, cs);
                report["gain_eigen_weights"] = std::vector<double>(w.data(), w.data() + w.size());
            }
        } else {
            report["finite_sample_trace_risk"] = nullptr;
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigInvalid, std::string("theory params: ") + e.what());
    }
    const std::string text = report.dump(2) + "\n";
    if (out.empty()) {
        std::cout << text;
    } else {
        io::write_text(out, text);
    }
    return 0;
}

// -- simulate ---------------------------------------------------------------

struct SimulateArgs {
    std::string config, out;
    std::optional<int> threads;
    std::optional<std::uint64_t> seed;
    std::optional<int> iterations;
};

int cmd_simulate(const SimulateArgs& args) {
    auto cfg = load_scenario_config(args.config);
    if (args.threads) cfg.threads = *args.threads;
    if (args.seed) cfg.seed = *args.seed;
    if (args.iterations) cfg.iterations = *args.iterations;
    cfg.validate();
    const auto reports = run_scenario(cfg);
    std::ostringstream ss;
    write_mc_csv(ss, reports);
    if (args.out.empty()) {
        std::cout << ss.str();
    } else {
        io::write_text(args.out, ss.str());
    }
    return 0;
}

// -- ustat ------------------------------------------------------------------

int cmd_ustat(const std::string& x_csv, const std::string& y_csv, int ell, std::optional<long long> k,
              const std::string& out) {
    const auto data = load_dataset(x_csv, y_csv);
    std::ostringstream ss;
    if (k) {
        ss << io::format_double(ustat_moment(data, ell, Eigen::Index(*k))) << '\n';
    } else {
        io::write_csv_matrix(ss, MatrixXd(ustat_moment_vector(data, ell)));
    }
    if (out.empty()) {
        std::cout << ss.str();
    } else {
        io::write_text(out, ss.str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Constrained least squares estimation, inference and simulation"};
    app.require_subcommand(1, 1);

    EstimateArgs est;
    auto* sub_est = app.add_subcommand("estimate", "Fit an estimator and write beta_hat as a one-column CSV");
    sub_est->add_option("--x", est.x_csv, "Design matrix CSV")->required()->check(CLI::ExistingFile);
    sub_est->add_option("--y", est.y_csv, "Outcome vector CSV")->required()->check(CLI::ExistingFile);
    sub_est->add_option("--a", est.cons.a_csv, "Constraint matrix CSV")->check(CLI::ExistingFile);
    sub_est->add_option("--c", est.cons.c_csv, "Constraint right-hand side CSV")->check(CLI::ExistingFile);
    sub_est->add_option("--sigma", est.sigma_csv, "Population covariance CSV (oracle, projected_oracle, glm)")
        ->check(CLI::ExistingFile);
    sub_est->add_option("--kind", est.kind, "ols | projected | cls | oracle | projected_oracle | cheb_mom | glm")
        ->capture_default_str();
    sub_est->add_option("--link", est.link, "GLM link: identity | logistic")->capture_default_str();
    sub_est->add_option("--cheb-order", est.cheb_order, "Chebyshev degree J")->capture_default_str();
    sub_est->add_option("--spectral-lower", est.lower, "Lower spectral bound")->capture_default_str();
    sub_est->add_option("--spectral-upper", est.upper, "Upper spectral bound")->capture_default_str();
    sub_est->add_flag("--fallback-identity-gram", est.fallback,
                      "Use a minimum-norm fit instead of failing on an ill-conditioned Gram matrix");
    sub_est->add_option("-o,--out", est.out, "Output CSV; a .json sidecar is written next to it")->required();

    InferArgs inf;
    auto* sub_inf = app.add_subcommand("infer", "Per-coordinate confidence intervals and Holm-adjusted tests");
    sub_inf->add_option("--x", inf.x_csv, "Design matrix CSV")->required()->check(CLI::ExistingFile);
    sub_inf->add_option("--y", inf.y_csv, "Outcome vector CSV")->required()->check(CLI::ExistingFile);
    sub_inf->add_option("--a", inf.cons.a_csv, "Constraint matrix CSV")->check(CLI::ExistingFile);
    sub_inf->add_option("--c", inf.cons.c_csv, "Constraint right-hand side CSV")->check(CLI::ExistingFile);
    sub_inf->add_option("--sigma", inf.sigma_csv, "Population covariance CSV")->check(CLI::ExistingFile);
    sub_inf->add_option("--variance", inf.variance, "cls | jackknife | projected_oracle")->capture_default_str();
    sub_inf->add_option("--sigma-sq", inf.sigma_sq, "Noise variance; estimated from residuals when omitted");
    sub_inf->add_option("--level", inf.level, "Test level and 1 - CI coverage")->capture_default_str();
    sub_inf->add_option("-o,--out", inf.out, "Output CSV (stdout when omitted)");

    std::string theory_params, theory_out;
    auto* sub_th = app.add_subcommand("theory", "Evaluate risk and gain formulas for given dimensions");
    sub_th->add_option("params", theory_params, "Parameter JSON")->required()->check(CLI::ExistingFile);
    sub_th->add_option("-o,--out", theory_out, "Output JSON (stdout when omitted)");

    SimulateArgs sim;
    auto* sub_sim = app.add_subcommand("simulate", "Run a Monte Carlo scenario and write the report CSV");
    sub_sim->add_option("config", sim.config, "Scenario JSON")->required()->check(CLI::ExistingFile);
    sub_sim->add_option("-o,--out", sim.out, "Output CSV (stdout when omitted)");
    sub_sim->add_option("--threads", sim.threads, "Worker threads")->check(CLI::PositiveNumber);
    sub_sim->add_option("--seed", sim.seed, "Override the scenario seed");
    sub_sim->add_option("--iterations", sim.iterations, "Override the iteration count")->check(CLI::PositiveNumber);

    std::string us_x, us_y, us_out;
    int us_ell = 1;
    std::optional<long long> us_k;
    auto* sub_us = app.add_subcommand("ustat", "U-statistic moment E[y X'] Sigma^ell by tuple enumeration");
    sub_us->add_option("--x", us_x, "Design matrix CSV")->required()->check(CLI::ExistingFile);
    sub_us->add_option("--y", us_y, "Outcome vector CSV")->required()->check(CLI::ExistingFile);
    sub_us->add_option("--ell", us_ell, "Power of Sigma")->capture_default_str();
    sub_us->add_option("--k", us_k, "Single coordinate (0-based); all coordinates when omitted");
    sub_us->add_option("-o,--out", us_out, "Output CSV (stdout when omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*sub_est) return cmd_estimate(est);
        if (*sub_inf) return cmd_infer(inf);
        if (*sub_th) return cmd_theory(theory_params, theory_out);
        if (*sub_sim) return cmd_simulate(sim);
        if (*sub_us) return cmd_ustat(us_x, us_y, us_ell, us_k, us_out);
    } catch (const Error& e) {
        std::cerr << "constrex: " << e.what() << '\n';
        return is_numerical(e.code()) ? kExitNumerical : kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "constrex: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}
