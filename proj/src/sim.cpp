#include "constrex/sim.hpp"

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <set>
#include <thread>

#include "constrex/inference.hpp"
#include "constrex/io.hpp"
#include "constrex/log.hpp"
#include "constrex/rng.hpp"
#include "constrex/stats.hpp"

namespace constrex {

namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Stream tags; the q slot holds kShared for draws reused across the q grid.
enum Tag : std::uint64_t { kBeta = 1, kReference, kDesign, kNoise, kHoldoutDesign, kHoldoutNoise };
constexpr std::uint64_t kShared = ~std::uint64_t{0};

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::ConfigInvalid, msg); }

bool needs_n_gt_p(EstimatorKind k) {
    return k == EstimatorKind::Ols || k == EstimatorKind::Projected || k == EstimatorKind::Cls;
}

bool needs_covariance(EstimatorKind k) {
    return k == EstimatorKind::Oracle || k == EstimatorKind::ProjectedOracle || k == EstimatorKind::Glm;
}

std::optional<EstimatorKind> gain_baseline(EstimatorKind k) {
    switch (k) {
        case EstimatorKind::Projected:
        case EstimatorKind::Cls: return EstimatorKind::Ols;
        case EstimatorKind::ProjectedOracle: return EstimatorKind::Oracle;
        default: return std::nullopt;
    }
}

MatrixXd standard_normal(Eigen::Index rows, Eigen::Index cols, std::uint64_t key, std::uint64_t stream) {
    Philox4x32 eng(key, stream);
    boost::random::normal_distribution<double> dist;
    MatrixXd z(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) z(i, j) = dist(eng);
    }
    return z;
}

double expit(double t) { return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t)); }

/// Quantities shared by every q at one p.
struct DimensionContext {
    Eigen::Index p = 0;
    CovarianceSpec<double> spec = CovarianceSpec<double>::isotropic(1);
    bool isotropic = true;
    std::optional<double> equicorrelation;
    MatrixXd chol_upper;  // Sigma = U'U, only for explicit covariances
    std::optional<CovarianceFactor<double>> factor;
    std::optional<MatrixXd> fixed_reference_moment;
    std::optional<VectorXd> fixed_beta;
};

struct PointContext {
    std::shared_ptr<const DimensionContext> dim;
    Eigen::Index p = 0;
    Eigen::Index q = 0;
};

MatrixXd draw_design(const DimensionContext& dim, Eigen::Index rows, std::uint64_t key, std::uint64_t stream) {
    if (dim.equicorrelation) {
        // (1 - rho) I + rho J is the covariance of sqrt(1 - rho) z + sqrt(rho) g 1'.
        const double rho = *dim.equicorrelation;
        MatrixXd z = standard_normal(rows, dim.p + 1, key, stream);
        const VectorXd shared = std::sqrt(rho) * z.col(dim.p);
        MatrixXd x = std::sqrt(1.0 - rho) * z.leftCols(dim.p);
        x.colwise() += shared;
        return x;
    }
    MatrixXd z = standard_normal(rows, dim.p, key, stream);
    if (dim.isotropic) return z;
    return z * dim.chol_upper;
}

VectorXd draw_beta(const ScenarioConfig& cfg, Eigen::Index p, std::uint64_t stream) {
    VectorXd beta = cfg.beta_prior.mean * VectorXd::Ones(p) + cfg.beta_prior.sd * standard_normal(p, 1, cfg.seed, stream);
    if (cfg.beta_prior.norm) {
        const double nb = beta.norm();
        if (!(nb > 0.0)) throw Error(ErrorCode::InvalidInput, "cannot rescale a zero beta draw");
        beta *= *cfg.beta_prior.norm / nb;
    }
    return beta;
}

MatrixXd reference_moment(const DimensionContext& dim, const ScenarioConfig& cfg, std::uint64_t stream) {
    const MatrixXd ref = draw_design(dim, cfg.ref_n, cfg.seed, stream);
    MatrixXd m = MatrixXd::Zero(dim.p, dim.p);
    m.selfadjointView<Eigen::Lower>().rankUpdate(ref.transpose(), 1.0 / double(cfg.ref_n));
    m.triangularView<Eigen::StrictlyUpper>() = m.transpose();
    return m;
}

std::shared_ptr<const DimensionContext> make_dimension_context(const ScenarioConfig& cfg, Eigen::Index p) {
    auto dim = std::make_shared<DimensionContext>();
    dim->p = p;
    dim->spec = cfg.covariance.at(p);
    dim->isotropic = dim->spec.is_isotropic();
    const MatrixXd sigma = realize_covariance(dim->spec);
    if (const auto* e = std::get_if<Equicorrelated>(&dim->spec.variant()); e && e->rho >= 0.0) {
        dim->equicorrelation = e->rho;
    } else if (!dim->isotropic) {
        Eigen::LLT<MatrixXd> llt(sigma);
        if (llt.info() != Eigen::Success) throw Error(ErrorCode::NotPositiveDefinite, "covariance is not SPD");
        dim->chol_upper = llt.matrixU();
    }
    bool want_factor = cfg.inference;
    for (auto k : cfg.estimators) want_factor = want_factor || needs_covariance(k);
    if (want_factor) dim->factor.emplace(sigma);
    const auto up = std::uint64_t(p);
    if (cfg.reference_mode == ReferenceMode::Fixed) {
        dim->fixed_reference_moment = reference_moment(*dim, cfg, stream_id({up, kShared, 0, kReference}));
    }
    if (cfg.beta_mode == BetaMode::Fixed) dim->fixed_beta = draw_beta(cfg, p, stream_id({up, kShared, 0, kBeta}));
    return dim;
}

VectorXd draw_outcome(const ScenarioConfig& cfg, const MatrixXd& x, const VectorXd& beta, std::uint64_t stream) {
    const VectorXd eta = x * beta;
    if (cfg.glm && cfg.glm->variant == GlmLinkKind::Logistic) {
        Philox4x32 eng(cfg.seed, stream);
        boost::random::uniform_01<double> unif;
        VectorXd y(eta.size());
        for (Eigen::Index i = 0; i < eta.size(); ++i) y(i) = unif(eng) < expit(eta(i)) ? 1.0 : 0.0;
        return y;
    }
    return eta + cfg.sigma * standard_normal(eta.size(), 1, cfg.seed, stream).col(0);
}

IterationData generate_with(const ScenarioConfig& cfg, const PointContext& ctx, int iter) {
    const DimensionContext& dim = *ctx.dim;
    const auto up = std::uint64_t(ctx.p);
    const auto uq = std::uint64_t(ctx.q);
    const auto ui = std::uint64_t(iter);
    VectorXd beta = dim.fixed_beta ? *dim.fixed_beta : draw_beta(cfg, ctx.p, stream_id({up, uq, ui, kBeta}));

    ConstraintSet<double> cs = ConstraintSet<double>::empty(ctx.p);
    if (ctx.q > 0) {
        if (dim.fixed_reference_moment) {
            MatrixXd a = dim.fixed_reference_moment->topRows(ctx.q);
            VectorXd c = a * beta;
            cs = ConstraintSet<double>(std::move(a), std::move(c));
        } else {
            const MatrixXd b = MatrixXd::Identity(ctx.q, ctx.p);
            const MatrixXd ref = draw_design(dim, cfg.ref_n, cfg.seed, stream_id({up, uq, ui, kReference}));
            cs = build_reference_constraints(b, ref, beta);
        }
    }

    MatrixXd x = draw_design(dim, cfg.n, cfg.seed, stream_id({up, uq, ui, kDesign}));
    VectorXd y = draw_outcome(cfg, x, beta, stream_id({up, uq, ui, kNoise}));
    MatrixXd xh = draw_design(dim, cfg.holdout_n, cfg.seed, stream_id({up, uq, ui, kHoldoutDesign}));
    VectorXd yh = draw_outcome(cfg, xh, beta, stream_id({up, uq, ui, kHoldoutNoise}));

    return IterationData{Dataset<double>(std::move(x), std::move(y)), std::move(cs),
                         TrueModel<double>(std::move(beta), cfg.sigma, dim.spec),
                         Dataset<double>(std::move(xh), std::move(yh))};
}

struct Outcome {
    bool ok = false;
    double mse = kNaN;
    double pred = kNaN;
    double gain = kNaN;
    double covered = kNaN;
    double z = kNaN;
};

/// Unconstrained fits are computed once per iteration and reused by their projected versions.
struct FitCache {
    std::optional<EstimateResult<double>> ols;
    std::optional<EstimateResult<double>> oracle;
    std::optional<ProjectorPair<double>> pair;
};

EstimateResult<double> fit_one(EstimatorKind kind, const ScenarioConfig& cfg, const PointContext& ctx,
                               const IterationData& it, FitCache& cache) {
    auto ols = [&]() -> const EstimateResult<double>& {
        if (!cache.ols) cache.ols = fit_ols(it.data);
        return *cache.ols;
    };
    auto oracle = [&]() -> const EstimateResult<double>& {
        if (!cache.oracle) cache.oracle = fit_oracle(it.data, *ctx.dim->factor);
        return *cache.oracle;
    };
    auto pair = [&]() -> const ProjectorPair<double>& {
        if (!cache.pair) cache.pair = orthogonal_projector(it.constraints);
        return *cache.pair;
    };
    switch (kind) {
        case EstimatorKind::Ols: return ols();
        case EstimatorKind::Projected: return project_estimate(ols(), kind, pair(), it.constraints);
        case EstimatorKind::Cls: return fit_cls(it.data, it.constraints);
        case EstimatorKind::Oracle: return oracle();
        case EstimatorKind::ProjectedOracle: return project_estimate(oracle(), kind, pair(), it.constraints);
        case EstimatorKind::ChebMom: return fit_cheb_mom(it.data, cfg.cheb, it.constraints);
        case EstimatorKind::Glm: return fit_glm_projected(it.data, *ctx.dim->factor, *cfg.glm, it.constraints);
    }
    throw Error(ErrorCode::InvalidInput, "unknown estimator");
}

/// Asymptotic variance of sqrt(n) (estimate_1 - beta*_1), where a formula exists.
std::optional<double> coordinate_one_variance(EstimatorKind kind, const ScenarioConfig& cfg, const PointContext& ctx,
                                              const IterationData& it) {
    const double s2 = cfg.sigma * cfg.sigma;
    const Eigen::Index n = it.data.n();
    const auto empty = ConstraintSet<double>::empty(ctx.p);
    switch (kind) {
        case EstimatorKind::Ols:
            return cls_asymptotic_variance(s2, *ctx.dim->factor, empty, AspectRatios::from_dims(n, ctx.p, 0))
                .per_coordinate(0);
        case EstimatorKind::Cls:
            return cls_asymptotic_variance(s2, *ctx.dim->factor, it.constraints,
                                           AspectRatios::from_dims(n, ctx.p, ctx.q))
                .per_coordinate(0);
        case EstimatorKind::Oracle:
            return projected_oracle_variance(it.truth.beta_star, s2, *ctx.dim->factor, empty).per_coordinate(0);
        case EstimatorKind::ProjectedOracle:
            return projected_oracle_variance(it.truth.beta_star, s2, *ctx.dim->factor, it.constraints).per_coordinate(0);
        default: return std::nullopt;
    }
}

std::vector<Outcome> run_iteration(const ScenarioConfig& cfg, const PointContext& ctx, int iter, double z_crit) {
    const auto& kinds = cfg.estimators;
    std::vector<Outcome> out(kinds.size());
    std::optional<IterationData> it;
    try {
        it.emplace(generate_with(cfg, ctx, iter));
    } catch (const Error& e) {
        log_message(LogLevel::Debug, "p=" + std::to_string(ctx.p) + " q=" + std::to_string(ctx.q) + " iter=" +
                                         std::to_string(iter) + " generation failed: " + e.what());
        return out;
    }
    const VectorXd& beta = it->truth.beta_star;
    const bool inference = cfg.inference && !cfg.glm && cfg.sigma > 0.0;
    FitCache cache;
    for (std::size_t e = 0; e < kinds.size(); ++e) {
        try {
            const auto est = fit_one(kinds[e], cfg, ctx, *it, cache);
            Outcome& o = out[e];
            o.mse = (est.beta_hat - beta).squaredNorm();
            o.pred = (it->holdout.y() - it->holdout.x() * est.beta_hat).squaredNorm() / double(it->holdout.n());
            if (inference) {
                if (const auto v = coordinate_one_variance(kinds[e], cfg, ctx, *it); v && *v > 0.0) {
                    const double err = est.beta_hat(0) - beta(0);
                    o.z = std::sqrt(double(it->data.n())) * err / std::sqrt(*v);
                    o.covered = std::abs(o.z) <= z_crit ? 1.0 : 0.0;
                }
            }
            o.ok = true;
        } catch (const Error& err) {
            log_message(LogLevel::Debug, std::string(to_string(kinds[e])) + " p=" + std::to_string(ctx.p) +
                                             " q=" + std::to_string(ctx.q) + " iter=" + std::to_string(iter) +
                                             ": " + err.what());
            out[e] = Outcome{};
        }
    }
    for (std::size_t e = 0; e < kinds.size(); ++e) {
        const auto base = gain_baseline(kinds[e]);
        if (!base || !out[e].ok) continue;
        const auto pos = std::find(kinds.begin(), kinds.end(), *base);
        if (pos == kinds.end()) continue;
        const auto& b = out[std::size_t(pos - kinds.begin())];
        if (b.ok) out[e].gain = b.mse - out[e].mse;
    }
    return out;
}

double sample_sd(const std::vector<double>& xs) { return xs.size() < 2 ? kNaN : std::sqrt(stats::variance(xs)); }
double sample_mean(const std::vector<double>& xs) { return xs.empty() ? kNaN : stats::mean(xs); }

EstimatorSummary summarize(EstimatorKind kind, const std::vector<const Outcome*>& outcomes, int iterations) {
    EstimatorSummary s;
    s.kind = kind;
    std::vector<double> mse, pred, gain, cover, z;
    for (const Outcome* o : outcomes) {
        if (!o->ok) continue;
        mse.push_back(o->mse);
        pred.push_back(o->pred);
        if (std::isfinite(o->gain)) gain.push_back(o->gain);
        if (std::isfinite(o->covered)) cover.push_back(o->covered);
        if (std::isfinite(o->z)) z.push_back(o->z);
    }
    s.iters_ok = int(mse.size());
    s.iters_skipped = iterations - s.iters_ok;
    s.mse_mean = sample_mean(mse);
    s.mse_sd = sample_sd(mse);
    s.pred_mse_mean = sample_mean(pred);
    s.gain_mean = sample_mean(gain);
    s.gain_sd = sample_sd(gain);
    s.coverage_rate = sample_mean(cover);
    s.ks_stat = z.empty() ? kNaN : stats::ks_statistic(z, stats::normal_cdf);
    return s;
}

Eigen::Index get_index(const json& j, const char* key) {
    const auto v = j.at(key).get<long long>();
    return Eigen::Index(v);
}

std::vector<Eigen::Index> get_index_list(const json& j) {
    std::vector<Eigen::Index> out;
    for (const auto& v : j) out.push_back(Eigen::Index(v.get<long long>()));
    return out;
}

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
    for (const auto& item : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
            config_error("unknown key '" + item.key() + "' in " + where);
        }
    }
}

QRule parse_q_rule(const json& j) {
    QRule rule;
    std::string kind;
    if (j.is_string()) {
        kind = j.get<std::string>();
    } else {
        check_keys(j, {"kind", "q", "values"}, "q_rule");
        kind = j.at("kind").get<std::string>();
    }
    std::replace(kind.begin(), kind.end(), '_', '-');
    if (kind == "fixed") {
        rule.kind = QRuleKind::Fixed;
        rule.fixed_q = get_index(j, "q");
    } else if (kind == "half-p-plus-one") {
        rule.kind = QRuleKind::HalfPPlusOne;
    } else if (kind == "grid") {
        rule.kind = QRuleKind::Grid;
        rule.grid = get_index_list(j.at("values"));
    } else {
        config_error("unknown q_rule kind '" + kind + "'");
    }
    return rule;
}

CovarianceModel parse_covariance_model(const json& j) {
    check_keys(j, {"variant", "p", "rho", "matrix"}, "covariance");
    CovarianceModel m;
    const auto variant = j.at("variant").get<std::string>();
    if (variant == "isotropic") {
        m.family = CovarianceModel::Family::Isotropic;
    } else if (variant == "equicorrelated") {
        m.family = CovarianceModel::Family::Equicorrelated;
        m.rho = j.at("rho").get<double>();
    } else if (variant == "explicit") {
        m.family = CovarianceModel::Family::Explicit;
        const auto spec = io::parse_covariance_spec(j.dump());
        m.matrix = std::get<ExplicitCovariance<double>>(spec.variant()).sigma;
    } else {
        config_error("unknown covariance variant '" + variant + "'");
    }
    return m;
}

}  // namespace

std::vector<Eigen::Index> QRule::values(Eigen::Index p) const {
    switch (kind) {
        case QRuleKind::Fixed: return {fixed_q};
        case QRuleKind::HalfPPlusOne: return {p / 2 + 1};
        case QRuleKind::Grid: return grid;
    }
    return {};
}

CovarianceSpec<double> CovarianceModel::at(Eigen::Index p) const {
    switch (family) {
        case Family::Isotropic: return CovarianceSpec<double>::isotropic(p);
        case Family::Equicorrelated: return CovarianceSpec<double>::equicorrelated(p, rho);
        case Family::Explicit:
            if (matrix.rows() != p) {
                throw Error(ErrorCode::ConfigInvalid, "explicit covariance has dimension " +
                                                          std::to_string(matrix.rows()) + ", grid asks for " +
                                                          std::to_string(p));
            }
            return CovarianceSpec<double>::explicit_matrix(matrix);
    }
    throw Error(ErrorCode::ConfigInvalid, "unknown covariance family");
}

void ScenarioConfig::validate() const {
    if (n < 2) config_error("n must be at least 2");
    if (ref_n < 1) config_error("ref_n must be positive");
    if (holdout_n < 1) config_error("holdout_n must be positive");
    if (iterations < 1) config_error("iterations must be at least 1");
    if (threads < 1) config_error("threads must be at least 1");
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) config_error("sigma must be finite and >= 0");
    if (!(beta_prior.sd >= 0.0) || !std::isfinite(beta_prior.mean)) config_error("invalid beta_prior");
    if (beta_prior.norm && !(*beta_prior.norm > 0.0)) config_error("beta_prior.norm must be positive");
    if (!(level > 0.0 && level < 1.0)) config_error("level must lie in (0, 1)");
    if (p_grid.empty()) config_error("p_grid is empty");
    if (estimators.empty()) config_error("no estimators requested");
    if (std::set<EstimatorKind>(estimators.begin(), estimators.end()).size() != estimators.size()) {
        config_error("estimators contain duplicates");
    }
    const bool wants_glm = std::find(estimators.begin(), estimators.end(), EstimatorKind::Glm) != estimators.end();
    if (wants_glm && !glm) config_error("the glm estimator needs a glm link");
    if (q_rule.kind == QRuleKind::Grid && q_rule.grid.empty()) config_error("q grid is empty");
    for (Eigen::Index p : p_grid) {
        if (p < 1) config_error("p must be positive");
        for (Eigen::Index q : q_rule.values(p)) {
            if (q < 0) config_error("q must be >= 0");
        }
        for (auto k : estimators) {
            if (needs_n_gt_p(k) && n <= p) {
                config_error(std::string(to_string(k)) + " needs n > p, got n=" + std::to_string(n) +
                             " p=" + std::to_string(p));
            }
        }
        if (covariance.family == CovarianceModel::Family::Explicit && covariance.matrix.rows() != p) {
            config_error("explicit covariance dimension does not match p=" + std::to_string(p));
        }
    }
    if (covariance.family == CovarianceModel::Family::Equicorrelated) {
        for (Eigen::Index p : p_grid) {
            try {
                (void)covariance.at(p);
            } catch (const Error& e) {
                config_error(e.what());
            }
        }
    }
    if (!(cheb.bounds.lower > 0.0 && cheb.bounds.lower < cheb.bounds.upper)) config_error("invalid cheb bounds");
}

ScenarioConfig parse_scenario_config(std::string_view json_text) {
    ScenarioConfig cfg;
    try {
        const json j = json::parse(json_text);
        check_keys(j,
                   {"name", "n", "ref_n", "p_grid", "q_rule", "covariance", "sigma", "beta_prior", "iterations",
                    "seed", "estimators", "glm", "cheb", "reference_mode", "beta_mode", "inference", "level",
                    "holdout_n", "threads"},
                   "scenario");
        cfg.name = j.value("name", cfg.name);
        cfg.n = get_index(j, "n");
        if (j.contains("ref_n")) cfg.ref_n = get_index(j, "ref_n");
        cfg.p_grid = get_index_list(j.at("p_grid"));
        cfg.q_rule = parse_q_rule(j.at("q_rule"));
        cfg.covariance = parse_covariance_model(j.at("covariance"));
        cfg.sigma = j.value("sigma", cfg.sigma);
        if (j.contains("beta_prior")) {
            const auto& b = j.at("beta_prior");
            check_keys(b, {"mean", "sd", "norm"}, "beta_prior");
            cfg.beta_prior.mean = b.value("mean", cfg.beta_prior.mean);
            cfg.beta_prior.sd = b.value("sd", cfg.beta_prior.sd);
            if (b.contains("norm")) cfg.beta_prior.norm = b.at("norm").get<double>();
        }
        cfg.iterations = j.value("iterations", cfg.iterations);
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        cfg.estimators.clear();
        for (const auto& e : j.at("estimators")) {
            const auto name = e.get<std::string>();
            const auto kind = parse_estimator_kind(name);
            if (!kind) config_error("unknown estimator '" + name + "'");
            cfg.estimators.push_back(*kind);
        }
        if (j.contains("glm") && !j.at("glm").is_null()) {
            const auto link = j.at("glm").get<std::string>();
            if (link == "identity") {
                cfg.glm = GlmLink{GlmLinkKind::Identity};
            } else if (link == "logistic") {
                cfg.glm = GlmLink{GlmLinkKind::Logistic};
            } else {
                config_error("unknown glm link '" + link + "'");
            }
        }
        if (j.contains("cheb")) {
            const auto& c = j.at("cheb");
            check_keys(c, {"order", "lower", "upper"}, "cheb");
            SpectralBounds bounds{c.value("lower", 0.2), c.value("upper", 5.0)};
            cfg.cheb = ChebConfig::make(bounds, c.value("order", 3));
        }
        if (j.contains("reference_mode")) {
            const auto m = j.at("reference_mode").get<std::string>();
            if (m == "per_iteration") {
                cfg.reference_mode = ReferenceMode::PerIteration;
            } else if (m == "fixed") {
                cfg.reference_mode = ReferenceMode::Fixed;
            } else {
                config_error("reference_mode must be per_iteration or fixed");
            }
        }
        if (j.contains("beta_mode")) {
            const auto m = j.at("beta_mode").get<std::string>();
            if (m == "redraw") {
                cfg.beta_mode = BetaMode::Redraw;
            } else if (m == "fixed") {
                cfg.beta_mode = BetaMode::Fixed;
            } else {
                config_error("beta_mode must be redraw or fixed");
            }
        }
        cfg.inference = j.value("inference", cfg.inference);
        cfg.level = j.value("level", cfg.level);
        cfg.holdout_n = Eigen::Index(j.value("holdout_n", (long long)cfg.holdout_n));
        cfg.threads = j.value("threads", cfg.threads);
    } catch (const json::exception& e) {
        config_error(std::string("scenario JSON: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ConfigInvalid) throw;
        config_error(e.what());
    }
    cfg.validate();
    return cfg;
}

ScenarioConfig load_scenario_config(const std::string& path) {
    std::string text;
    try {
        text = io::read_text(path);
    } catch (const Error& e) {
        config_error(e.what());
    }
    return parse_scenario_config(text);
}

IterationData generate_iteration(const ScenarioConfig& cfg, Eigen::Index p, Eigen::Index q, int iter_index) {
    cfg.validate();
    if (q < 0 || q > p) config_error("need 0 <= q <= p");
    if (iter_index < 0) config_error("iteration index must be >= 0");
    return generate_with(cfg, PointContext{make_dimension_context(cfg, p), p, q}, iter_index);
}

const EstimatorSummary& McReport::at(EstimatorKind kind) const {
    for (const auto& e : estimators) {
        if (e.kind == kind) return e;
    }
    throw Error(ErrorCode::InvalidInput, "estimator not in report");
}

std::vector<McReport> run_scenario(const ScenarioConfig& cfg) {
    cfg.validate();
    const double z_crit = stats::normal_quantile(1.0 - cfg.level / 2.0);

    struct Point {
        Eigen::Index p, q;
        std::optional<PointContext> ctx;
    };
    std::vector<Point> points;
    for (Eigen::Index p : cfg.p_grid) {
        for (Eigen::Index q : cfg.q_rule.values(p)) points.push_back({p, q, std::nullopt});
    }
    std::map<Eigen::Index, std::shared_ptr<const DimensionContext>> dims;
    for (auto& pt : points) {
        if (pt.q >= pt.p) continue;
        auto& dim = dims[pt.p];
        if (!dim) dim = make_dimension_context(cfg, pt.p);
        pt.ctx = PointContext{dim, pt.p, pt.q};
    }

    const std::size_t iters = std::size_t(cfg.iterations);
    std::vector<std::pair<std::size_t, int>> tasks;
    for (std::size_t k = 0; k < points.size(); ++k) {
        if (!points[k].ctx) continue;
        for (int i = 0; i < cfg.iterations; ++i) tasks.emplace_back(k, i);
    }
    std::vector<std::vector<Outcome>> results(points.size() * iters);

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        while (true) {
            const std::size_t t = next.fetch_add(1);
            if (t >= tasks.size()) return;
            const auto [k, i] = tasks[t];
            try {
                results[k * iters + std::size_t(i)] = run_iteration(cfg, *points[k].ctx, i, z_crit);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next.store(tasks.size());
            }
        }
    };
    const int nthreads = std::max(1, std::min<int>(cfg.threads, int(std::max<std::size_t>(tasks.size(), 1))));
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);

    std::vector<McReport> reports;
    const Outcome skipped;
    for (std::size_t k = 0; k < points.size(); ++k) {
        McReport rep;
        rep.scenario = cfg.name;
        rep.n = cfg.n;
        rep.p = points[k].p;
        rep.q = points[k].q;
        for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
            std::vector<const Outcome*> col;
            for (std::size_t i = 0; i < iters; ++i) {
                const auto& r = results[k * iters + i];
                col.push_back(r.empty() ? &skipped : &r[e]);
            }
            rep.estimators.push_back(summarize(cfg.estimators[e], col, cfg.iterations));
        }
        for (std::size_t i = 0; i < iters; ++i) {
            const auto& r = results[k * iters + i];
            if (std::any_of(r.begin(), r.end(), [](const Outcome& o) { return o.ok; })) ++rep.iterations_completed;
        }
        log_message(LogLevel::Info, cfg.name + " p=" + std::to_string(rep.p) + " q=" + std::to_string(rep.q) +
                                        (points[k].ctx ? " done" : " skipped (q >= p)"));
        reports.push_back(std::move(rep));
    }
    return reports;
}

void write_mc_csv(std::ostream& out, const std::vector<McReport>& reports) {
    out << "scenario,n,p,q,estimator,mse_mean,mse_sd,pred_mse_mean,gain_mean,gain_sd,coverage_rate,ks_stat,"
           "iters_ok,iters_skipped\n";
    using io::format_double;
    for (const auto& r : reports) {
        for (const auto& e : r.estimators) {
            out << r.scenario << ',' << std::to_string(r.n) << ',' << std::to_string(r.p) << ','
                << std::to_string(r.q) << ',' << to_string(e.kind) << ',' << format_double(e.mse_mean) << ','
                << format_double(e.mse_sd) << ',' << format_double(e.pred_mse_mean) << ','
                << format_double(e.gain_mean) << ',' << format_double(e.gain_sd) << ','
                << format_double(e.coverage_rate) << ',' << format_double(e.ks_stat) << ','
                << std::to_string(e.iters_ok) << ',' << std::to_string(e.iters_skipped) << '\n';
        }
    }
}

}  // namespace constrex
