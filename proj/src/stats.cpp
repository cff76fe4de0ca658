#include "constrex/stats.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "constrex/error.hpp"

namespace constrex::stats {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::InvalidInput, "normal quantile needs p in (0, 1)");
    static const boost::math::normal_distribution<double> standard(0.0, 1.0);
    return boost::math::quantile(standard, p);
}

double normal_two_sided_p(double z) { return std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0))); }

double mean(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    return std::accumulate(xs.begin(), xs.end(), 0.0) / double(xs.size());
}

double variance(std::span<const double> xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return ss / double(xs.size() - 1);
}

double ks_statistic(std::vector<double> sample, const std::function<double(double)>& cdf) {
    if (sample.empty()) return 0.0;
    std::sort(sample.begin(), sample.end());
    const double n = double(sample.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const double f = cdf(sample[i]);
        d = std::max({d, double(i + 1) / n - f, f - double(i) / n});
    }
    return d;
}

double ks_two_sample_statistic(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) return 0.0;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = double(a.size());
    const double nb = double(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double v = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= v) ++i;
        while (j < b.size() && b[j] <= v) ++j;
        d = std::max(d, std::abs(double(i) / na - double(j) / nb));
    }
    return d;
}

double kolmogorov_sf(double lambda) {
    if (lambda <= 0.0) return 1.0;
    if (lambda < 0.2) return 1.0;
    double sum = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * double(k) * double(k) * lambda * lambda);
        sum += (k % 2 == 1 ? 1.0 : -1.0) * term;
        if (term < 1e-17) break;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

double ks_pvalue(double d, double n_eff) {
    const double root = std::sqrt(n_eff);
    return kolmogorov_sf((root + 0.12 + 0.11 / root) * d);
}

double ks_critical_value(double alpha, double n_eff) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidInput, "alpha must lie in (0, 1)");
    double lo = 0.2, hi = 5.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (kolmogorov_sf(mid) > alpha ? lo : hi) = mid;
    }
    const double root = std::sqrt(n_eff);
    return 0.5 * (lo + hi) / (root + 0.12 + 0.11 / root);
}

}  // namespace constrex::stats
