#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace constrex::stats {

double normal_cdf(double x);
/// Inverse standard normal CDF; p must lie in (0, 1).
double normal_quantile(double p);
/// Two-sided p-value of a standard normal statistic.
double normal_two_sided_p(double z);

double mean(std::span<const double> xs);
/// Unbiased sample variance (n - 1 denominator); 0 for fewer than two values.
double variance(std::span<const double> xs);

/// Kolmogorov-Smirnov distance between the empirical CDF of `sample` and `cdf`.
double ks_statistic(std::vector<double> sample, const std::function<double(double)>& cdf);
/// Two-sample KS distance between empirical CDFs.
double ks_two_sample_statistic(std::vector<double> a, std::vector<double> b);
/// P(K > lambda) for the limiting Kolmogorov distribution.
double kolmogorov_sf(double lambda);
/// Approximate p-value of a KS distance at effective sample size n_eff (Stephens' correction).
double ks_pvalue(double d, double n_eff);
/// Distance threshold whose p-value equals `alpha` at effective sample size n_eff.
double ks_critical_value(double alpha, double n_eff);

}  // namespace constrex::stats
