#pragma once

// Rank statistics and small numeric utilities shared by metrics, the probe,
// and the checkpoint checksum.

#include <cstdint>
#include <span>
#include <vector>

namespace hpm::stats {

// Average ranks (1-based; ties share the mean rank).
std::vector<double> average_ranks(std::span<const double> v);

double pearson(std::span<const double> a, std::span<const double> b);

// Spearman rho with average-rank tie handling. Requires size >= 2; returns 0
// when either side is constant.
double spearman(std::span<const double> a, std::span<const double> b);

// Kendall tau-b (tie-corrected). Requires size >= 2; returns 0 when either
// side is constant.
double kendall(std::span<const double> a, std::span<const double> b);

// Upper critical value of chi-square with dof degrees of freedom at upper
// tail probability alpha (Wilson-Hilferty approximation).
double chi2_critical(std::int64_t dof, double alpha);

// One-sided upper-tail standard normal quantile.
double normal_quantile(double p);

std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed = 0);

}  // namespace hpm::stats
