#pragma once

#include <string>
#include <vector>

#include "egdiff/rng.hpp"

namespace egdiff {

/// Sample sets are row-major: one sample per row.
using SampleSet = Eigen::MatrixXd;

Vec sample_mean(const SampleSet& a);
Mat sample_cov(const SampleSet& a);

/// Energy-distance V-statistic 2 E|X-Y| - E|X-X'| - E|Y-Y'| (Euclidean).
double energy_distance(const SampleSet& a, const SampleSet& b);

/// Energy distance after rescaling every axis by the pooled standard
/// deviation (shift-invariant statistic on standardized coordinates).
double standardized_energy_distance(const SampleSet& a, const SampleSet& b);

enum class TwoSampleMetric { kEnergyDistance, kMmd, kKolmogorov };

std::string metric_name(TwoSampleMetric metric);

struct TwoSampleReport {
  std::string metric;
  double statistic = 0.0;
  double p_value = 1.0;
  int n_a = 0;
  int n_b = 0;
  int permutations = 0;
  double mmd_bandwidth = 0.0;  // median-heuristic bandwidth when MMD is used
  bool degenerate = false;     // all pooled samples identical
};

/// Permutation two-sample test. Energy distance and MMD precompute the
/// pooled pairwise distances, so they are restricted to pooled sizes
/// <= 6000; the per-axis Kolmogorov statistic scales to large n.
TwoSampleReport two_sample_test(const SampleSet& a, const SampleSet& b,
                                TwoSampleMetric metric, int n_permutations,
                                std::uint64_t seed);

/// Spearman rank correlation with average ranks on ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

/// Sign-flip permutation p-value for paired differences, two-sided on the
/// mean. Small-sample-safe alternative to a t table.
double paired_sign_flip_pvalue(const std::vector<double>& diffs, int n_flips,
                               std::uint64_t seed);

/// One-sided variant: p-value for mean(diffs) < 0.
double paired_sign_flip_pvalue_less(const std::vector<double>& diffs,
                                    int n_flips, std::uint64_t seed);

}  // namespace egdiff
