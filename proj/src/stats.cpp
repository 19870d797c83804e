#include "egdiff/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace egdiff {

Vec sample_mean(const SampleSet& a) {
  if (a.rows() == 0) throw std::invalid_argument("sample_mean: empty set");
  return a.colwise().mean();
}

Mat sample_cov(const SampleSet& a) {
  if (a.rows() < 2) throw std::invalid_argument("sample_cov: need >= 2 rows");
  const Mat centered = a.rowwise() - a.colwise().mean();
  return centered.transpose() * centered / static_cast<double>(a.rows() - 1);
}

namespace {

double mean_cross_distance(const SampleSet& a, const SampleSet& b) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      acc += (a.row(i) - b.row(j)).norm();
    }
  }
  return acc / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

SampleSet standardize_pooled(const SampleSet& a, const SampleSet& b,
                             SampleSet& b_out) {
  SampleSet pooled(a.rows() + b.rows(), a.cols());
  pooled << a, b;
  const Vec mu = pooled.colwise().mean();
  Vec sd(a.cols());
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const double var =
        (pooled.col(c).array() - mu[c]).square().sum() /
        std::max<double>(1.0, static_cast<double>(pooled.rows() - 1));
    sd[c] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  SampleSet a_out = a;
  b_out = b;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    a_out.col(c) = (a.col(c).array() - mu[c]) / sd[c];
    b_out.col(c) = (b.col(c).array() - mu[c]) / sd[c];
  }
  return a_out;
}

// Pooled pairwise Euclidean distances, float storage.
Eigen::MatrixXf pooled_distances(const SampleSet& pooled) {
  const Eigen::Index n = pooled.rows();
  Eigen::MatrixXf dist(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    dist(i, i) = 0.0f;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const float d = static_cast<float>((pooled.row(i) - pooled.row(j)).norm());
      dist(i, j) = d;
      dist(j, i) = d;
    }
  }
  return dist;
}

double energy_stat_from_matrix(const Eigen::MatrixXf& dist,
                               const std::vector<int>& label, int n_a,
                               int n_b) {
  double aa = 0.0, bb = 0.0, ab = 0.0;
  const int n = static_cast<int>(label.size());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double d = dist(i, j);
      if (label[i] == 0 && label[j] == 0) aa += d;
      else if (label[i] == 1 && label[j] == 1) bb += d;
      else ab += d;
    }
  }
  const double na = n_a, nb = n_b;
  return 2.0 * ab / (na * nb) - 2.0 * aa / (na * na) - 2.0 * bb / (nb * nb);
}

double mmd_stat_from_matrix(const Eigen::MatrixXf& dist,
                            const std::vector<int>& label, int n_a, int n_b,
                            double bandwidth) {
  const double inv = -1.0 / (2.0 * bandwidth * bandwidth);
  double aa = 0.0, bb = 0.0, ab = 0.0;
  const int n = static_cast<int>(label.size());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double k = std::exp(inv * static_cast<double>(dist(i, j)) *
                                static_cast<double>(dist(i, j)));
      if (label[i] == 0 && label[j] == 0) aa += k;
      else if (label[i] == 1 && label[j] == 1) bb += k;
      else ab += k;
    }
  }
  const double na = n_a, nb = n_b;
  // Biased V-statistic; diagonal terms contribute k(x,x) = 1.
  const double term_aa = (2.0 * aa + na) / (na * na);
  const double term_bb = (2.0 * bb + nb) / (nb * nb);
  const double term_ab = 2.0 * ab / (na * nb);
  return term_aa + term_bb - term_ab;
}

double median_distance(const Eigen::MatrixXf& dist) {
  std::vector<float> vals;
  vals.reserve(static_cast<size_t>(dist.rows()) * (dist.rows() - 1) / 2);
  for (Eigen::Index i = 0; i < dist.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < dist.cols(); ++j) {
      vals.push_back(dist(i, j));
    }
  }
  if (vals.empty()) return 1.0;
  std::nth_element(vals.begin(), vals.begin() + vals.size() / 2, vals.end());
  const double med = vals[vals.size() / 2];
  return med > 0.0 ? med : 1.0;
}

// Per-axis two-sample Kolmogorov statistic (max over axes) computed from
// per-axis pooled sort orders and a 0/1 label array.
double ks_stat_from_orders(const std::vector<std::vector<int>>& orders,
                           const std::vector<int>& label, int n_a, int n_b) {
  double worst = 0.0;
  for (const auto& order : orders) {
    int ca = 0, cb = 0;
    double axis_max = 0.0;
    for (int idx : order) {
      if (label[static_cast<size_t>(idx)] == 0) ++ca;
      else ++cb;
      const double gap = std::abs(static_cast<double>(ca) / n_a -
                                  static_cast<double>(cb) / n_b);
      axis_max = std::max(axis_max, gap);
    }
    worst = std::max(worst, axis_max);
  }
  return worst;
}

void shuffle_labels(std::vector<int>& label, GaussianStream& rng) {
  // Fisher-Yates over the label array.
  for (size_t i = label.size() - 1; i > 0; --i) {
    const size_t j = static_cast<size_t>(rng.raw() % (i + 1));
    std::swap(label[i], label[j]);
  }
}

}  // namespace

double energy_distance(const SampleSet& a, const SampleSet& b) {
  if (a.rows() == 0 || b.rows() == 0) {
    throw std::invalid_argument("energy_distance: empty sample set");
  }
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("energy_distance: dimension mismatch");
  }
  const double ab = mean_cross_distance(a, b);
  const double aa = mean_cross_distance(a, a);
  const double bb = mean_cross_distance(b, b);
  return 2.0 * ab - aa - bb;
}

double standardized_energy_distance(const SampleSet& a, const SampleSet& b) {
  SampleSet bs;
  const SampleSet as = standardize_pooled(a, b, bs);
  return energy_distance(as, bs);
}

std::string metric_name(TwoSampleMetric metric) {
  switch (metric) {
    case TwoSampleMetric::kEnergyDistance: return "energy-distance";
    case TwoSampleMetric::kMmd: return "mmd";
    case TwoSampleMetric::kKolmogorov: return "kolmogorov";
  }
  return "?";
}

TwoSampleReport two_sample_test(const SampleSet& a, const SampleSet& b,
                                TwoSampleMetric metric, int n_permutations,
                                std::uint64_t seed) {
  if (a.rows() == 0 || b.rows() == 0) {
    throw std::invalid_argument("two_sample_test: empty sample set");
  }
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("two_sample_test: dimension mismatch");
  }
  if (n_permutations < 1) {
    throw std::invalid_argument("two_sample_test: need >= 1 permutation");
  }

  const int n_a = static_cast<int>(a.rows());
  const int n_b = static_cast<int>(b.rows());
  const int n = n_a + n_b;
  SampleSet pooled(n, a.cols());
  pooled << a, b;

  TwoSampleReport report;
  report.metric = metric_name(metric);
  report.n_a = n_a;
  report.n_b = n_b;
  report.permutations = n_permutations;

  bool all_same = true;
  for (Eigen::Index i = 1; i < pooled.rows() && all_same; ++i) {
    if ((pooled.row(i) - pooled.row(0)).norm() != 0.0) all_same = false;
  }
  if (all_same) {
    report.degenerate = true;
    report.statistic = 0.0;
    report.p_value = 1.0;
    return report;
  }

  std::vector<int> label(static_cast<size_t>(n), 0);
  for (int i = n_a; i < n; ++i) label[static_cast<size_t>(i)] = 1;

  GaussianStream rng(RngSpec{seed, static_cast<std::uint64_t>(StreamRole::kOracle)});

  if (metric == TwoSampleMetric::kKolmogorov) {
    std::vector<std::vector<int>> orders(static_cast<size_t>(pooled.cols()));
    for (Eigen::Index c = 0; c < pooled.cols(); ++c) {
      auto& ord = orders[static_cast<size_t>(c)];
      ord.resize(static_cast<size_t>(n));
      std::iota(ord.begin(), ord.end(), 0);
      std::sort(ord.begin(), ord.end(), [&](int i, int j) {
        return pooled(i, c) < pooled(j, c);
      });
    }
    report.statistic = ks_stat_from_orders(orders, label, n_a, n_b);
    int exceed = 0;
    std::vector<int> perm = label;
    for (int p = 0; p < n_permutations; ++p) {
      shuffle_labels(perm, rng);
      if (ks_stat_from_orders(orders, perm, n_a, n_b) >= report.statistic) {
        ++exceed;
      }
    }
    report.p_value = (1.0 + exceed) / (1.0 + n_permutations);
    return report;
  }

  if (n > 6000) {
    throw std::invalid_argument(
        "two_sample_test: pooled size > 6000 for a pairwise metric; "
        "use the kolmogorov metric");
  }
  const Eigen::MatrixXf dist = pooled_distances(pooled);

  double bandwidth = 0.0;
  auto stat_of = [&](const std::vector<int>& lab) {
    if (metric == TwoSampleMetric::kEnergyDistance) {
      return energy_stat_from_matrix(dist, lab, n_a, n_b);
    }
    return mmd_stat_from_matrix(dist, lab, n_a, n_b, bandwidth);
  };
  if (metric == TwoSampleMetric::kMmd) {
    bandwidth = median_distance(dist);
    report.mmd_bandwidth = bandwidth;
  }

  report.statistic = stat_of(label);
  int exceed = 0;
  std::vector<int> perm = label;
  for (int p = 0; p < n_permutations; ++p) {
    shuffle_labels(perm, rng);
    if (stat_of(perm) >= report.statistic) ++exceed;
  }
  report.p_value = (1.0 + exceed) / (1.0 + n_permutations);
  return report;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("spearman: need matched vectors of size >= 2");
  }
  auto ranks = [](const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](size_t i, size_t j) { return v[i] < v[j]; });
    std::vector<double> r(n);
    size_t i = 0;
    while (i < n) {
      size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> rx = ranks(x);
  const std::vector<double> ry = ranks(y);
  const size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

namespace {

double sign_flip_pvalue(const std::vector<double>& diffs, int n_flips,
                        std::uint64_t seed, bool two_sided) {
  if (diffs.empty()) throw std::invalid_argument("sign_flip: empty diffs");
  if (n_flips < 1) throw std::invalid_argument("sign_flip: n_flips >= 1");
  const double obs =
      std::accumulate(diffs.begin(), diffs.end(), 0.0) /
      static_cast<double>(diffs.size());
  GaussianStream rng(RngSpec{seed, static_cast<std::uint64_t>(StreamRole::kOracle)});
  int exceed = 0;
  for (int f = 0; f < n_flips; ++f) {
    double acc = 0.0;
    for (double d : diffs) acc += (rng.raw() & 1ULL) ? d : -d;
    acc /= static_cast<double>(diffs.size());
    if (two_sided ? std::abs(acc) >= std::abs(obs) : acc <= obs) ++exceed;
  }
  return (1.0 + exceed) / (1.0 + n_flips);
}

}  // namespace

double paired_sign_flip_pvalue(const std::vector<double>& diffs, int n_flips,
                               std::uint64_t seed) {
  return sign_flip_pvalue(diffs, n_flips, seed, true);
}

double paired_sign_flip_pvalue_less(const std::vector<double>& diffs,
                                    int n_flips, std::uint64_t seed) {
  return sign_flip_pvalue(diffs, n_flips, seed, false);
}

}  // namespace egdiff
