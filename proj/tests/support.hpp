#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "bddm/mixture.hpp"
#include "bddm/rng.hpp"

namespace bddm::test {

inline const std::filesystem::path kSource = BDDM_SOURCE_DIR;

/// The two-Gaussian preset model embedded in R^d (identity when d = k).
inline GaussianMixture two_gaussians(int d, std::uint64_t embedding_seed = 7) {
  const GaussianMixture base = load_mixture((kSource / "configs/models/two_gaussians.json").string());
  const int k = base.ambient_dim();
  return embed_mixture(base, d == k ? SubspaceEmbedding::identity(d)
                                    : SubspaceEmbedding::random(k, d, embedding_seed));
}

/// Single Gaussian N(0, cov) in R^k.
inline GaussianMixture gaussian(const Matrix& cov) {
  return GaussianMixture::from_covariance(Vector::Ones(1), Matrix::Zero(cov.rows(), 1), cov);
}

inline Matrix mixture_cov(const GaussianMixture& m) {
  const Vector mean = m.overall_mean();
  Matrix c = m.base_cov();
  for (int i = 0; i < m.components(); ++i) {
    const Vector delta = m.mean(i) - mean;
    c += m.weights()(i) * delta * delta.transpose();
  }
  return c;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * (v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

/// y ~ p_sigma for the given model.
inline Matrix noisy_draws(const GaussianMixture& m, double sigma, int n, std::uint64_t seed) {
  Rng rng(derive_seed(seed, streams::kNoise));
  return sample(m, n, derive_seed(seed, streams::kData)) + sigma * rng.normal_matrix(m.ambient_dim(), n);
}

}  // namespace bddm::test
