#pragma once

#include <cstdint>
#include <limits>
#include <string>

#include "bddm/mixture.hpp"

namespace bddm {

/// Monte-Carlo mean with its standard error.
struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  long n = 0;
};

/// Streaming mean/variance (Welford).
class RunningMoments {
 public:
  void add(double x);
  long count() const { return n_; }
  double mean() const { return mean_; }
  double variance() const { return n_ > 1 ? m2_ / (n_ - 1) : 0.0; }
  McEstimate estimate() const;

 private:
  long n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

struct Psnr {
  double db = 0.0;
  bool capped = false;  // x == x_hat or beyond the cap
};

inline constexpr double kPsnrCap = 300.0;

/// -10 log10 ||x - x_hat||^2, no per-coordinate normalization.
Psnr psnr(const Vector& x, const Vector& x_hat);

/// Squared 2-Wasserstein distance between two Gaussians (Bures form).
double gaussian_w2_squared(const Vector& mean1, const Matrix& cov1, const Vector& mean2,
                           const Matrix& cov2);
double gaussian_w2(const Vector& mean1, const Matrix& cov1, const Vector& mean2,
                   const Matrix& cov2);

/// PSD square root by eigendecomposition, negative eigenvalues clamped to 0.
Matrix psd_sqrt(const Matrix& m);

struct SampleSet {
  Matrix points;  // d x n
  std::string source;
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(points.cols()); }
  void validate() const;
};

inline constexpr int kMaxTransportPoints = 2048;
inline constexpr int kMaxTransportDim = 8;

/// Exact W1 between equal-size point clouds (columns) with cost min(|a - b|, cap).
/// One dimension with no cap uses sorting; otherwise an exact assignment.
double exact_w1(const Matrix& a, const Matrix& b,
                double cap = std::numeric_limits<double>::infinity());

/// W1 between the subspace coordinates of two sample sets. Sizes may differ by
/// up to 2x; the larger set is then subsampled with `subsample_seed`.
double projected_w1(const SampleSet& a, const SampleSet& b, const SubspaceEmbedding& embedding,
                    std::uint64_t subsample_seed = 0);
/// Same with the transport cost capped at `cap` (2 gives the bounded-Lipschitz distance).
double projected_w1_capped(const SampleSet& a, const SampleSet& b,
                           const SubspaceEmbedding& embedding, double cap = 2.0,
                           std::uint64_t subsample_seed = 0);

/// E||X - Pi(X + sigma Z)|| with Pi the projection onto the support subspace.
McEstimate early_stop_gap(const GaussianMixture& model, double sigma, long n_mc,
                          std::uint64_t seed);

}  // namespace bddm
