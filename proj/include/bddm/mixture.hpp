#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

namespace bddm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Affine k-dimensional subspace of R^d: {offset + basis * c : c in R^k}.
struct SubspaceEmbedding {
  Matrix basis;   // d x k, orthonormal columns
  Vector offset;  // d

  static SubspaceEmbedding identity(int d);
  /// First k standard basis vectors of R^d.
  static SubspaceEmbedding zero_padding(int k, int d);
  /// Haar-random orthonormal basis (QR of a Gaussian matrix).
  static SubspaceEmbedding random(int k, int d, std::uint64_t seed);

  int ambient_dim() const { return static_cast<int>(basis.rows()); }
  int intrinsic_dim() const { return static_cast<int>(basis.cols()); }

  /// Subspace coordinates basis^T (x - offset).
  Vector coordinates(const Vector& x) const;
  /// Coordinates of every column of a d x n matrix.
  Matrix coordinates(const Matrix& xs) const;
  /// Orthogonal projection onto the affine subspace.
  Vector project(const Vector& x) const;

  /// Throws ConfigError unless basis^T basis = I within 1e-10.
  void validate() const;
};

/// Mixture sum_i w_i N(m_i, S0) with a shared covariance S0 = F F^T whose
/// column space, together with the means, lies in `support`.
///
/// The factor F (d x r) is stored instead of S0 so that (S0 + s^2 I)^{-1} can be
/// applied through the r x r capacitance matrix s^2 I + F^T F.
class GaussianMixture {
 public:
  /// means: d x K (one column per component); factor: d x r.
  GaussianMixture(Vector weights, Matrix means, Matrix factor, SubspaceEmbedding support);

  /// Mixture living directly in R^k (identity support). `cov` is k x k PSD.
  static GaussianMixture from_covariance(Vector weights, Matrix means, const Matrix& cov);
  /// Equal-weight mixture with random means and a random shared covariance in R^k.
  static GaussianMixture random_in_coordinates(int components, int k, double mean_scale,
                                               double cov_scale, std::uint64_t seed);

  int components() const { return static_cast<int>(weights_.size()); }
  int ambient_dim() const { return static_cast<int>(means_.rows()); }
  int intrinsic_dim() const { return support_.intrinsic_dim(); }
  int factor_rank() const { return static_cast<int>(factor_.cols()); }

  const Vector& weights() const { return weights_; }
  const Vector& log_weights() const { return log_weights_; }
  const Matrix& means() const { return means_; }
  Vector mean(int i) const { return means_.col(i); }
  const Matrix& factor() const { return factor_; }
  /// F^T F, r x r.
  const Matrix& gram() const { return gram_; }
  const SubspaceEmbedding& support() const { return support_; }

  Matrix base_cov() const { return factor_ * factor_.transpose(); }
  /// Mixture mean sum_i w_i m_i.
  Vector overall_mean() const { return means_ * weights_; }
  /// Second moment E||X||^2.
  double second_moment() const;

 private:
  Vector weights_;
  Vector log_weights_;
  Matrix means_;
  Matrix factor_;
  Matrix gram_;
  SubspaceEmbedding support_;
};

/// Pushes a mixture through an embedding: means B m + o, covariance B S0 B^T.
GaussianMixture embed_mixture(const GaussianMixture& low_dim_mixture,
                              const SubspaceEmbedding& embedding);

/// log p_sigma(y) where p_sigma = p_X * N(0, sigma^2 I).
double noisy_log_density(const GaussianMixture& model, const Vector& y, double sigma);

/// grad log p_sigma(y) = -(S0 + sigma^2 I)^{-1} sum_i w_i(y) (y - m_i).
Vector noisy_score(const GaussianMixture& model, const Vector& y, double sigma);

/// Exact law of X given Y = y when Y = X + sigma Z: a Gaussian mixture with
/// weights w_i(y), means m_i + S0 (S0 + sigma^2 I)^{-1}(y - m_i) and shared
/// covariance S0 - S0 (S0 + sigma^2 I)^{-1} S0.
GaussianMixture posterior_mixture(const GaussianMixture& model, const Vector& y, double sigma);

/// n i.i.d. draws as columns of a d x n matrix.
Matrix sample(const GaussianMixture& model, int n, std::uint64_t rng_seed);
/// Draws together with the component index of each draw.
Matrix sample(const GaussianMixture& model, int n, std::uint64_t rng_seed,
              std::vector<int>* labels);

nlohmann::json to_json(const GaussianMixture& model);
GaussianMixture mixture_from_json(const nlohmann::json& j);
GaussianMixture load_mixture(const std::string& path);
void save_mixture(const GaussianMixture& model, const std::string& path);

/// Per-observation quantities that do not depend on sigma. Evaluating the
/// noisy density on many noise levels reuses these in O(K r^2) per level.
struct ObservationStats {
  Vector residual_sq;  // ||y - m_i||^2, length K
  Matrix projected;    // F^T (y - m_i), r x K
};

ObservationStats observe(const GaussianMixture& model, const Vector& y);

/// Everything known about the noisy model at one noise level for one y.
struct NoiseLevelTerms {
  double sigma = 0.0;
  double log_density = 0.0;  // log p_sigma(y)
  Vector responsibilities;   // w_i(y), length K
  Matrix gains;              // M^{-1} F^T (y - m_i), r x K, with M = sigma^2 I + F^T F
  Eigen::LLT<Matrix> capacitance;
};

NoiseLevelTerms evaluate_noise_level(const GaussianMixture& model, const ObservationStats& stats,
                                     double sigma);

/// Score at y assembled from noise-level terms computed for the same y.
Vector noisy_score(const GaussianMixture& model, const Vector& y, const NoiseLevelTerms& terms);

/// Posterior mean E[X | Y = y] assembled from noise-level terms.
Vector posterior_mean(const GaussianMixture& model, const NoiseLevelTerms& terms);

/// Numerically stable log(sum(exp(v))).
double log_sum_exp(const Eigen::Ref<const Vector>& v);

}  // namespace bddm
