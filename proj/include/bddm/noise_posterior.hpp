#pragma once

#include <string>
#include <vector>

#include "bddm/mixture.hpp"

namespace bddm {

class Rng;

/// Power-law prior Theta(sigma) proportional to sigma^(alpha - 3) on [sigma_min, sigma_max].
/// alpha = 2 is log-uniform; alpha = 0 is sigma^-3 (uniform in lambda = sigma^-2).
class NoisePrior {
 public:
  NoisePrior(double alpha, double sigma_min, double sigma_max);

  static NoisePrior log_uniform(double sigma_min, double sigma_max) {
    return {2.0, sigma_min, sigma_max};
  }
  static NoisePrior inverse_cube(double sigma_min, double sigma_max) {
    return {0.0, sigma_min, sigma_max};
  }

  double alpha() const { return alpha_; }
  double sigma_min() const { return sigma_min_; }
  double sigma_max() const { return sigma_max_; }

  bool contains(double sigma) const;
  /// Normalized log density; throws DomainError outside the support.
  double log_density(double sigma) const;
  /// Normalizing constant c with Theta(sigma) = c sigma^(alpha - 3).
  double normalizer() const { return normalizer_; }
  /// Inverse-CDF draw.
  double sample(Rng& rng) const;

 private:
  double alpha_;
  double sigma_min_;
  double sigma_max_;
  double normalizer_;
};

/// Log-uniformly spaced noise levels used as quadrature support.
class SigmaGrid {
 public:
  static constexpr int kDefaultCount = 256;

  SigmaGrid(double sigma_min, double sigma_max, int count = kDefaultCount);
  static SigmaGrid for_prior(const NoisePrior& prior, int count = kDefaultCount) {
    return {prior.sigma_min(), prior.sigma_max(), count};
  }

  int size() const { return static_cast<int>(nodes_.size()); }
  const std::vector<double>& nodes() const { return nodes_; }
  double operator[](int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  double log_spacing() const { return log_spacing_; }
  /// Trapezoid weights for integrals in log sigma.
  const std::vector<double>& log_weights() const { return trapezoid_; }

 private:
  std::vector<double> nodes_;
  std::vector<double> trapezoid_;
  double log_spacing_;
};

/// log mu(sigma | y) = log Theta(sigma) + log p_sigma(y), up to a y-dependent constant.
double posterior_log_density(const GaussianMixture& model, const NoisePrior& prior,
                             const Vector& y, double sigma);

/// log nu(lambda | y) for lambda = sigma^-2, up to a y-dependent constant:
/// ((d - alpha)/2) log lambda + log E_X[exp(-lambda ||X - y||^2 / 2)].
double lambda_log_density(const GaussianMixture& model, const NoisePrior& prior, const Vector& y,
                          double lambda);

struct EllDerivatives {
  double first = 0.0;   // l'(lambda | y)
  double second = 0.0;  // l''(lambda | y)
};

/// Derivatives of l = -log nu from exact conditional moments of ||X - y||^2.
EllDerivatives ell_derivatives(const GaussianMixture& model, const NoisePrior& prior,
                               const Vector& y, double lambda);

/// Mean and variance of ||X - y||^2 under the posterior mixture.
struct QuadraticMoments {
  double mean = 0.0;
  double variance = 0.0;
};
QuadraticMoments residual_norm_moments(const GaussianMixture& posterior, const Vector& y);

/// Posterior over the grid nodes.
struct GridPosterior {
  std::vector<double> sigma;
  std::vector<double> log_post;     // log mu(sigma_j | y), shifted so the max is 0
  std::vector<double> density;      // normalized mu(sigma_j | y) in sigma units
  std::vector<double> mass;         // quadrature weights, sum to 1
  int argmax = 0;
};

GridPosterior posterior_on_grid(const GaussianMixture& model, const NoisePrior& prior,
                                const Vector& y, const SigmaGrid& grid);
GridPosterior posterior_on_grid(const GaussianMixture& model, const NoisePrior& prior,
                                const ObservationStats& stats, const SigmaGrid& grid);

struct SigmaEstimate {
  double sigma = 0.0;
  bool at_boundary = false;  // clamped to the prior support
};

/// Maximizer of mu(sigma | y): grid argmax (ties to smaller sigma) refined by
/// 30 golden-section iterations over the bracketing cells.
SigmaEstimate mle_sigma(const GaussianMixture& model, const NoisePrior& prior, const Vector& y,
                        const SigmaGrid& grid);
SigmaEstimate mle_sigma(const GaussianMixture& model, const NoisePrior& prior,
                        const ObservationStats& stats, const SigmaGrid& grid);

struct PosteriorMoments {
  double mean_lambda = 0.0;
  double var_lambda = 0.0;
  double mean_sigma = 0.0;
  double var_sigma = 0.0;
};

PosteriorMoments posterior_moments(const GaussianMixture& model, const NoisePrior& prior,
                                   const Vector& y, const SigmaGrid& grid);

/// CSV with columns sigma, log_post, normalized_density.
void write_posterior_csv(const GridPosterior& posterior, const std::string& path);

}  // namespace bddm
