#include "bddm/noise_posterior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bddm/error.hpp"
#include "bddm/io.hpp"
#include "bddm/rng.hpp"

namespace bddm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kSupportSlack = 1e-12;

// Exponent of sigma in the prior density: alpha - 3.
double prior_exponent(double alpha) { return alpha - 3.0; }

double integral_of_power(double exponent, double a, double b) {
  const double p = exponent + 1.0;
  if (std::abs(p) < 1e-14) return std::log(b / a);
  return (std::pow(b, p) - std::pow(a, p)) / p;
}

}  // namespace

// ---------------------------------------------------------------------------
// NoisePrior

NoisePrior::NoisePrior(double alpha, double sigma_min, double sigma_max)
    : alpha_(alpha), sigma_min_(sigma_min), sigma_max_(sigma_max) {
  if (!(sigma_min > 0.0) || !(sigma_max > sigma_min) || !std::isfinite(sigma_max) ||
      !std::isfinite(alpha))
    throw ConfigError("noise prior needs 0 < sigma_min < sigma_max < inf");
  normalizer_ = 1.0 / integral_of_power(prior_exponent(alpha), sigma_min, sigma_max);
}

bool NoisePrior::contains(double sigma) const {
  return sigma >= sigma_min_ * (1.0 - kSupportSlack) && sigma <= sigma_max_ * (1.0 + kSupportSlack);
}

double NoisePrior::log_density(double sigma) const {
  if (!contains(sigma))
    throw DomainError("sigma " + std::to_string(sigma) + " outside prior support [" +
                      std::to_string(sigma_min_) + ", " + std::to_string(sigma_max_) + "]");
  return std::log(normalizer_) + prior_exponent(alpha_) * std::log(sigma);
}

double NoisePrior::sample(Rng& rng) const {
  const double u = rng.uniform();
  const double p = prior_exponent(alpha_) + 1.0;
  if (std::abs(p) < 1e-14) return sigma_min_ * std::pow(sigma_max_ / sigma_min_, u);
  const double lo = std::pow(sigma_min_, p);
  const double hi = std::pow(sigma_max_, p);
  return std::clamp(std::pow(lo + u * (hi - lo), 1.0 / p), sigma_min_, sigma_max_);
}

// ---------------------------------------------------------------------------
// SigmaGrid

SigmaGrid::SigmaGrid(double sigma_min, double sigma_max, int count) {
  if (count < 16) throw ConfigError("sigma grid needs at least 16 nodes");
  if (!(sigma_min > 0.0) || !(sigma_max > sigma_min))
    throw ConfigError("sigma grid needs 0 < sigma_min < sigma_max");
  const double lo = std::log(sigma_min);
  const double hi = std::log(sigma_max);
  log_spacing_ = (hi - lo) / (count - 1);
  nodes_.resize(static_cast<std::size_t>(count));
  trapezoid_.assign(static_cast<std::size_t>(count), log_spacing_);
  for (int i = 0; i < count; ++i) nodes_[static_cast<std::size_t>(i)] = std::exp(lo + i * log_spacing_);
  nodes_.front() = sigma_min;
  nodes_.back() = sigma_max;
  trapezoid_.front() *= 0.5;
  trapezoid_.back() *= 0.5;
}

// ---------------------------------------------------------------------------
// Densities over sigma and lambda

double posterior_log_density(const GaussianMixture& model, const NoisePrior& prior,
                             const Vector& y, double sigma) {
  const double log_prior = prior.log_density(sigma);
  return log_prior + noisy_log_density(model, y, sigma);
}

double lambda_log_density(const GaussianMixture& model, const NoisePrior& prior, const Vector& y,
                          double lambda) {
  const double lo = 1.0 / (prior.sigma_max() * prior.sigma_max());
  const double hi = 1.0 / (prior.sigma_min() * prior.sigma_min());
  if (!(lambda >= lo * (1.0 - 2 * kSupportSlack) && lambda <= hi * (1.0 + 2 * kSupportSlack)))
    throw DomainError("lambda " + std::to_string(lambda) + " outside prior support");
  const int d = model.ambient_dim();
  const double sigma = 1.0 / std::sqrt(lambda);
  // E_X[exp(-lambda ||X - y||^2 / 2)] = (2 pi / lambda)^{d/2} p_sigma(y)
  const double log_expectation =
      0.5 * d * (kLog2Pi - std::log(lambda)) + noisy_log_density(model, y, sigma);
  return 0.5 * (d - prior.alpha()) * std::log(lambda) + log_expectation;
}

QuadraticMoments residual_norm_moments(const GaussianMixture& posterior, const Vector& y) {
  // For X ~ N(m, P P^T): E||X - y||^2 = ||m - y||^2 + tr C,
  // Var ||X - y||^2 = 2 tr C^2 + 4 (m - y)^T C (m - y).
  const Matrix& p = posterior.factor();
  const double trace_c = posterior.gram().trace();
  const double trace_c2 = posterior.gram().squaredNorm();
  const int K = posterior.components();
  Vector means(K), vars(K);
  for (int i = 0; i < K; ++i) {
    const Vector delta = posterior.means().col(i) - y;
    const Vector projected = p.transpose() * delta;
    means[i] = delta.squaredNorm() + trace_c;
    vars[i] = 2.0 * trace_c2 + 4.0 * projected.squaredNorm();
  }
  const Vector& w = posterior.weights();
  QuadraticMoments out;
  out.mean = w.dot(means);
  // Law of total variance avoids the E[Q^2] - E[Q]^2 cancellation.
  out.variance = w.dot(vars) + w.dot((means.array() - out.mean).square().matrix());
  return out;
}

EllDerivatives ell_derivatives(const GaussianMixture& model, const NoisePrior& prior,
                               const Vector& y, double lambda) {
  const double lo = 1.0 / (prior.sigma_max() * prior.sigma_max());
  const double hi = 1.0 / (prior.sigma_min() * prior.sigma_min());
  if (!(lambda >= lo * (1.0 - 2 * kSupportSlack) && lambda <= hi * (1.0 + 2 * kSupportSlack)))
    throw DomainError("lambda " + std::to_string(lambda) + " outside prior support");
  const double sigma = 1.0 / std::sqrt(lambda);
  const GaussianMixture post = posterior_mixture(model, y, sigma);
  const QuadraticMoments q = residual_norm_moments(post, y);
  const double shape = model.ambient_dim() - prior.alpha();
  return {-shape / (2.0 * lambda) + 0.5 * q.mean, shape / (2.0 * lambda * lambda) - 0.25 * q.variance};
}

// ---------------------------------------------------------------------------
// Grid posterior

GridPosterior posterior_on_grid(const GaussianMixture& model, const NoisePrior& prior,
                                const Vector& y, const SigmaGrid& grid) {
  return posterior_on_grid(model, prior, observe(model, y), grid);
}

GridPosterior posterior_on_grid(const GaussianMixture& model, const NoisePrior& prior,
                                const ObservationStats& stats, const SigmaGrid& grid) {
  const int n = grid.size();
  GridPosterior out;
  out.sigma = grid.nodes();
  out.log_post.resize(static_cast<std::size_t>(n));
  double top = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < n; ++j) {
    const double s = grid[j];
    const double lp = prior.log_density(s) + evaluate_noise_level(model, stats, s).log_density;
    out.log_post[static_cast<std::size_t>(j)] = lp;
    if (lp > top) {  // strict: ties keep the smaller sigma
      top = lp;
      out.argmax = j;
    }
  }
  out.density.resize(static_cast<std::size_t>(n));
  out.mass.resize(static_cast<std::size_t>(n));
  double total = 0.0;
  for (int j = 0; j < n; ++j) {
    auto& lp = out.log_post[static_cast<std::size_t>(j)];
    lp -= top;
    // d sigma = sigma d(log sigma)
    const double m = std::exp(lp) * grid[j] * grid.log_weights()[static_cast<std::size_t>(j)];
    out.mass[static_cast<std::size_t>(j)] = m;
    total += m;
  }
  for (int j = 0; j < n; ++j) {
    out.mass[static_cast<std::size_t>(j)] /= total;
    out.density[static_cast<std::size_t>(j)] = std::exp(out.log_post[static_cast<std::size_t>(j)]) / total;
  }
  return out;
}

SigmaEstimate mle_sigma(const GaussianMixture& model, const NoisePrior& prior, const Vector& y,
                        const SigmaGrid& grid) {
  return mle_sigma(model, prior, observe(model, y), grid);
}

SigmaEstimate mle_sigma(const GaussianMixture& model, const NoisePrior& prior,
                        const ObservationStats& stats, const SigmaGrid& grid) {
  if (grid[0] < prior.sigma_min() * (1 - kSupportSlack) ||
      grid[grid.size() - 1] > prior.sigma_max() * (1 + kSupportSlack))
    throw ConfigError("sigma grid extends beyond the prior support");

  auto objective = [&](double log_sigma) {
    const double s = std::exp(log_sigma);
    return prior.log_density(std::clamp(s, prior.sigma_min(), prior.sigma_max())) +
           evaluate_noise_level(model, stats, s).log_density;
  };

  int best = 0;
  double best_value = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < grid.size(); ++j) {
    const double v = objective(std::log(grid[j]));
    if (v > best_value) {
      best_value = v;
      best = j;
    }
  }

  double lo = std::log(grid[std::max(best - 1, 0)]);
  double hi = std::log(grid[std::min(best + 1, grid.size() - 1)]);
  const double inv_phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = hi - inv_phi * (hi - lo);
  double x2 = lo + inv_phi * (hi - lo);
  double f1 = objective(x1);
  double f2 = objective(x2);
  for (int it = 0; it < 30; ++it) {
    if (f1 >= f2) {  // ties move toward smaller sigma
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = objective(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = objective(x2);
    }
  }
  double refined = 0.5 * (lo + hi);
  double refined_value = objective(refined);
  double log_sigma = refined;
  if (refined_value < best_value) log_sigma = std::log(grid[best]);

  const double log_lo = std::log(prior.sigma_min());
  const double log_hi = std::log(prior.sigma_max());
  SigmaEstimate out;
  out.at_boundary = (log_sigma - log_lo) < 1e-6 || (log_hi - log_sigma) < 1e-6;
  out.sigma = std::clamp(std::exp(log_sigma), prior.sigma_min(), prior.sigma_max());
  return out;
}

PosteriorMoments posterior_moments(const GaussianMixture& model, const NoisePrior& prior,
                                   const Vector& y, const SigmaGrid& grid) {
  const GridPosterior post = posterior_on_grid(model, prior, y, grid);
  PosteriorMoments m;
  for (int j = 0; j < grid.size(); ++j) {
    const double w = post.mass[static_cast<std::size_t>(j)];
    const double s = grid[j];
    m.mean_sigma += w * s;
    m.mean_lambda += w / (s * s);
  }
  for (int j = 0; j < grid.size(); ++j) {
    const double w = post.mass[static_cast<std::size_t>(j)];
    const double s = grid[j];
    m.var_sigma += w * (s - m.mean_sigma) * (s - m.mean_sigma);
    const double l = 1.0 / (s * s);
    m.var_lambda += w * (l - m.mean_lambda) * (l - m.mean_lambda);
  }
  return m;
}

void write_posterior_csv(const GridPosterior& posterior, const std::string& path) {
  CsvWriter csv(path, {"sigma", "log_post", "normalized_density"});
  for (std::size_t j = 0; j < posterior.sigma.size(); ++j)
    csv.row({posterior.sigma[j], posterior.log_post[j], posterior.density[j]});
}

}  // namespace bddm
