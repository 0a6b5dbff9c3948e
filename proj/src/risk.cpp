#include "bddm/risk.hpp"

#include <cmath>
#include <vector>

#include "bddm/error.hpp"
#include "bddm/parallel.hpp"
#include "bddm/rng.hpp"
#include "bddm/schedules.hpp"

namespace bddm {

namespace {

// Draw i of a common-random-numbers stream: one clean sample and one noise vector.
struct Draw {
  Vector x;
  Vector z;
  double u = 0.0;
};

Draw draw(const GaussianMixture& model, std::uint64_t seed, std::uint64_t i) {
  Rng rng(derive_seed(seed, streams::kNoise, i));
  Draw d;
  d.x = sample(model, 1, rng.next()).col(0);
  d.z = rng.normal_vector(model.ambient_dim());
  d.u = rng.uniform();
  return d;
}

McEstimate collect(const std::vector<double>& values) {
  RunningMoments acc;
  for (double v : values) acc.add(v);
  return acc.estimate();
}

void require_blind(const DenoiserSpec& candidate, const GaussianMixture& model) {
  if (!candidate.is_blind()) throw UnsupportedOperation("excess risk needs a blind candidate");
  if (candidate.ambient_dim() != model.ambient_dim())
    throw ConfigError("candidate and model differ in dimension");
}

}  // namespace

McEstimate excess_risk(const DenoiserSpec& candidate, const GaussianMixture& model,
                       const NoisePrior& prior, long n_mc, std::uint64_t seed, int grid_count) {
  require_blind(candidate, model);
  if (n_mc < 2) throw ConfigError("n_mc must be >= 2");
  const DenoiserSpec optimal = DenoiserSpec::blind_posterior(model, prior, grid_count);
  std::vector<double> values(static_cast<std::size_t>(n_mc));
  parallel_for(values.size(), [&](std::size_t i) {
    const Draw d = draw(model, seed, i);
    Rng rng(derive_seed(seed, streams::kBatch, i));
    const double sigma = prior.sample(rng);
    const Vector y = d.x + sigma * d.z;
    values[i] = (denoise_blind(candidate, y).denoised - denoise_blind_posterior(optimal, y)).squaredNorm();
  });
  return collect(values);
}

McEstimate schedule_weighted_error(const DenoiserSpec& candidate, const GaussianMixture& model,
                                   const NoisePrior& prior, double fraction, int n_time,
                                   long n_mc, std::uint64_t seed, int grid_count) {
  require_blind(candidate, model);
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("fraction must be in (0, 1)");
  if (n_time < 2 || n_mc < 2) throw ConfigError("need n_time >= 2 and n_mc >= 2");
  const DenoiserSpec optimal = DenoiserSpec::blind_posterior(model, prior, grid_count);
  const double sigma0 = prior.sigma_max();
  const double horizon = proportional_terminal_time(fraction, sigma0, prior.sigma_min());
  const double dt = horizon / (n_time - 1);

  double total = 0.0, var = 0.0;
  long count = 0;
  for (int j = 0; j < n_time; ++j) {
    const double t = j * dt;
    // Clamp the last node so rounding cannot push it below the prior support.
    const double sigma = std::max(sigma0 * std::exp(-(1.0 - fraction) * t), prior.sigma_min());
    std::vector<double> values(static_cast<std::size_t>(n_mc));
    const std::uint64_t node_seed = derive_seed(seed, streams::kTrajectory, static_cast<std::uint64_t>(j));
    parallel_for(values.size(), [&](std::size_t i) {
      const Draw d = draw(model, node_seed, i);
      const Vector y = d.x + sigma * d.z;
      values[i] = (denoise_blind(candidate, y).denoised - denoise_blind_posterior(optimal, y)).squaredNorm();
    });
    const McEstimate e = collect(values);
    const double weight = (j == 0 || j == n_time - 1 ? 0.5 : 1.0) * dt / (fraction * sigma * sigma);
    total += weight * e.mean;
    var += weight * weight * e.std_error * e.std_error;
    count += e.n;
  }
  return {total, std::sqrt(var), count};
}

McEstimate mismatch_mse(const DenoiserSpec& nonblind, const GaussianMixture& model,
                        double sigma_true, double sigma_arg, long n_mc, std::uint64_t seed) {
  if (n_mc < 1) throw ConfigError("n_mc must be >= 1");
  std::vector<double> values(static_cast<std::size_t>(n_mc));
  parallel_for(values.size(), [&](std::size_t i) {
    const Draw d = draw(model, seed, i);
    const Vector y = d.x + sigma_true * d.z;
    values[i] = (d.x - denoise_nonblind(nonblind, y, sigma_arg)).squaredNorm();
  });
  return collect(values);
}

McEstimate bayes_mse(const GaussianMixture& model, double sigma, long n_mc, std::uint64_t seed) {
  if (n_mc < 1) throw ConfigError("n_mc must be >= 1");
  std::vector<double> values(static_cast<std::size_t>(n_mc));
  // Independent of the mismatch stream so the two estimates are not correlated.
  const std::uint64_t own = derive_seed(seed, streams::kSubsample);
  parallel_for(values.size(), [&](std::size_t i) {
    const Draw d = draw(model, own, i);
    const Vector y = d.x + sigma * d.z;
    const GaussianMixture post = posterior_mixture(model, y, sigma);
    // tr Cov = tr(shared covariance) + sum_i w_i ||m_i - mean||^2
    const Vector mean = post.overall_mean();
    double spread = 0.0;
    for (int c = 0; c < post.components(); ++c)
      spread += post.weights()[c] * (post.mean(c) - mean).squaredNorm();
    values[i] = post.gram().trace() + spread;
  });
  return collect(values);
}

}  // namespace bddm
