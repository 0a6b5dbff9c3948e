#pragma once

#include <cstdint>

#include "bddm/denoisers.hpp"
#include "bddm/metrics.hpp"

namespace bddm {

/// E||f(y) - f*(y)||^2 over x ~ model, sigma ~ prior, y = x + sigma z, with f*
/// the posterior-average blind denoiser for (model, prior) on a grid of
/// `grid_count` nodes. `candidate` must be blind-capable.
McEstimate excess_risk(const DenoiserSpec& candidate, const GaussianMixture& model,
                       const NoisePrior& prior, long n_mc, std::uint64_t seed,
                       int grid_count = SigmaGrid::kDefaultCount);

/// int_0^T a_t^-1 E||f(y_t) - f*(y_t)||^2 dt along the proportional schedule
/// a_t = fraction sigma_t^2 from the prior's sigma_max down to its sigma_min,
/// by trapezoid over `n_time` times with `n_mc` draws each.
McEstimate schedule_weighted_error(const DenoiserSpec& candidate, const GaussianMixture& model,
                                   const NoisePrior& prior, double fraction, int n_time,
                                   long n_mc, std::uint64_t seed,
                                   int grid_count = SigmaGrid::kDefaultCount);

/// Mean squared error E||x - f(x + sigma z, sigma_arg)||^2 of the non-blind
/// denoiser told `sigma_arg` when the true level is `sigma_true`; draws are
/// common across calls with the same seed.
McEstimate mismatch_mse(const DenoiserSpec& nonblind, const GaussianMixture& model,
                        double sigma_true, double sigma_arg, long n_mc, std::uint64_t seed);

/// Bayes risk at sigma: E tr Cov(X | Y) by Monte Carlo over Y ~ p_sigma.
McEstimate bayes_mse(const GaussianMixture& model, double sigma, long n_mc, std::uint64_t seed);

}  // namespace bddm
