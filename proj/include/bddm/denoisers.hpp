#pragma once

#include <memory>
#include <optional>
#include <string>

#include "bddm/mixture.hpp"
#include "bddm/nn.hpp"
#include "bddm/noise_posterior.hpp"

namespace bddm {

enum class DenoiserKind { analytic_nonblind, analytic_blind_mle, analytic_blind_posterior, trained_network };

std::string to_string(DenoiserKind kind);

/// One handle for every denoiser variant. Holds only what its kind needs.
class DenoiserSpec {
 public:
  static DenoiserSpec nonblind(GaussianMixture model);
  static DenoiserSpec blind_mle(GaussianMixture model, NoisePrior prior,
                                int grid_count = SigmaGrid::kDefaultCount);
  static DenoiserSpec blind_posterior(GaussianMixture model, NoisePrior prior,
                                      int grid_count = SigmaGrid::kDefaultCount);
  static DenoiserSpec network(DenseNet net);

  DenoiserKind kind() const { return kind_; }
  int ambient_dim() const;

  bool has_model() const { return static_cast<bool>(model_); }
  const GaussianMixture& model() const;
  const NoisePrior& prior() const;
  const SigmaGrid& grid() const;
  const DenseNet& net() const;

  /// Can evaluate f(y, sigma).
  bool accepts_sigma() const;
  /// Can evaluate f(y) without being told sigma.
  bool is_blind() const;

  /// Mean used to initialize samplers: the data mean for trained networks, 0 otherwise.
  Vector default_init_mean() const;

 private:
  DenoiserKind kind_ = DenoiserKind::analytic_nonblind;
  std::shared_ptr<const GaussianMixture> model_;
  std::optional<NoisePrior> prior_;
  std::shared_ptr<const SigmaGrid> grid_;
  std::shared_ptr<const DenseNet> net_;
};

/// f*(y, sigma) = y + sigma^2 grad log p_sigma(y), or a conditioned network.
Vector denoise_nonblind(const DenoiserSpec& spec, const Vector& y, double sigma);

struct BlindOutput {
  Vector denoised;
  double sigma_hat = 0.0;
  bool at_boundary = false;
};

/// f(y) = f*(y, sigma_hat) with sigma_hat the maximizer of the noise posterior.
BlindOutput denoise_blind_mle(const DenoiserSpec& spec, const Vector& y);

/// Posterior average of f*(y, sigma) over mu(sigma | y) on the grid.
Vector denoise_blind_posterior(const DenoiserSpec& spec, const Vector& y);

/// sqrt(||denoised - y||^2 / d).
double residual_sigma_estimate(const Vector& denoised, const Vector& y, int d);

/// Any blind-capable kind. sigma_hat is the MLE for the MLE kind and the
/// residual estimate otherwise.
BlindOutput denoise_blind(const DenoiserSpec& spec, const Vector& y);

}  // namespace bddm
