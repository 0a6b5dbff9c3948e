#include "bddm/denoisers.hpp"

#include <cmath>

#include "bddm/error.hpp"

namespace bddm {

namespace {

// Grid nodes whose posterior mass falls below this contribute nothing visible
// to the average and are skipped.
constexpr double kNegligibleMass = 1e-18;

}  // namespace

std::string to_string(DenoiserKind kind) {
  switch (kind) {
    case DenoiserKind::analytic_nonblind: return "analytic_nonblind";
    case DenoiserKind::analytic_blind_mle: return "analytic_blind_mle";
    case DenoiserKind::analytic_blind_posterior: return "analytic_blind_posterior";
    case DenoiserKind::trained_network: return "trained_network";
  }
  return "unknown";
}

DenoiserSpec DenoiserSpec::nonblind(GaussianMixture model) {
  DenoiserSpec s;
  s.kind_ = DenoiserKind::analytic_nonblind;
  s.model_ = std::make_shared<const GaussianMixture>(std::move(model));
  return s;
}

DenoiserSpec DenoiserSpec::blind_mle(GaussianMixture model, NoisePrior prior, int grid_count) {
  DenoiserSpec s;
  s.kind_ = DenoiserKind::analytic_blind_mle;
  s.model_ = std::make_shared<const GaussianMixture>(std::move(model));
  s.grid_ = std::make_shared<const SigmaGrid>(SigmaGrid::for_prior(prior, grid_count));
  s.prior_ = prior;
  return s;
}

DenoiserSpec DenoiserSpec::blind_posterior(GaussianMixture model, NoisePrior prior,
                                           int grid_count) {
  DenoiserSpec s = blind_mle(std::move(model), prior, grid_count);
  s.kind_ = DenoiserKind::analytic_blind_posterior;
  return s;
}

DenoiserSpec DenoiserSpec::network(DenseNet net) {
  if (net.layers().empty()) throw ConfigError("network denoiser needs a built network");
  DenoiserSpec s;
  s.kind_ = DenoiserKind::trained_network;
  s.net_ = std::make_shared<const DenseNet>(std::move(net));
  return s;
}

int DenoiserSpec::ambient_dim() const {
  return net_ ? net_->data_dim() : model_->ambient_dim();
}

const GaussianMixture& DenoiserSpec::model() const {
  if (!model_) throw UnsupportedOperation(to_string(kind_) + " denoiser has no analytic model");
  return *model_;
}

const NoisePrior& DenoiserSpec::prior() const {
  if (!prior_) throw UnsupportedOperation(to_string(kind_) + " denoiser has no noise prior");
  return *prior_;
}

const SigmaGrid& DenoiserSpec::grid() const {
  if (!grid_) throw UnsupportedOperation(to_string(kind_) + " denoiser has no sigma grid");
  return *grid_;
}

const DenseNet& DenoiserSpec::net() const {
  if (!net_) throw UnsupportedOperation(to_string(kind_) + " denoiser has no network");
  return *net_;
}

bool DenoiserSpec::accepts_sigma() const {
  return kind_ == DenoiserKind::analytic_nonblind ||
         (kind_ == DenoiserKind::trained_network && net_->conditioned());
}

bool DenoiserSpec::is_blind() const {
  return kind_ == DenoiserKind::analytic_blind_mle ||
         kind_ == DenoiserKind::analytic_blind_posterior ||
         (kind_ == DenoiserKind::trained_network && !net_->conditioned());
}

Vector DenoiserSpec::default_init_mean() const {
  if (kind_ == DenoiserKind::trained_network) return net_->stats().mean;
  return Vector::Zero(ambient_dim());
}

// ---------------------------------------------------------------------------

Vector denoise_nonblind(const DenoiserSpec& spec, const Vector& y, double sigma) {
  if (!spec.accepts_sigma())
    throw UnsupportedOperation(to_string(spec.kind()) + " denoiser cannot take a noise level");
  if (spec.kind() == DenoiserKind::trained_network) return spec.net().forward(y, sigma);
  return y + sigma * sigma * noisy_score(spec.model(), y, sigma);
}

BlindOutput denoise_blind_mle(const DenoiserSpec& spec, const Vector& y) {
  if (spec.kind() != DenoiserKind::analytic_blind_mle)
    throw UnsupportedOperation("maximum-likelihood denoising needs an analytic_blind_mle spec");
  const GaussianMixture& model = spec.model();
  const ObservationStats stats = observe(model, y);
  const SigmaEstimate est = mle_sigma(model, spec.prior(), stats, spec.grid());
  const NoiseLevelTerms terms = evaluate_noise_level(model, stats, est.sigma);
  BlindOutput out;
  out.denoised = y + est.sigma * est.sigma * noisy_score(model, y, terms);
  out.sigma_hat = est.sigma;
  out.at_boundary = est.at_boundary;
  return out;
}

Vector denoise_blind_posterior(const DenoiserSpec& spec, const Vector& y) {
  if (spec.kind() != DenoiserKind::analytic_blind_posterior)
    throw UnsupportedOperation("posterior-average denoising needs an analytic_blind_posterior spec");
  const GaussianMixture& model = spec.model();
  const SigmaGrid& grid = spec.grid();
  const ObservationStats stats = observe(model, y);
  const GridPosterior post = posterior_on_grid(model, spec.prior(), stats, grid);
  // f*(y) = y + int sigma^2 score(y, sigma) dmu(sigma | y); accumulate the
  // correction only, so y itself is never rounded through the average.
  Vector correction = Vector::Zero(y.size());
  double kept = 0.0;
  for (int j = 0; j < grid.size(); ++j) {
    const double m = post.mass[static_cast<std::size_t>(j)];
    if (m < kNegligibleMass) continue;
    const NoiseLevelTerms terms = evaluate_noise_level(model, stats, grid[j]);
    correction += (m * grid[j] * grid[j]) * noisy_score(model, y, terms);
    kept += m;
  }
  return y + correction / kept;
}

double residual_sigma_estimate(const Vector& denoised, const Vector& y, int d) {
  if (d < 1) throw ConfigError("dimension must be >= 1");
  return std::sqrt((denoised - y).squaredNorm() / d);
}

BlindOutput denoise_blind(const DenoiserSpec& spec, const Vector& y) {
  switch (spec.kind()) {
    case DenoiserKind::analytic_blind_mle:
      return denoise_blind_mle(spec, y);
    case DenoiserKind::analytic_blind_posterior: {
      BlindOutput out;
      out.denoised = denoise_blind_posterior(spec, y);
      out.sigma_hat = residual_sigma_estimate(out.denoised, y, static_cast<int>(y.size()));
      return out;
    }
    case DenoiserKind::trained_network: {
      if (spec.net().conditioned())
        throw UnsupportedOperation("a sigma-conditioned network is not a blind denoiser");
      BlindOutput out;
      out.denoised = spec.net().forward(y);
      out.sigma_hat = residual_sigma_estimate(out.denoised, y, static_cast<int>(y.size()));
      return out;
    }
    case DenoiserKind::analytic_nonblind:
      break;
  }
  throw UnsupportedOperation("analytic_nonblind denoiser needs a noise level");
}

}  // namespace bddm
