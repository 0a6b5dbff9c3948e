#include "bddm/samplers.hpp"

#include <cmath>
#include <limits>

#include "bddm/error.hpp"
#include "bddm/io.hpp"
#include "bddm/parallel.hpp"
#include "bddm/rng.hpp"

namespace bddm {

// ---------------------------------------------------------------------------
// SamplerConfig

void SamplerConfig::validate() const {
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ConfigError("step_size must be positive");
  if (!(sigma_min > 0.0) || !(sigma_max > sigma_min) || !std::isfinite(sigma_max))
    throw ConfigError("sampler needs 0 < sigma_min < sigma_max");
  if (schedule && adaptive) throw ConfigError("set either a fixed schedule or adaptive diffusion, not both");
  if (adaptive && !(adaptive->fraction >= 0.0 && adaptive->fraction < 1.0))
    throw ConfigError("adaptive diffusion fraction must be in [0, 1)");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0 (0 selects the default)");
}

double SamplerConfig::diffusion_fraction() const {
  if (adaptive) return adaptive->fraction;
  if (schedule && schedule->kind() == DiffusionSchedule::Kind::proportional)
    return schedule->fraction();
  return 0.0;
}

int SamplerConfig::resolved_max_steps() const {
  if (max_steps > 0) return max_steps;
  const double per_step = (1.0 - diffusion_fraction()) * step_size;
  return 10 * static_cast<int>(std::ceil(std::log(sigma_max / sigma_min) / per_step));
}

nlohmann::json SamplerConfig::to_json() const {
  nlohmann::json j{{"step_size", step_size},
                   {"sigma_max", sigma_max},
                   {"sigma_min", sigma_min},
                   {"integrator", integrator == Integrator::euler ? "euler" : "exp_euler"},
                   {"max_steps", resolved_max_steps()},
                   {"seed", seed}};
  if (schedule) j["diffusion"] = schedule->describe();
  else if (adaptive)
    j["diffusion"] = {{"adaptive_fraction", adaptive->fraction},
                      {"units", adaptive->std_units ? "std" : "variance"}};
  else j["diffusion"] = "zero";
  return j;
}

std::string to_string(Termination t) {
  return t == Termination::sigma_min_reached ? "sigma_min_reached" : "max_steps";
}

// ---------------------------------------------------------------------------
// Noise streams

Vector initial_noise(std::uint64_t seed, int d) {
  Rng rng(derive_seed(seed, streams::kInit, 0));
  return rng.normal_vector(d);
}

Vector step_noise(std::uint64_t seed, int step, int d) {
  Rng rng(derive_seed(seed, streams::kStep, static_cast<std::uint64_t>(step)));
  return rng.normal_vector(d);
}

namespace {

Vector resolve_init_mean(const DenoiserSpec& denoiser, const SamplerConfig& config, int d) {
  Vector m = config.init_mean ? *config.init_mean : denoiser.default_init_mean();
  if (m.size() != d) throw ConfigError("init_mean has the wrong dimension");
  return m;
}

void record(Trajectory& tr, const SamplerConfig& config, double t, double sigma_hat,
            const Vector& x) {
  tr.times.push_back(t);
  tr.sigma_hats.push_back(sigma_hat);
  tr.state_norms.push_back(x.norm());
  if (config.keep_states) tr.states.push_back(x);
}

double injected_variance(const SamplerConfig& config, int k, double sigma_hat) {
  const double h = config.step_size;
  if (config.adaptive) {
    const double f = config.adaptive->fraction;
    const double a = config.adaptive->std_units ? f * sigma_hat : f * sigma_hat * sigma_hat;
    return config.integrator == Integrator::exp_euler ? -a * std::expm1(-2.0 * h) : 2.0 * a * h;
  }
  if (config.schedule) {
    const double t = k * h;
    return config.integrator == Integrator::exp_euler
               ? exp_euler_increments(*config.schedule, t, h).inject_var
               : euler_inject_var(*config.schedule, t, h);
  }
  return 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Blind sampler

Trajectory run_blind(const DenoiserSpec& denoiser, const SamplerConfig& config) {
  config.validate();
  if (!denoiser.is_blind())
    throw UnsupportedOperation(to_string(denoiser.kind()) + " denoiser cannot drive the blind sampler");
  const int d = denoiser.ambient_dim();
  const int max_steps = config.resolved_max_steps();
  const double h = config.step_size;
  // Drift weight of f(X) - X: h for Euler, 1 - e^{-h} for exponential Euler.
  const double drift = config.integrator == Integrator::exp_euler ? -std::expm1(-h) : h;

  Trajectory tr;
  tr.seed = config.seed;
  Vector x = resolve_init_mean(denoiser, config, d) + config.sigma_max * initial_noise(config.seed, d);
  for (int k = 0;; ++k) {
    const BlindOutput out = denoise_blind(denoiser, x);
    if (!out.denoised.allFinite())
      throw NumericalFailure("denoiser returned non-finite output at step " + std::to_string(k));
    record(tr, config, k * h, out.sigma_hat, x);
    if (out.sigma_hat <= config.sigma_min) {
      tr.terminated_by = Termination::sigma_min_reached;
      break;
    }
    if (k == max_steps) {
      tr.terminated_by = Termination::max_steps;
      break;
    }
    const double var = injected_variance(config, k, out.sigma_hat);
    const Vector z = step_noise(config.seed, k, d);
    tr.noise_keys.push_back(derive_seed(config.seed, streams::kStep, static_cast<std::uint64_t>(k)));
    x += drift * (out.denoised - x);
    if (var > 0.0) {
      x += std::sqrt(var) * z;
      if (config.keep_states) tr.injected.push_back(std::sqrt(var) * z);
    } else if (config.keep_states) {
      tr.injected.push_back(Vector::Zero(d));
    }
  }
  tr.final_state = std::move(x);
  return tr;
}

std::vector<Trajectory> run_blind_batch(const DenoiserSpec& denoiser, const SamplerConfig& config,
                                        int n) {
  if (n < 1) throw ConfigError("batch size must be >= 1");
  std::vector<Trajectory> out(static_cast<std::size_t>(n));
  parallel_for(out.size(), [&](std::size_t j) {
    SamplerConfig c = config;
    c.seed = derive_seed(config.seed, streams::kTrajectory, j);
    out[j] = run_blind(denoiser, c);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Non-blind reference sampler

Trajectory run_nonblind_ve(const DenoiserSpec& denoiser, const ExplicitSchedule& schedule,
                           const SamplerConfig& config) {
  return run_nonblind_ve(denoiser, explicit_sigma_sequence(schedule), config);
}

Trajectory run_nonblind_ve(const DenoiserSpec& denoiser, const std::vector<double>& sigmas,
                           const SamplerConfig& config) {
  if (!denoiser.accepts_sigma())
    throw UnsupportedOperation(to_string(denoiser.kind()) + " denoiser cannot drive the VE sampler");
  if (sigmas.empty()) throw ConfigError("noise sequence is empty");
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    if (!(sigmas[i] > 0.0) || !std::isfinite(sigmas[i]))
      throw ConfigError("noise levels must be positive and finite");
    if (i > 0 && sigmas[i] > sigmas[i - 1]) throw ConfigError("noise sequence must be non-increasing");
  }
  const int d = denoiser.ambient_dim();
  Trajectory tr;
  tr.seed = config.seed;
  Vector x = resolve_init_mean(denoiser, config, d) + sigmas.front() * initial_noise(config.seed, d);
  const int n = static_cast<int>(sigmas.size()) - 1;
  for (int i = 0;; ++i) {
    const double s = sigmas[static_cast<std::size_t>(i)];
    const Vector f = denoise_nonblind(denoiser, x, s);
    if (!f.allFinite())
      throw NumericalFailure("denoiser returned non-finite output at step " + std::to_string(i));
    record(tr, config, i, residual_sigma_estimate(f, x, d), x);
    tr.sigma_scheduled.push_back(s);
    if (i == n) break;
    const double next = sigmas[static_cast<std::size_t>(i) + 1];
    const double var = s * s - next * next;
    const Vector z = step_noise(config.seed, i, d);
    tr.noise_keys.push_back(derive_seed(config.seed, streams::kStep, static_cast<std::uint64_t>(i)));
    // (s^2 - s'^2) * score with score = (f - x) / s^2
    x += (var / (s * s)) * (f - x);
    if (var > 0.0) x += std::sqrt(var) * z;
    if (config.keep_states) tr.injected.push_back(var > 0.0 ? Vector(std::sqrt(var) * z) : Vector::Zero(d));
  }
  tr.terminated_by = Termination::sigma_min_reached;
  tr.final_state = std::move(x);
  return tr;
}

std::vector<Trajectory> run_nonblind_batch(const DenoiserSpec& denoiser,
                                           const ExplicitSchedule& schedule,
                                           const SamplerConfig& config, int n) {
  if (n < 1) throw ConfigError("batch size must be >= 1");
  const std::vector<double> sigmas = explicit_sigma_sequence(schedule);
  std::vector<Trajectory> out(static_cast<std::size_t>(n));
  parallel_for(out.size(), [&](std::size_t j) {
    SamplerConfig c = config;
    c.seed = derive_seed(config.seed, streams::kTrajectory, j);
    out[j] = run_nonblind_ve(denoiser, sigmas, c);
  });
  return out;
}

std::pair<Trajectory, Trajectory> matched_pair(const DenoiserSpec& blind,
                                               const SamplerConfig& blind_config,
                                               const DenoiserSpec& nonblind,
                                               const ExplicitSchedule& schedule,
                                               const SamplerConfig& nonblind_config,
                                               std::uint64_t shared_seed) {
  if (blind.ambient_dim() != nonblind.ambient_dim())
    throw ConfigError("matched runs need the same dimension");
  if (std::abs(blind_config.sigma_max - schedule.sigma_max) > 1e-12 * schedule.sigma_max)
    throw ConfigError("matched runs need the same sigma_max");
  SamplerConfig b = blind_config;
  SamplerConfig nb = nonblind_config;
  b.seed = shared_seed;
  nb.seed = shared_seed;
  return {run_blind(blind, b), run_nonblind_ve(nonblind, schedule, nb)};
}

Matrix final_states(const std::vector<Trajectory>& batch) {
  if (batch.empty()) return {};
  Matrix out(batch.front().final_state.size(), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t j = 0; j < batch.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = batch[j].final_state;
  return out;
}

void write_trajectory_csv(const Trajectory& tr, const std::string& path) {
  CsvWriter csv(path, {"step", "t", "sigma_hat", "sigma_scheduled", "state_norm"});
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t k = 0; k < tr.times.size(); ++k)
    csv.row({static_cast<double>(k), tr.times[k], tr.sigma_hats[k],
             k < tr.sigma_scheduled.size() ? tr.sigma_scheduled[k] : nan, tr.state_norms[k]});
}

}  // namespace bddm
