#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bddm/denoisers.hpp"
#include "bddm/schedules.hpp"

namespace bddm {

enum class Integrator { euler, exp_euler };

/// a_k = fraction * sigma_hat_k^2 (variance units, the default) or
/// fraction * sigma_hat_k (std units), frozen within each step.
struct AdaptiveDiffusion {
  double fraction = 0.5;
  bool std_units = false;
};

struct SamplerConfig {
  double step_size = 0.5;
  double sigma_max = 4.0;
  double sigma_min = 0.05;
  Integrator integrator = Integrator::exp_euler;
  /// At most one of these is set; neither means a = 0.
  std::optional<DiffusionSchedule> schedule;
  std::optional<AdaptiveDiffusion> adaptive;
  /// 0 selects 10 * ceil(log(sigma_max / sigma_min) / ((1 - fraction) h)).
  int max_steps = 0;
  std::uint64_t seed = 0;
  /// Defaults to the denoiser's own choice (data mean for networks, 0 otherwise).
  std::optional<Vector> init_mean;
  /// Keep every state and every injected noise vector (memory heavy at large d).
  bool keep_states = false;

  void validate() const;
  /// Fraction of sigma^2 driving the diffusion: adaptive or proportional fraction, else 0.
  double diffusion_fraction() const;
  int resolved_max_steps() const;
  nlohmann::json to_json() const;
};

enum class Termination { sigma_min_reached, max_steps };
std::string to_string(Termination t);

struct Trajectory {
  std::vector<double> times;            // k h (blind) or step index (non-blind)
  std::vector<double> sigma_hats;       // estimated noise level at each recorded state
  std::vector<double> sigma_scheduled;  // scheduled sigma_i, non-blind runs only
  std::vector<double> state_norms;
  std::vector<std::uint64_t> noise_keys;  // stream key of each step's injected draw
  std::vector<Vector> states;             // only with keep_states
  std::vector<Vector> injected;           // only with keep_states
  Vector final_state;
  Termination terminated_by = Termination::sigma_min_reached;
  std::uint64_t seed = 0;

  /// Number of integration steps taken.
  int steps() const { return static_cast<int>(noise_keys.size()); }
};

/// Standard normal initial draw and per-step draws, keyed by (seed, step).
Vector initial_noise(std::uint64_t seed, int d);
Vector step_noise(std::uint64_t seed, int step, int d);

/// Blind sampler: X_0 ~ N(m, sigma_max^2 I); s_k = f(X_k) - X_k; stop when
/// sigma_hat_k <= sigma_min; otherwise take one Euler or exponential-Euler step.
Trajectory run_blind(const DenoiserSpec& denoiser, const SamplerConfig& config);

/// n independent trajectories with seeds derived from config.seed; runs in parallel.
std::vector<Trajectory> run_blind_batch(const DenoiserSpec& denoiser, const SamplerConfig& config,
                                        int n);

/// Reference VE sampler over an explicit decreasing noise sequence:
/// X_{i+1} = X_i + (1 - s_{i+1}^2 / s_i^2)(f(X_i, s_i) - X_i) + sqrt(s_i^2 - s_{i+1}^2) z_i.
/// Uses config.seed, init_mean and keep_states only.
Trajectory run_nonblind_ve(const DenoiserSpec& denoiser, const ExplicitSchedule& schedule,
                           const SamplerConfig& config);
/// Same over a raw sequence, which only needs to be non-increasing.
Trajectory run_nonblind_ve(const DenoiserSpec& denoiser, const std::vector<double>& sigmas,
                           const SamplerConfig& config);

std::vector<Trajectory> run_nonblind_batch(const DenoiserSpec& denoiser,
                                           const ExplicitSchedule& schedule,
                                           const SamplerConfig& config, int n);

/// Blind and non-blind runs sharing the initial draw and the per-step noise stream.
std::pair<Trajectory, Trajectory> matched_pair(const DenoiserSpec& blind,
                                               const SamplerConfig& blind_config,
                                               const DenoiserSpec& nonblind,
                                               const ExplicitSchedule& schedule,
                                               const SamplerConfig& nonblind_config,
                                               std::uint64_t shared_seed);

/// Final states of a batch as a d x n matrix.
Matrix final_states(const std::vector<Trajectory>& batch);

/// CSV columns: step, t, sigma_hat, sigma_scheduled, state_norm.
void write_trajectory_csv(const Trajectory& trajectory, const std::string& path);

}  // namespace bddm
