#pragma once

#include <functional>
#include <string>
#include <vector>

namespace bddm {

/// Diffusion coefficient process (a_t) of the blind sampling SDE
/// dY = (f(Y) - Y) dt + sqrt(2 a_t) dB.
class DiffusionSchedule {
 public:
  enum class Kind { zero, constant, proportional, tabulated };

  static DiffusionSchedule zero(double sigma0);
  static DiffusionSchedule constant(double a, double sigma0);
  /// a_t = fraction * sigma_t^2 on the implicit schedule, fraction in (0, 1).
  static DiffusionSchedule proportional(double fraction, double sigma0);
  /// Piecewise-linear a_t through (times[i], values[i]); held constant outside.
  static DiffusionSchedule tabulated(std::vector<double> times, std::vector<double> values,
                                     double sigma0);

  Kind kind() const { return kind_; }
  double sigma0() const { return sigma0_; }
  double constant_value() const { return value_; }
  double fraction() const { return value_; }
  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& values() const { return values_; }

  /// a_t.
  double coefficient(double t) const;

  std::string describe() const;

 private:
  DiffusionSchedule(Kind kind, double value, double sigma0)
      : kind_(kind), value_(value), sigma0_(sigma0) {}

  Kind kind_;
  double value_ = 0.0;
  double sigma0_;
  std::vector<double> times_;
  std::vector<double> values_;
};

/// sigma_t with sigma_t^2 = sigma0^2 e^{-2t} + 2 int_0^t a_s e^{-2(t-s)} ds.
double implicit_sigma(const DiffusionSchedule& schedule, double t);

/// Same quantity by adaptive Simpson quadrature of an arbitrary coefficient function.
/// `tolerance` is relative to sigma_t^2.
double implicit_sigma_by_quadrature(const std::function<double(double)>& coefficient,
                                    double sigma0, double t, double tolerance = 1e-12,
                                    const std::vector<double>& breakpoints = {});

/// Adaptive Simpson integral of f over [a, b].
double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                        double tolerance);

/// Max |sigma sigma' + sigma^2 - a_t| over n_check points in (0, t_max], with
/// sigma' from central differences of implicit_sigma.
double verify_ode(const DiffusionSchedule& schedule, double t_max, int n_check,
                  double step = 1e-5);

struct ExpEulerIncrement {
  double decay = 1.0;       // e^{-h}
  double inject_var = 0.0;  // 2 int_{t}^{t+h} a_s e^{-2(t+h-s)} ds
};

ExpEulerIncrement exp_euler_increments(const DiffusionSchedule& schedule, double t_start,
                                       double h);

/// 2 int_{t}^{t+h} a_s ds, the injected variance of a plain Euler step.
double euler_inject_var(const DiffusionSchedule& schedule, double t_start, double h);

/// Terminal time at which the proportional schedule reaches sigma_end.
double proportional_terminal_time(double fraction, double sigma0, double sigma_end);

/// Explicit schedule for the non-blind reference sampler.
struct ExplicitSchedule {
  enum class Kind { log_sigma, power_law };
  Kind kind = Kind::log_sigma;
  int n_steps = 100;
  double sigma_min = 0.05;
  double sigma_max = 4.0;
  double rho = 7.0;  // power_law only

  void validate() const;
};

/// N + 1 strictly decreasing noise levels from sigma_max to sigma_min.
std::vector<double> explicit_sigma_sequence(const ExplicitSchedule& schedule);

/// CSV with columns t, sigma_t, a_t on n + 1 evenly spaced times in [0, t_max].
void write_schedule_csv(const DiffusionSchedule& schedule, double t_max, int n,
                        const std::string& path);

}  // namespace bddm
