#include "bddm/schedules.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bddm/error.hpp"
#include "bddm/io.hpp"

namespace bddm {

namespace {

constexpr double kTabulatedTolerance = 1e-12;

void require_sigma0(double sigma0) {
  if (!(sigma0 > 0.0) || !std::isfinite(sigma0))
    throw ConfigError("schedule needs a positive initial noise level");
}

double simpson_step(const std::function<double(double)>& f, double a, double b, double fa,
                    double fm, double fb, double whole, double tolerance, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tolerance) return left + right + delta / 15.0;
  return simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tolerance, depth - 1) +
         simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tolerance, depth - 1);
}

// Integral over [a, b] split at the given breakpoints.
double piecewise_simpson(const std::function<double(double)>& f, double a, double b,
                         const std::vector<double>& breakpoints, double tolerance) {
  if (b <= a) return 0.0;
  std::vector<double> cuts{a};
  for (double t : breakpoints)
    if (t > a && t < b) cuts.push_back(t);
  cuts.push_back(b);
  double total = 0.0;
  const double per_piece = tolerance / static_cast<double>(cuts.size() - 1);
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
    total += adaptive_simpson(f, cuts[i], cuts[i + 1], per_piece);
  return total;
}

}  // namespace

double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                        double tolerance) {
  if (b == a) return 0.0;
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_step(f, a, b, fa, fm, fb, whole, tolerance, 50);
}

// ---------------------------------------------------------------------------
// DiffusionSchedule

DiffusionSchedule DiffusionSchedule::zero(double sigma0) {
  require_sigma0(sigma0);
  return {Kind::zero, 0.0, sigma0};
}

DiffusionSchedule DiffusionSchedule::constant(double a, double sigma0) {
  require_sigma0(sigma0);
  if (!(a >= 0.0) || !std::isfinite(a)) throw ConfigError("diffusion coefficient must be >= 0");
  return {Kind::constant, a, sigma0};
}

DiffusionSchedule DiffusionSchedule::proportional(double fraction, double sigma0) {
  require_sigma0(sigma0);
  if (!(fraction > 0.0 && fraction < 1.0))
    throw ConfigError("proportional schedule needs a fraction in (0, 1)");
  return {Kind::proportional, fraction, sigma0};
}

DiffusionSchedule DiffusionSchedule::tabulated(std::vector<double> times,
                                               std::vector<double> values, double sigma0) {
  require_sigma0(sigma0);
  if (times.empty() || times.size() != values.size())
    throw ConfigError("tabulated schedule needs matching, non-empty node arrays");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1])) throw ConfigError("tabulated nodes must be strictly increasing");
  for (double v : values)
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("tabulated a_t must be >= 0");
  DiffusionSchedule s{Kind::tabulated, 0.0, sigma0};
  s.times_ = std::move(times);
  s.values_ = std::move(values);
  return s;
}

double DiffusionSchedule::coefficient(double t) const {
  switch (kind_) {
    case Kind::zero:
      return 0.0;
    case Kind::constant:
      return value_;
    case Kind::proportional: {
      const double s = implicit_sigma(*this, t);
      return value_ * s * s;
    }
    case Kind::tabulated: {
      if (t <= times_.front()) return values_.front();
      if (t >= times_.back()) return values_.back();
      const auto it = std::upper_bound(times_.begin(), times_.end(), t);
      const std::size_t i = static_cast<std::size_t>(it - times_.begin());
      const double w = (t - times_[i - 1]) / (times_[i] - times_[i - 1]);
      return (1.0 - w) * values_[i - 1] + w * values_[i];
    }
  }
  return 0.0;
}

std::string DiffusionSchedule::describe() const {
  std::ostringstream os;
  switch (kind_) {
    case Kind::zero: os << "zero"; break;
    case Kind::constant: os << "constant(" << value_ << ")"; break;
    case Kind::proportional: os << "proportional(" << value_ << ")"; break;
    case Kind::tabulated: os << "tabulated(" << times_.size() << " nodes)"; break;
  }
  os << ", sigma0=" << sigma0_;
  return os.str();
}

// ---------------------------------------------------------------------------
// Implicit schedule

double implicit_sigma_by_quadrature(const std::function<double(double)>& coefficient,
                                    double sigma0, double t, double tolerance,
                                    const std::vector<double>& breakpoints) {
  if (t < 0.0) throw DomainError("time must be nonnegative");
  auto integrand = [&](double s) { return 2.0 * coefficient(s) * std::exp(-2.0 * (t - s)); };
  // tolerance is relative to sigma_t^2; a coarse trapezoid pass sets the scale
  const double base = sigma0 * sigma0 * std::exp(-2.0 * t);
  double rough = 0.0;
  constexpr int kCoarse = 64;
  for (int i = 0; i <= kCoarse; ++i)
    rough += (i == 0 || i == kCoarse ? 0.5 : 1.0) * integrand(t * i / kCoarse);
  rough *= t / kCoarse;
  const double scale = std::max(base + std::abs(rough), 1e-300);
  const double injected = piecewise_simpson(integrand, 0.0, t, breakpoints, tolerance * scale);
  return std::sqrt(base + injected);
}

double implicit_sigma(const DiffusionSchedule& schedule, double t) {
  if (t < 0.0) throw DomainError("time must be nonnegative");
  const double s0 = schedule.sigma0();
  switch (schedule.kind()) {
    case DiffusionSchedule::Kind::zero:
      return s0 * std::exp(-t);
    case DiffusionSchedule::Kind::constant: {
      const double a = schedule.constant_value();
      return std::sqrt(s0 * s0 * std::exp(-2.0 * t) - a * std::expm1(-2.0 * t));
    }
    case DiffusionSchedule::Kind::proportional:
      return s0 * std::exp(-(1.0 - schedule.fraction()) * t);
    case DiffusionSchedule::Kind::tabulated:
      return implicit_sigma_by_quadrature(
          [&](double s) { return schedule.coefficient(s); }, s0, t, kTabulatedTolerance,
          schedule.times());
  }
  return s0;
}

double verify_ode(const DiffusionSchedule& schedule, double t_max, int n_check, double step) {
  if (n_check < 2) throw ConfigError("verify_ode needs at least two checkpoints");
  if (!(t_max > step)) throw ConfigError("verify_ode needs t_max > step");
  double worst = 0.0;
  for (int i = 0; i < n_check; ++i) {
    const double t = step + (t_max - step) * i / (n_check - 1);
    const double s = implicit_sigma(schedule, t);
    const double ds = (implicit_sigma(schedule, t + step) - implicit_sigma(schedule, t - step)) /
                      (2.0 * step);
    worst = std::max(worst, std::abs(s * ds + s * s - schedule.coefficient(t)));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// One-step statistics

ExpEulerIncrement exp_euler_increments(const DiffusionSchedule& schedule, double t_start,
                                       double h) {
  if (!(h > 0.0)) throw DomainError("step size must be positive");
  ExpEulerIncrement inc;
  inc.decay = std::exp(-h);
  switch (schedule.kind()) {
    case DiffusionSchedule::Kind::zero:
      inc.inject_var = 0.0;
      break;
    case DiffusionSchedule::Kind::constant:
      inc.inject_var = -schedule.constant_value() * std::expm1(-2.0 * h);
      break;
    case DiffusionSchedule::Kind::proportional: {
      // 2 a s0^2 int e^{-2(1-a)s} e^{-2(t+h-s)} ds = s0^2 e^{-2(1-a)t} e^{-2h} (e^{2ah} - 1)
      const double a = schedule.fraction();
      const double s0 = schedule.sigma0();
      inc.inject_var =
          s0 * s0 * std::exp(-2.0 * (1.0 - a) * t_start - 2.0 * h) * std::expm1(2.0 * a * h);
      break;
    }
    case DiffusionSchedule::Kind::tabulated: {
      const double end = t_start + h;
      auto integrand = [&](double s) {
        return 2.0 * schedule.coefficient(s) * std::exp(-2.0 * (end - s));
      };
      inc.inject_var =
          piecewise_simpson(integrand, t_start, end, schedule.times(), kTabulatedTolerance);
      break;
    }
  }
  return inc;
}

double euler_inject_var(const DiffusionSchedule& schedule, double t_start, double h) {
  if (!(h > 0.0)) throw DomainError("step size must be positive");
  switch (schedule.kind()) {
    case DiffusionSchedule::Kind::zero:
      return 0.0;
    case DiffusionSchedule::Kind::constant:
      return 2.0 * schedule.constant_value() * h;
    case DiffusionSchedule::Kind::proportional: {
      const double a = schedule.fraction();
      const double s0 = schedule.sigma0();
      const double rate = 2.0 * (1.0 - a);
      return 2.0 * a * s0 * s0 * std::exp(-rate * t_start) * (-std::expm1(-rate * h)) / rate;
    }
    case DiffusionSchedule::Kind::tabulated:
      return piecewise_simpson([&](double s) { return 2.0 * schedule.coefficient(s); }, t_start,
                               t_start + h, schedule.times(), kTabulatedTolerance);
  }
  return 0.0;
}

double proportional_terminal_time(double fraction, double sigma0, double sigma_end) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("fraction must be in [0, 1)");
  return std::log(sigma0 / sigma_end) / (1.0 - fraction);
}

// ---------------------------------------------------------------------------
// Explicit schedules

void ExplicitSchedule::validate() const {
  if (n_steps < 1) throw ConfigError("explicit schedule needs at least one step");
  if (!(sigma_min > 0.0) || !(sigma_max > sigma_min))
    throw ConfigError("explicit schedule needs 0 < sigma_min < sigma_max");
  if (kind == Kind::power_law && !(rho > 0.0)) throw ConfigError("power-law rho must be positive");
}

std::vector<double> explicit_sigma_sequence(const ExplicitSchedule& schedule) {
  schedule.validate();
  const int n = schedule.n_steps;
  std::vector<double> out(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i <= n; ++i) {
    const double frac = static_cast<double>(i) / n;
    double s;
    if (schedule.kind == ExplicitSchedule::Kind::log_sigma) {
      s = schedule.sigma_max * std::pow(schedule.sigma_min / schedule.sigma_max, frac);
    } else {
      const double inv = 1.0 / schedule.rho;
      const double hi = std::pow(schedule.sigma_max, inv);
      const double lo = std::pow(schedule.sigma_min, inv);
      s = std::pow(hi + frac * (lo - hi), schedule.rho);
    }
    out[static_cast<std::size_t>(i)] = s;
  }
  out.front() = schedule.sigma_max;
  out.back() = schedule.sigma_min;
  return out;
}

void write_schedule_csv(const DiffusionSchedule& schedule, double t_max, int n,
                        const std::string& path) {
  CsvWriter csv(path, {"t", "sigma_t", "a_t"});
  for (int i = 0; i <= n; ++i) {
    const double t = t_max * i / n;
    csv.row({t, implicit_sigma(schedule, t), schedule.coefficient(t)});
  }
}

}  // namespace bddm
