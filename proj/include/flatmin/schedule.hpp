#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "flatmin/error.hpp"

namespace flatmin {

/// Multipliers applied to the asymptotic parameter orders, plus a hard cap on
/// the step budget (the raw budgets are astronomically large at useful eps).
struct ScheduleConstants {
  double c_eta = 1.0;
  double c_rho = 1.0;
  double c_eps0 = 1.0;
  double c_T = 1.0;
  std::uint64_t budget_cap = 1'000'000;
};

/// Step sizes, perturbation radius, branch tolerance and step budget.
struct Schedule {
  double eta = 0.0;        // perturbed-phase step
  double eta_prime = 0.0;  // gradient-descent-phase step
  double rho = 0.0;        // perturbation radius
  double eps0 = 0.0;       // perturbed step taken iff |grad f| <= eps0
  std::uint64_t T = 0;
  double raw_T = 0.0;      // budget before capping
  std::optional<double> nu;
  ScheduleConstants constants;

  void validate() const {
    if (!(eta > 0.0) || !(eta_prime > 0.0) || !(rho >= 0.0) || !(eps0 >= 0.0) || T == 0) {
      throw InvalidArgument("Schedule: eta, eta_prime and T must be positive; rho, eps0 >= 0");
    }
  }
};

namespace detail {

inline void check_schedule_inputs(double eps, double delta, double beta_hat,
                                  const ScheduleConstants& c) {
  if (!(eps > 0.0)) throw InvalidArgument("schedule: eps must be positive");
  if (!(delta > 0.0 && delta < 1.0)) {
    throw InvalidArgument("schedule: delta must lie in (0, 1), got " + std::to_string(delta));
  }
  if (!(beta_hat > 0.0)) throw InvalidArgument("schedule: beta_hat must be positive");
  if (!(c.c_eta > 0.0 && c.c_rho > 0.0 && c.c_eps0 > 0.0 && c.c_T > 0.0) || c.budget_cap == 0) {
    throw InvalidArgument("schedule: constants must be positive");
  }
}

inline std::uint64_t capped_budget(double raw, std::uint64_t cap) {
  if (!(raw < static_cast<double>(cap))) return cap;
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::ceil(raw)));
}

}  // namespace detail

/// Randomly smoothed perturbation schedule:
/// eta = c delta eps, eta' = 1/beta, rho = c delta sqrt(eps),
/// eps0 = c delta^1.5 eps, T = c eps^-3 delta^-4.
inline Schedule rs_schedule(double eps, double delta, double beta_hat,
                            const ScheduleConstants& c = {}) {
  detail::check_schedule_inputs(eps, delta, beta_hat, c);
  Schedule s;
  s.constants = c;
  s.eta = c.c_eta * delta * eps;
  s.eta_prime = 1.0 / beta_hat;
  s.rho = c.c_rho * delta * std::sqrt(eps);
  s.eps0 = c.c_eps0 * std::pow(delta, 1.5) * eps;
  s.raw_T = c.c_T / (eps * eps * eps * std::pow(delta, 4));
  s.T = detail::capped_budget(s.raw_T, c.budget_cap);
  return s;
}

/// Sharpness-aware perturbation schedule with nu = min(d, eps^{-1/3}):
/// eta = c nu delta eps, rho = c nu delta sqrt(eps), eps0 = c (nu delta)^1.5 eps,
/// T = c d^-1 eps^-2 max(1, 1/(d^3 eps)) delta^-4.
inline Schedule sa_schedule(double eps, double delta, std::size_t d, double beta_hat,
                            const ScheduleConstants& c = {}) {
  detail::check_schedule_inputs(eps, delta, beta_hat, c);
  if (d == 0) throw InvalidArgument("sa_schedule: dimension must be >= 1");
  const double dd = static_cast<double>(d);
  const double nu = std::min(dd, std::cbrt(1.0 / eps));
  Schedule s;
  s.constants = c;
  s.nu = nu;
  s.eta = c.c_eta * nu * delta * eps;
  s.eta_prime = 1.0 / beta_hat;
  s.rho = c.c_rho * nu * delta * std::sqrt(eps);
  s.eps0 = c.c_eps0 * std::pow(nu * delta, 1.5) * eps;
  s.raw_T = c.c_T / (dd * eps * eps) * std::max(1.0, 1.0 / (dd * dd * dd * eps)) /
            std::pow(delta, 4);
  s.T = detail::capped_budget(s.raw_T, c.budget_cap);
  return s;
}

}  // namespace flatmin
