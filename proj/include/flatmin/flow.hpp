#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <variant>

#include "flatmin/error.hpp"
#include "flatmin/geometry.hpp"
#include "flatmin/objective.hpp"
#include "flatmin/types.hpp"

namespace flatmin {

/// Gradient descent x <- x - h grad f(x). h = 0 selects 1/(2 beta_hat) from
/// the objective's Lipschitz hint.
struct FixedStep {
  double h = 0.0;
};

/// Embedded Dormand-Prince 5(4) integration of x' = -grad f(x). The local error
/// of each step is held below rtol times the length of that step, so accuracy
/// is relative to the remaining motion and does not stall near the limit.
struct AdaptiveStep {
  double rtol = 1e-6;
  double initial_step = 1e-2;
};

struct FlowConfig {
  double grad_tol = 1e-10;
  std::uint64_t max_steps = 10'000'000;
  std::variant<AdaptiveStep, FixedStep> step_rule = AdaptiveStep{};

  /// Tight stopping tolerance for oracle runs.
  static FlowConfig reference() {
    FlowConfig cfg;
    cfg.grad_tol = 1e-13;
    cfg.step_rule = AdaptiveStep{1e-8, 1e-2};
    return cfg;
  }

  void validate() const {
    if (!(grad_tol > 0.0)) throw InvalidArgument("FlowConfig: grad_tol must be positive");
    if (max_steps == 0) throw InvalidArgument("FlowConfig: max_steps must be positive");
    if (const auto* fixed = std::get_if<FixedStep>(&step_rule); fixed && fixed->h < 0.0) {
      throw InvalidArgument("FlowConfig: fixed step must be nonnegative");
    }
    if (const auto* ad = std::get_if<AdaptiveStep>(&step_rule);
        ad && (!(ad->rtol > 0.0) || !(ad->initial_step > 0.0))) {
      throw InvalidArgument("FlowConfig: adaptive rtol and initial step must be positive");
    }
  }
};

struct FlowResult {
  Vector limit;
  double grad_norm = 0.0;
  std::uint64_t steps = 0;
};

/// Called after every accepted step with the new point and f there.
using FlowObserver = std::function<void(const Vector&, double)>;

namespace detail {

inline void check_flow_finite(const Vector& x, double grad_norm, std::uint64_t steps) {
  if (!x.allFinite() || !std::isfinite(grad_norm)) {
    throw NonConvergence("gradient flow diverged after " + std::to_string(steps) + " steps", x,
                         grad_norm);
  }
}

inline FlowResult fixed_flow(const Objective& obj, Vector x, const FlowConfig& cfg, double h,
                             const FlowObserver& observer) {
  Vector g = obj.gradient(x);
  double gn = g.norm();
  std::uint64_t steps = 0;
  while (true) {
    check_flow_finite(x, gn, steps);
    if (gn <= cfg.grad_tol) return {std::move(x), gn, steps};
    if (steps >= cfg.max_steps) break;
    x -= h * g;
    ++steps;
    if (observer) observer(x, obj.value(x));
    g = obj.gradient(x);
    gn = g.norm();
  }
  throw NonConvergence("gradient flow: max_steps (" + std::to_string(cfg.max_steps) +
                           ") exceeded, |grad f| = " + std::to_string(gn),
                       x, gn);
}

inline FlowResult adaptive_flow(const Objective& obj, Vector x, const FlowConfig& cfg,
                                const AdaptiveStep& rule, const FlowObserver& observer) {
  // Dormand-Prince coefficients.
  static constexpr double a21 = 1.0 / 5.0;
  static constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
  static constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
  static constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0,
                          a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0;
  static constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                          a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
  static constexpr double b1 = 35.0 / 384.0, b3 = 500.0 / 1113.0, b4 = 125.0 / 192.0,
                          b5 = -2187.0 / 6784.0, b6 = 11.0 / 84.0;
  // Difference between the 5th and embedded 4th order weights.
  static constexpr double e1 = 35.0 / 384.0 - 5179.0 / 57600.0;
  static constexpr double e3 = 500.0 / 1113.0 - 7571.0 / 16695.0;
  static constexpr double e4 = 125.0 / 192.0 - 393.0 / 640.0;
  static constexpr double e5 = -2187.0 / 6784.0 + 92097.0 / 339200.0;
  static constexpr double e6 = 11.0 / 84.0 - 187.0 / 2100.0;
  static constexpr double e7 = -1.0 / 40.0;

  auto rhs = [&](const Vector& p) -> Vector { return -obj.gradient(p); };

  // Rounding x perturbs a beta-Lipschitz gradient by about eps_mach beta |x|.
  // Error estimates below that level are noise, so they are not asked for.
  double beta = 1.0;
  if (obj.lipschitz_grad_hint) beta = *obj.lipschitz_grad_hint;
  else if (obj.has_hessian()) beta = std::max(obj.hessian(x).norm(), 1e-300);
  const double noise_per_norm = 8.0 * std::numeric_limits<double>::epsilon() * beta;

  Vector k1 = rhs(x);
  double gn = k1.norm();
  double h = rule.initial_step;
  std::uint64_t attempts = 0;
  std::uint64_t accepted = 0;
  while (true) {
    check_flow_finite(x, gn, accepted);
    if (gn <= cfg.grad_tol) return {std::move(x), gn, accepted};
    if (attempts >= cfg.max_steps) break;
    ++attempts;

    const Vector k2 = rhs(x + h * (a21 * k1));
    const Vector k3 = rhs(x + h * (a31 * k1 + a32 * k2));
    const Vector k4 = rhs(x + h * (a41 * k1 + a42 * k2 + a43 * k3));
    const Vector k5 = rhs(x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    const Vector k6 = rhs(x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    const Vector increment = h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const Vector next = x + increment;
    const Vector k7 = rhs(next);
    const Vector err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

    const double err_norm = err.norm();
    const double resolved = rule.rtol * increment.norm();
    const double scale = resolved + h * noise_per_norm * (1.0 + x.norm()) + 1e-300;
    const double ratio = err_norm / scale;
    // A step passed only by the noise floor must still shrink the gradient;
    // otherwise h has outgrown the stability region.
    const bool stable = err_norm <= resolved || k7.norm() < gn;
    if (ratio <= 1.0 && stable && next.allFinite() && k7.allFinite()) {
      x = next;
      k1 = k7;
      gn = k1.norm();
      ++accepted;
      if (observer) observer(x, obj.value(x));
    }
    double factor = ratio > 0.0 ? 0.9 * std::pow(ratio, -0.2) : 5.0;
    if (!std::isfinite(factor) || !stable) factor = 0.5;
    h *= std::clamp(factor, 0.2, 5.0);
  }
  throw NonConvergence("gradient flow: max_steps (" + std::to_string(cfg.max_steps) +
                           ") exceeded, |grad f| = " + std::to_string(gn),
                       x, gn);
}

}  // namespace detail

/// Integrates the gradient flow from x0 until |grad f| <= grad_tol.
inline FlowResult run_gradient_flow(const Objective& obj, const Vector& x0, const FlowConfig& cfg,
                                    const FlowObserver& observer = {}) {
  cfg.validate();
  if (x0.size() != static_cast<Eigen::Index>(obj.dim)) {
    throw InvalidArgument("gradient flow: start point has wrong dimension");
  }
  if (const auto* fixed = std::get_if<FixedStep>(&cfg.step_rule)) {
    double h = fixed->h;
    if (h == 0.0) {
      if (!obj.lipschitz_grad_hint) {
        throw InvalidArgument("gradient flow: fixed step needs h or a Lipschitz hint");
      }
      h = 1.0 / (2.0 * *obj.lipschitz_grad_hint);
    }
    return detail::fixed_flow(obj, x0, cfg, h, observer);
  }
  return detail::adaptive_flow(obj, x0, cfg, std::get<AdaptiveStep>(cfg.step_rule), observer);
}

/// Phi(x0): the limit point of the gradient flow started at x0.
inline Vector gradient_flow_limit(const Objective& obj, const Vector& x0,
                                  const FlowConfig& cfg = {}) {
  return run_gradient_flow(obj, x0, cfg).limit;
}

/// Normalized trace at the flow limit, tr(Hess f(Phi(x)))/d.
inline double trace_at_limit(const Objective& obj, const Vector& x, const FlowConfig& cfg = {}) {
  return normalized_trace(obj, gradient_flow_limit(obj, x, cfg));
}

/// Column-wise central-difference Jacobian of Phi.
inline Matrix phi_jacobian(const Objective& obj, const Vector& x, double h = kFdStepComposed,
                           const FlowConfig& cfg = {}) {
  return fd_jacobian([&](const Vector& p) { return gradient_flow_limit(obj, p, cfg); }, x, h);
}

/// Gradient of x -> tr_bar(Phi(x)) at x_star by central differences.
inline Vector grad_tr_phi(const Objective& obj, const Vector& x_star, double h = kFdStepComposed,
                          const FlowConfig& cfg = {}) {
  return fd_gradient([&](const Vector& p) { return trace_at_limit(obj, p, cfg); }, x_star, h);
}

/// Outcome of the (eps, eps')-flatness test at a point.
struct FlatnessCertificate {
  Vector x;
  Vector phi_x;
  double dist = 0.0;
  Vector flat_grad;
  double flat_grad_norm = 0.0;
  double eps = 0.0;
  double eps_prime = 0.0;
  bool passed = false;
};

/// Checks |x - Phi(x)| <= eps and |grad(tr_bar o Phi)(Phi(x))| <= eps_prime.
inline FlatnessCertificate certify_flat(const Objective& obj, const Vector& x, double eps,
                                        double eps_prime, const FlowConfig& cfg = {},
                                        double h = kFdStepComposed) {
  if (!(eps > 0.0) || !(eps_prime > 0.0)) {
    throw InvalidArgument("certify_flat: eps and eps_prime must be positive");
  }
  FlatnessCertificate cert;
  cert.x = x;
  cert.eps = eps;
  cert.eps_prime = eps_prime;
  cert.phi_x = gradient_flow_limit(obj, x, cfg);
  cert.dist = (x - cert.phi_x).norm();
  cert.flat_grad = grad_tr_phi(obj, cert.phi_x, h, cfg);
  cert.flat_grad_norm = cert.flat_grad.norm();
  cert.passed = cert.dist <= eps && cert.flat_grad_norm <= eps_prime;
  return cert;
}

}  // namespace flatmin
