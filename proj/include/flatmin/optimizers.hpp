#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "flatmin/error.hpp"
#include "flatmin/flow.hpp"
#include "flatmin/geometry.hpp"
#include "flatmin/objective.hpp"
#include "flatmin/rng.hpp"
#include "flatmin/schedule.hpp"
#include "flatmin/types.hpp"

namespace flatmin {

enum class Algorithm { RS, SA, GD };
enum class Branch { perturbed, gd };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::RS: return "RS";
    case Algorithm::SA: return "SA";
    default: return "GD";
  }
}

inline std::string to_string(Branch b) { return b == Branch::perturbed ? "perturbed" : "gd"; }

/// Per-sample gradients below this norm have no usable direction.
inline constexpr double kVanishingSampleGradient = 1e-12;
inline constexpr int kJitterRetries = 8;

struct RsStep {
  Vector next;
  Vector direction;  // g ~ Unif(S^{d-1})
  Vector v;
  double v_norm = 0.0;
};

struct SaStep {
  Vector next;
  std::size_t index = 0;  // sampled i
  int sigma = 1;
  Vector direction;  // unit per-sample gradient direction
  Vector v;
  double v_norm = 0.0;
  bool jittered = false;
};

namespace detail {

inline void require_finite(const Vector& v, const char* what, const Vector& at) {
  if (!v.allFinite()) throw NonFiniteValue(std::string(what) + ": non-finite value", at);
}

inline RsStep rs_step_with_gradient(const Objective& obj, const Vector& x, const Vector& grad,
                                    double eta, double rho, RngStream& rng) {
  RsStep out;
  out.direction = sample_sphere(obj.dim, rng);
  const Vector perturbed = obj.gradient(x + rho * out.direction);
  require_finite(perturbed, "rs_step", x);
  out.v = proj_out(grad, perturbed);
  out.v_norm = out.v.norm();
  out.next = x - eta * (grad + out.v);
  require_finite(out.next, "rs_step", x);
  return out;
}

inline SaStep sa_step_with_gradient(const SampleSumObjective& obj, const Vector& x,
                                    const Vector& grad, double eta, double rho, double jitter,
                                    RngStream& rng) {
  SaStep out;
  out.index = static_cast<std::size_t>(rng.index(obj.n));
  out.sigma = rng.sign();
  Vector gi = obj.sample_gradient(out.index, x);
  require_finite(gi, "sa_step", x);
  double gi_norm = gi.norm();
  if (gi_norm <= kVanishingSampleGradient) {
    out.jittered = true;
    for (int attempt = 0; attempt < kJitterRetries && gi_norm <= kVanishingSampleGradient;
         ++attempt) {
      const Vector xi = jitter * sample_sphere(obj.dim(), rng);
      gi = obj.sample_gradient(out.index, x + xi);
      require_finite(gi, "sa_step", x);
      gi_norm = gi.norm();
    }
    if (gi_norm <= kVanishingSampleGradient) {
      throw DegenerateSample("sa_step: gradient of sample " + std::to_string(out.index) +
                             " still vanishes after " + std::to_string(kJitterRetries) +
                             " jittered retries (jitter " + std::to_string(jitter) + ")");
    }
  }
  out.direction = gi / gi_norm;
  const Vector perturbed =
      obj.sample_gradient(out.index, x + rho * static_cast<double>(out.sigma) * out.direction);
  require_finite(perturbed, "sa_step", x);
  out.v = proj_out(grad, perturbed);
  out.v_norm = out.v.norm();
  out.next = x - eta * (grad + out.v);
  require_finite(out.next, "sa_step", x);
  return out;
}

}  // namespace detail

/// One randomly smoothed perturbation step:
/// v = Proj_{grad f(x)}^perp grad f(x + rho g), x+ = x - eta (grad f(x) + v).
inline RsStep rs_step(const Objective& obj, const Vector& x, double eta, double rho,
                      RngStream& rng) {
  if (!(eta > 0.0) || !(rho >= 0.0)) throw InvalidArgument("rs_step: need eta > 0, rho >= 0");
  const Vector grad = obj.gradient(x);
  detail::require_finite(grad, "rs_step", x);
  return detail::rs_step_with_gradient(obj, x, grad, eta, rho, rng);
}

/// One sharpness-aware perturbation step with i ~ Unif[n], sigma ~ Unif{+-1}:
/// v = Proj_{grad f(x)}^perp grad f_i(x + rho sigma grad f_i(x)/|grad f_i(x)|).
/// When grad f_i(x) vanishes the direction is taken at x + xi, |xi| = jitter.
inline SaStep sa_step(const SampleSumObjective& obj, const Vector& x, double eta, double rho,
                      double jitter, RngStream& rng) {
  if (!(eta > 0.0) || !(rho >= 0.0) || !(jitter >= 0.0)) {
    throw InvalidArgument("sa_step: need eta > 0, rho >= 0, jitter >= 0");
  }
  const Vector grad = obj.base.gradient(x);
  detail::require_finite(grad, "sa_step", x);
  return detail::sa_step_with_gradient(obj, x, grad, eta, rho, jitter, rng);
}

/// Default jitter radius for vanishing per-sample gradients: eps^3, floored.
inline double default_jitter(double eps) { return std::max(eps * eps * eps, 1e-12); }

struct IterateRecord {
  std::uint64_t t = 0;
  Branch branch = Branch::gd;
  Vector x;  // empty when thinned
  double f = 0.0;
  double grad_norm = 0.0;
  std::optional<double> v_norm;
  std::optional<double> tr_phi;  // tr_bar(Phi(x_t))
  std::optional<double> f_gap;   // f(x_t) - f(Phi(x_t)), alongside tr_phi
};

struct Trajectory {
  Algorithm algorithm = Algorithm::GD;
  Schedule schedule;
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::vector<IterateRecord> records;
  /// Index in [1, T] drawn uniformly when the run starts; returned_x = x_{returned_index}.
  std::uint64_t returned_index = 0;
  Vector returned_x;
  Vector final_x;
  double final_f = 0.0;
  std::optional<double> final_tr_phi;
};

/// Raised when an iterate becomes non-finite; carries everything recorded so far.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::shared_ptr<const Trajectory> partial)
      : Error(what), partial_(std::move(partial)) {}
  const Trajectory& partial() const noexcept { return *partial_; }

 private:
  std::shared_ptr<const Trajectory> partial_;
};

struct RunOptions {
  /// Record every log_cadence-th step.
  std::uint64_t log_cadence = 1;
  /// Evaluate tr_bar(Phi(x_t)) every tr_phi_cadence-th step; 0 picks max(1, T/200).
  std::uint64_t tr_phi_cadence = 0;
  bool track_tr_phi = true;
  /// Keep x in every record (otherwise only returned and final iterates).
  bool record_x = true;
  FlowConfig flow;
  /// Radius for vanishing per-sample gradients (SA only).
  double jitter = 1e-12;
};

namespace detail {

inline Trajectory run_impl(const Objective& obj, const SampleSumObjective* samples,
                           Algorithm algorithm, const Vector& x0, const Schedule& sched,
                           RngStream rng, const RunOptions& opts) {
  sched.validate();
  if (x0.size() != static_cast<Eigen::Index>(obj.dim)) {
    throw InvalidArgument("run: start point has wrong dimension");
  }
  if (!x0.allFinite()) throw InvalidArgument("run: start point is not finite");
  if (algorithm == Algorithm::SA && samples == nullptr) {
    throw InvalidArgument("run: SA requires a sample-sum objective");
  }
  if (opts.log_cadence == 0) throw InvalidArgument("run: log_cadence must be positive");

  const std::uint64_t T = sched.T;
  const std::uint64_t tr_cadence =
      opts.tr_phi_cadence != 0 ? opts.tr_phi_cadence : std::max<std::uint64_t>(1, T / 200);

  auto traj = std::make_shared<Trajectory>();
  traj->algorithm = algorithm;
  traj->schedule = sched;
  traj->dim = obj.dim;
  traj->seed = rng.seed();
  traj->stream = rng.stream();
  traj->returned_index = 1 + rng.index(T);

  auto fail = [&](const std::string& why) {
    throw DivergenceError(why, std::shared_ptr<const Trajectory>(traj));
  };

  Vector x = x0;
  for (std::uint64_t t = 0; t < T; ++t) {
    const Vector grad = obj.gradient(x);
    const double gn = grad.norm();
    if (!std::isfinite(gn)) fail("run: non-finite gradient at step " + std::to_string(t));

    const bool perturb = algorithm != Algorithm::GD && gn <= sched.eps0;
    Vector next;
    std::optional<double> v_norm;
    try {
      if (!perturb) {
        next = x - sched.eta_prime * grad;
      } else if (algorithm == Algorithm::RS) {
        RsStep s = rs_step_with_gradient(obj, x, grad, sched.eta, sched.rho, rng);
        next = std::move(s.next);
        v_norm = s.v_norm;
      } else {
        SaStep s = sa_step_with_gradient(*samples, x, grad, sched.eta, sched.rho, opts.jitter, rng);
        next = std::move(s.next);
        v_norm = s.v_norm;
      }
    } catch (const NonFiniteValue& e) {
      fail(std::string(e.what()) + " at step " + std::to_string(t));
    }
    if (!next.allFinite()) fail("run: iterate became non-finite at step " + std::to_string(t));

    const bool want_tr = opts.track_tr_phi && t % tr_cadence == 0;
    if (t % opts.log_cadence == 0 || want_tr) {
      IterateRecord rec;
      rec.t = t;
      rec.branch = perturb ? Branch::perturbed : Branch::gd;
      if (opts.record_x) rec.x = x;
      rec.f = obj.value(x);
      rec.grad_norm = gn;
      rec.v_norm = v_norm;
      if (want_tr) {
        const Vector phi = gradient_flow_limit(obj, x, opts.flow);
        rec.tr_phi = normalized_trace(obj, phi);
        rec.f_gap = rec.f - obj.value(phi);
      }
      traj->records.push_back(std::move(rec));
    }
    x = std::move(next);
    if (t + 1 == traj->returned_index) traj->returned_x = x;
  }
  traj->final_x = x;
  traj->final_f = obj.value(x);
  if (opts.track_tr_phi) traj->final_tr_phi = normalized_trace(obj, gradient_flow_limit(obj, x, opts.flow));
  return std::move(*traj);
}

}  // namespace detail

/// Runs T steps of RS or GD. Each step takes the perturbed update when
/// |grad f(x_t)| <= eps0 and x_{t+1} = x_t - eta' grad f(x_t) otherwise; GD
/// always takes the latter.
inline Trajectory run(const Objective& obj, Algorithm algorithm, const Vector& x0,
                      const Schedule& sched, RngStream rng, const RunOptions& opts = {}) {
  return detail::run_impl(obj, nullptr, algorithm, x0, sched, std::move(rng), opts);
}

/// Same as above; also supports SA, which needs per-sample gradients.
inline Trajectory run(const SampleSumObjective& obj, Algorithm algorithm, const Vector& x0,
                      const Schedule& sched, RngStream rng, const RunOptions& opts = {}) {
  return detail::run_impl(obj.base, &obj, algorithm, x0, sched, std::move(rng), opts);
}

struct RefineOptions {
  /// Step size is min(step_factor * eps, 1/beta_hat).
  double step_factor = 1.0;
  /// Budget is budget_factor * max(1, log(1/eps)) / eps steps.
  double budget_factor = 10.0;
  FlowConfig flow;
};

struct RefineResult {
  Vector x;
  std::uint64_t steps = 0;
  double dist = 0.0;  // |x - Phi(x)| at exit
};

/// Gradient descent with step O(eps) until |x - Phi(x)| <= eps/2.
inline RefineResult refine(const Objective& obj, const Vector& x, double eps, double beta_hat,
                           const RefineOptions& opts = {}) {
  if (!(eps > 0.0) || !(beta_hat > 0.0)) {
    throw InvalidArgument("refine: eps and beta_hat must be positive");
  }
  RefineResult out{x, 0, 0.0};
  if (obj.gradient(x).norm() <= 1e-12) return out;
  const double step = std::min(opts.step_factor * eps, 1.0 / beta_hat);
  const auto budget = static_cast<std::uint64_t>(
      std::ceil(opts.budget_factor * std::max(1.0, std::log(1.0 / eps)) / eps));
  while (true) {
    out.dist = (out.x - gradient_flow_limit(obj, out.x, opts.flow)).norm();
    if (out.dist <= 0.5 * eps) return out;
    if (out.steps >= budget) {
      throw RefinementError("refine: budget of " + std::to_string(budget) +
                            " steps exhausted at distance " + std::to_string(out.dist));
    }
    out.x -= step * obj.gradient(out.x);
    ++out.steps;
  }
}

}  // namespace flatmin
