#pragma once

// Brute-force checks of the estimator identities and local geometry that the
// optimizers rely on. The arithmetic here deliberately does not reuse the step
// code in optimizers.hpp (projection, sphere draws and per-sample directions
// are recomputed locally), so agreement between the two is evidence.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "flatmin/error.hpp"
#include "flatmin/flow.hpp"
#include "flatmin/geometry.hpp"
#include "flatmin/montecarlo.hpp"
#include "flatmin/objective.hpp"
#include "flatmin/optimizers.hpp"
#include "flatmin/rng.hpp"
#include "flatmin/types.hpp"

namespace flatmin {

/// Monte-Carlo tolerances are this many standard errors.
inline constexpr double kCltStandardErrors = 3.5;

enum class OracleStatus { pass, fail, not_applicable };

inline std::string to_string(OracleStatus s) {
  switch (s) {
    case OracleStatus::pass: return "pass";
    case OracleStatus::fail: return "fail";
    default: return "not_applicable";
  }
}

struct OracleReport {
  std::string name;
  std::uint64_t samples = 0;
  std::vector<double> measured;
  std::vector<double> reference;
  double relative_error = 0.0;
  double tolerance = 0.0;
  OracleStatus status = OracleStatus::fail;
  std::string detail;

  bool passed() const noexcept { return status == OracleStatus::pass; }
  /// Sets status from relative_error <= tolerance.
  void decide() { status = relative_error <= tolerance ? OracleStatus::pass : OracleStatus::fail; }
};

namespace detail {

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

inline Vector oracle_unit_gaussian(Eigen::Index d, RngStream& rng) {
  Vector g(d);
  double n2 = 0.0;
  while (n2 == 0.0) {
    for (Eigen::Index j = 0; j < d; ++j) g[j] = rng.normal();
    n2 = g.squaredNorm();
  }
  return g / std::sqrt(n2);
}

/// I - u u^T / |u|^2, or I when |u| is below the projection tolerance.
inline Matrix oracle_projector(const Vector& u) {
  const Eigen::Index d = u.size();
  const double n = u.norm();
  Matrix p = Matrix::Identity(d, d);
  if (n > kProjectionTolerance) p.noalias() -= (u * u.transpose()) / (n * n);
  return p;
}

}  // namespace detail

/// Empirical first and second moments of uniform sphere draws against 0 and
/// I/d. relative_error is the larger of the two deviations in units of their
/// CLT tolerances, so the tolerance is 1.
inline OracleReport check_sphere_moments(std::size_t d, std::uint64_t N, const RngStream& rng,
                                         unsigned threads = 1) {
  if (d == 0) throw InvalidArgument("check_sphere_moments: d must be >= 1");
  if (N == 0) throw InvalidArgument("check_sphere_moments: N must be positive");
  const auto di = static_cast<Eigen::Index>(d);
  const Vector mean = chunked_mean(
      N, di + di * di, rng,
      [di](RngStream& r, Vector& acc) {
        const Vector g = detail::oracle_unit_gaussian(di, r);
        acc.head(di) += g;
        for (Eigen::Index j = 0; j < di; ++j) acc.segment(di + j * di, di) += g[j] * g;
      },
      threads);
  const double dd = static_cast<double>(d);
  const double mean_inf = mean.head(di).cwiseAbs().maxCoeff();
  Matrix second = Eigen::Map<const Matrix>(mean.data() + di, di, di);
  const double frob = (second - Matrix::Identity(di, di) / dd).norm();

  // Var(g_j) = 1/d; Var(g_j^2) = 3/(d(d+2)) - 1/d^2; Var(g_j g_k) = 1/(d(d+2)).
  const double n = static_cast<double>(N);
  const double tol_mean = kCltStandardErrors / std::sqrt(dd * n);
  const double total_var = dd * (3.0 / (dd * (dd + 2.0)) - 1.0 / (dd * dd)) +
                           dd * (dd - 1.0) / (dd * (dd + 2.0));
  const double tol_frob = kCltStandardErrors * std::sqrt(std::max(total_var, 0.0) / n) + 1e-14;

  OracleReport r;
  r.name = "sphere-moments";
  r.samples = N;
  r.measured = {mean_inf, frob};
  r.reference = {0.0, 0.0};
  r.relative_error = std::max(mean_inf / tol_mean, frob / tol_frob);
  r.tolerance = 1.0;
  r.detail = "d=" + std::to_string(d) + " tol_mean=" + std::to_string(tol_mean) +
             " tol_frob=" + std::to_string(tol_frob);
  r.decide();
  return r;
}

struct EstimatorOptions {
  /// Average v over the pair (g, -g). Both members are valid draws, so the
  /// expectation is unchanged while the first-order noise rho Hess g cancels.
  bool antithetic = true;
  double relative_tolerance = 0.1;
  /// Absolute floor c rho^3 on the per-component tolerance.
  double remainder_constant = 1.0;
  unsigned threads = 1;
};

/// 0.5 rho^2 Proj^perp_{grad f(x)} grad tr_bar(x), with grad tr_bar from
/// central differences of the normalized trace.
inline Vector smoothing_reference(const Objective& obj, const Vector& x, double rho) {
  const Vector grad_tr =
      fd_gradient([&](const Vector& p) { return normalized_trace(obj, p); }, x, kFdStepComposed);
  return 0.5 * rho * rho * (detail::oracle_projector(obj.gradient(x)) * grad_tr);
}

/// Monte-Carlo mean of Proj^perp_{grad f(x)} grad f(x + rho g) for g on the
/// sphere, for each radius in `radii`, using the same draws for every radius.
inline std::vector<Vector> smoothed_perturbation_means(const Objective& obj, const Vector& x,
                                                       const std::vector<double>& radii,
                                                       std::uint64_t N, const RngStream& rng,
                                                       const EstimatorOptions& opts) {
  const Eigen::Index d = x.size();
  const Matrix proj = detail::oracle_projector(obj.gradient(x));
  const auto k = static_cast<Eigen::Index>(radii.size());
  const bool anti = opts.antithetic;
  const std::uint64_t draws = anti ? std::max<std::uint64_t>(1, N / 2) : N;
  const Vector mean = chunked_mean(
      draws, d * k, rng,
      [&](RngStream& r, Vector& acc) {
        const Vector g = detail::oracle_unit_gaussian(d, r);
        for (Eigen::Index j = 0; j < k; ++j) {
          const double rho = radii[static_cast<std::size_t>(j)];
          Vector w = obj.gradient(x + rho * g);
          if (anti) w = 0.5 * (w + obj.gradient(x - rho * g));
          acc.segment(j * d, d).noalias() += proj * w;
        }
      },
      opts.threads);
  std::vector<Vector> out;
  for (Eigen::Index j = 0; j < k; ++j) out.emplace_back(mean.segment(j * d, d));
  return out;
}

/// E v = 0.5 rho^2 Proj^perp grad tr_bar(x) + O(rho^3), checked per component
/// at max(relative_tolerance |ref|, c rho^3).
inline OracleReport check_rs_estimator(const Objective& obj, const Vector& x, double rho,
                                       std::uint64_t N, const RngStream& rng,
                                       const EstimatorOptions& opts = {}) {
  if (!(rho > 0.0) || N == 0) throw InvalidArgument("check_rs_estimator: need rho > 0, N > 0");
  const Vector measured = smoothed_perturbation_means(obj, x, {rho}, N, rng, opts).front();
  const Vector ref = smoothing_reference(obj, x, rho);
  const double floor_abs = opts.remainder_constant * rho * rho * rho;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < ref.size(); ++j) {
    const double allowed = std::max(opts.relative_tolerance * std::abs(ref[j]), floor_abs);
    worst = std::max(worst, std::abs(measured[j] - ref[j]) / allowed);
  }
  OracleReport r;
  r.name = "rs-estimator";
  r.samples = N;
  r.measured = detail::to_std(measured);
  r.reference = detail::to_std(ref);
  r.relative_error = worst * opts.relative_tolerance;
  r.tolerance = opts.relative_tolerance;
  r.detail = std::string(opts.antithetic ? "antithetic" : "plain") +
             " rho=" + std::to_string(rho);
  r.decide();
  return r;
}

/// Deviation of the Monte-Carlo mean from the 0.5 rho^2 law at rho and rho/2,
/// with common draws. Passes when halving rho shrinks the deviation by at
/// least `min_factor`; relative_error is max(0, (4 - factor)/4).
inline OracleReport check_rs_remainder_decay(const Objective& obj, const Vector& x, double rho,
                                             std::uint64_t N, const RngStream& rng,
                                             double min_factor = 3.0,
                                             const EstimatorOptions& opts = {}) {
  if (!(rho > 0.0) || N == 0) throw InvalidArgument("check_rs_remainder_decay: bad arguments");
  const double half = 0.5 * rho;
  const auto means = smoothed_perturbation_means(obj, x, {rho, half}, N, rng, opts);
  const double dev_full = (means[0] - smoothing_reference(obj, x, rho)).norm();
  const double dev_half = (means[1] - smoothing_reference(obj, x, half)).norm();
  const double factor = dev_half > 0.0 ? dev_full / dev_half
                                       : std::numeric_limits<double>::infinity();
  OracleReport r;
  r.name = "rs-decay";
  r.samples = N;
  r.measured = {dev_full, dev_half, factor};
  r.reference = {4.0};
  r.relative_error = std::max(0.0, (4.0 - factor) / 4.0);
  r.tolerance = (4.0 - min_factor) / 4.0;
  r.detail = "deviation ratio over rho " + std::to_string(rho) + " -> " + std::to_string(half);
  r.decide();
  return r;
}

/// Curvature signals at a minimum: SA draws i, sigma and the unit per-sample
/// gradient direction g_i and measures g_i^T Hess f_i g_i; RS draws g on the
/// sphere and measures g^T Hess f g. The ratio should be d when the
/// prediction gradients are orthogonal.
struct CurvatureSignals {
  double sa = 0.0;
  double rs = 0.0;
  double ratio = 0.0;
  double trace_bar = 0.0;
};

inline CurvatureSignals measure_curvature_signals(const SampleSumObjective& obj,
                                                  const Vector& x_star, double rho,
                                                  std::uint64_t N, const RngStream& rng,
                                                  double jitter = 1e-9, unsigned threads = 1) {
  const Eigen::Index d = x_star.size();
  const std::size_t n = obj.n;
  std::vector<Matrix> sample_h;
  if (obj.has_sample_hessian()) {
    for (std::size_t i = 0; i < n; ++i) sample_h.push_back(obj.sample_hessian(i, x_star));
  }
  const Matrix full_h = obj.base.has_hessian() ? obj.base.hessian(x_star) : fd_hessian(obj.base, x_star);

  auto sample_direction = [&](std::size_t i, RngStream& r) -> Vector {
    Vector gi = obj.sample_gradient(i, x_star);
    for (int attempt = 0; attempt < kJitterRetries && gi.norm() <= kVanishingSampleGradient;
         ++attempt) {
      gi = obj.sample_gradient(i, x_star + jitter * detail::oracle_unit_gaussian(d, r));
    }
    const double gn = gi.norm();
    if (gn <= kVanishingSampleGradient) {
      throw DegenerateSample("measure_curvature_signals: sample gradient vanishes");
    }
    return gi / gn;
  };

  const Vector mean = chunked_mean(
      N, 2, rng,
      [&](RngStream& r, Vector& acc) {
        const std::size_t i = static_cast<std::size_t>(r.index(n));
        const double sigma = r.sign();
        const Vector gi = sample_direction(i, r);
        if (!sample_h.empty()) {
          acc[0] += gi.dot(sample_h[i] * gi);
        } else {
          const Vector diff = obj.sample_gradient(i, x_star + rho * sigma * gi) -
                              obj.sample_gradient(i, x_star);
          acc[0] += sigma * gi.dot(diff) / rho;
        }
        const Vector g = detail::oracle_unit_gaussian(d, r);
        acc[1] += g.dot(full_h * g);
      },
      threads);
  CurvatureSignals out;
  out.sa = mean[0];
  out.rs = mean[1];
  out.ratio = mean[0] / mean[1];
  out.trace_bar = full_h.trace() / static_cast<double>(d);
  return out;
}

inline OracleReport check_sa_dfactor(const SampleSumObjective& obj, const Vector& x_star,
                                     double rho, std::uint64_t N, const RngStream& rng,
                                     double tolerance = 0.1, unsigned threads = 1) {
  const CurvatureSignals s = measure_curvature_signals(obj, x_star, rho, N, rng, 1e-9, threads);
  const double d = static_cast<double>(obj.dim());
  OracleReport r;
  r.name = "sa-dfactor";
  r.samples = N;
  r.measured = {s.ratio, s.sa, s.rs};
  r.reference = {d, d * s.trace_bar, s.trace_bar};
  r.relative_error = std::abs(s.ratio - d) / d;
  r.tolerance = tolerance;
  r.detail = "d=" + std::to_string(obj.dim()) + " n=" + std::to_string(obj.n);
  r.decide();
  return r;
}

/// Sampling region for constant estimation.
struct Region {
  std::function<Vector(RngStream&)> sample;
  std::function<bool(const Vector&)> contains;
};

struct PlEstimate {
  double alpha_hat = 0.0;
  double beta_hat = 0.0;
  std::size_t used = 0;
  std::size_t skipped = 0;
};

/// Below this f(x) - f(Phi(x)) a sample counts as already on the minima set.
inline constexpr double kPlGapFloor = 1e-14;

/// alpha_hat = min |grad f|^2 / (2 (f(x) - f(Phi(x)))),
/// beta_hat = max |grad f(x) - grad f(Phi(x))| / |x - Phi(x)| over M samples.
/// The extremal samples are then polished by a compass search inside the
/// region.
inline PlEstimate estimate_pl_constants(const Objective& obj, const Region& region, std::size_t M,
                                        const RngStream& rng, const FlowConfig& flow = {},
                                        bool polish = true) {
  struct Ratios {
    bool ok = false;
    double alpha = 0.0;
    double beta = 0.0;
  };
  auto ratios = [&](const Vector& x) {
    Ratios out;
    const Vector phi = gradient_flow_limit(obj, x, flow);
    const double gap = obj.value(x) - obj.value(phi);
    const double dist = (x - phi).norm();
    if (!(gap >= kPlGapFloor) || dist == 0.0) return out;
    const Vector gx = obj.gradient(x);
    out.ok = true;
    out.alpha = gx.squaredNorm() / (2.0 * gap);
    out.beta = (gx - obj.gradient(phi)).norm() / dist;
    return out;
  };

  RngStream local = rng;
  PlEstimate est;
  est.alpha_hat = std::numeric_limits<double>::infinity();
  Vector arg_alpha;
  Vector arg_beta;
  for (std::size_t m = 0; m < M; ++m) {
    const Vector x = region.sample(local);
    const Ratios r = ratios(x);
    if (!r.ok) {
      ++est.skipped;
      continue;
    }
    ++est.used;
    if (r.alpha < est.alpha_hat) {
      est.alpha_hat = r.alpha;
      arg_alpha = x;
    }
    if (r.beta > est.beta_hat) {
      est.beta_hat = r.beta;
      arg_beta = x;
    }
  }
  if (est.used == 0) throw Error("estimate_pl_constants: every sample lies on the minima set");

  if (polish) {
    // Compass search; sign = +1 minimizes alpha, -1 maximizes beta.
    auto compass = [&](Vector x, double best, double sign, bool use_alpha) {
      double step = 0.1 * std::max(1.0, x.norm());
      while (step > 1e-9 * std::max(1.0, x.norm())) {
        bool improved = false;
        for (Eigen::Index j = 0; j < x.size() && !improved; ++j) {
          for (double dir : {1.0, -1.0}) {
            Vector trial = x;
            trial[j] += dir * step;
            if (!region.contains(trial)) continue;
            const Ratios r = ratios(trial);
            if (!r.ok) continue;
            const double val = use_alpha ? r.alpha : r.beta;
            if (sign * val < sign * best) {
              best = val;
              x = trial;
              improved = true;
              break;
            }
          }
        }
        if (!improved) step *= 0.5;
      }
      return best;
    };
    est.alpha_hat = compass(arg_alpha, est.alpha_hat, 1.0, true);
    est.beta_hat = compass(arg_beta, est.beta_hat, -1.0, false);
  }
  return est;
}

/// Per-step descent inequality on consecutive records:
/// f(x_{t+1}) <= f(x_t) - eta/2 |grad f(x_t)|^2 + beta eta^2/2 |v_t|^2 + slack.
/// Perturbed steps use eta; gradient steps use eta' with v = 0. Not applicable
/// when a step size used by the trajectory exceeds 1/beta_hat.
inline OracleReport check_descent_lemma(const Trajectory& traj, double beta_hat,
                                        double slack = 1e-12) {
  OracleReport r;
  r.name = "descent-lemma";
  r.tolerance = 0.0;
  const double limit = 1.0 / beta_hat;
  bool has_perturbed = false;
  bool has_gd = false;
  for (const auto& rec : traj.records) (rec.branch == Branch::perturbed ? has_perturbed : has_gd) = true;
  if ((has_perturbed && traj.schedule.eta > limit) || (has_gd && traj.schedule.eta_prime > limit)) {
    r.status = OracleStatus::not_applicable;
    r.detail = "step size exceeds 1/beta_hat";
    return r;
  }
  std::uint64_t checked = 0;
  std::uint64_t violations = 0;
  double worst_excess = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < traj.records.size(); ++k) {
    const auto& rec = traj.records[k];
    double f_next;
    if (k + 1 < traj.records.size() && traj.records[k + 1].t == rec.t + 1) {
      f_next = traj.records[k + 1].f;
    } else if (rec.t + 1 == traj.schedule.T) {
      f_next = traj.final_f;
    } else {
      continue;
    }
    const bool pert = rec.branch == Branch::perturbed;
    const double eta = pert ? traj.schedule.eta : traj.schedule.eta_prime;
    const double v = pert ? rec.v_norm.value_or(0.0) : 0.0;
    const double bound = rec.f - 0.5 * eta * rec.grad_norm * rec.grad_norm +
                         0.5 * beta_hat * eta * eta * v * v + slack;
    ++checked;
    worst_excess = std::max(worst_excess, f_next - bound + slack);
    if (f_next > bound) ++violations;
  }
  r.samples = checked;
  r.measured = {static_cast<double>(checked), static_cast<double>(violations), worst_excess};
  r.reference = {0.0};
  r.relative_error = checked == 0 ? 0.0 : static_cast<double>(violations) / static_cast<double>(checked);
  r.detail = checked == 0 ? "no consecutive records to check" : "";
  r.decide();
  return r;
}

/// Tangency: dPhi(x) grad f(x) = 0. Measures max |J_Phi(x) grad f(x)| / |grad f(x)|
/// over the points with a finite-difference Jacobian.
inline OracleReport check_tangency(const Objective& obj, const std::vector<Vector>& points,
                                   double tolerance = 1e-4, const FlowConfig& flow = {},
                                   double h = kFdStepComposed) {
  double worst = 0.0;
  for (const auto& x : points) {
    const Vector g = obj.gradient(x);
    const double gn = g.norm();
    if (gn == 0.0) continue;
    const Matrix jac = phi_jacobian(obj, x, h, flow);
    worst = std::max(worst, (jac * g).norm() / gn);
  }
  OracleReport r;
  r.name = "tangency";
  r.samples = points.size();
  r.measured = {worst};
  r.reference = {0.0};
  r.relative_error = worst;
  r.tolerance = tolerance;
  r.decide();
  return r;
}

/// Chain-rule route for grad(tr_bar o Phi): J_Phi(x*) grad tr_bar(Phi(x*)),
/// with both factors from their own finite differences. Independent of
/// grad_tr_phi, which differences the composite map directly.
inline Vector grad_tr_phi_chain_rule(const Objective& obj, const Vector& x_star,
                                     const FlowConfig& flow = FlowConfig::reference(),
                                     double h = kFdStepComposed) {
  const Vector phi = gradient_flow_limit(obj, x_star, flow);
  const Vector grad_tr =
      fd_gradient([&](const Vector& p) { return normalized_trace(obj, p); }, phi, kFdStepComposed);
  return phi_jacobian(obj, x_star, h, flow).transpose() * grad_tr;
}

/// |grad(tr_bar o Phi)(x*)| <= tolerance.
inline OracleReport check_flat_gradient(const Objective& obj, const Vector& x_star,
                                        double tolerance, const FlowConfig& flow = {}) {
  const Vector g = grad_tr_phi(obj, x_star, kFdStepComposed, flow);
  OracleReport r;
  r.name = "flat-gradient";
  r.samples = 2 * static_cast<std::uint64_t>(x_star.size());
  r.measured = detail::to_std(g);
  r.reference = std::vector<double>(static_cast<std::size_t>(x_star.size()), 0.0);
  r.relative_error = g.norm();
  r.tolerance = tolerance;
  r.decide();
  return r;
}

/// At a global minimum, Hess f = (1/n) sum_i l''(p_i, y_i) grad p_i grad p_i^T.
inline OracleReport check_hessian_decomposition(const SampleSumObjective& obj,
                                                const Vector& x_star, double tolerance = 1e-8) {
  if (!obj.prediction_gradient || !obj.loss_curvature || !obj.base.has_hessian()) {
    throw InvalidArgument("check_hessian_decomposition: objective lacks prediction structure");
  }
  const Eigen::Index d = x_star.size();
  Matrix sum = Matrix::Zero(d, d);
  for (std::size_t i = 0; i < obj.n; ++i) {
    const Vector gp = obj.prediction_gradient(i, x_star);
    sum += obj.loss_curvature(i, x_star) * gp * gp.transpose();
  }
  sum /= static_cast<double>(obj.n);
  const Matrix h = obj.base.hessian(x_star);
  OracleReport r;
  r.name = "hessian-decomposition";
  r.samples = obj.n;
  r.measured = {h.trace()};
  r.reference = {sum.trace()};
  r.relative_error = (h - sum).norm() / std::max(sum.norm(), 1e-300);
  r.tolerance = tolerance;
  r.decide();
  return r;
}

/// Analytic gradient (and Hessian, when present) against central differences
/// at M points drawn from `sample`. Relative error, except where the reference
/// norm is below `near_zero` where the absolute error must stay under 1e-8.
inline OracleReport check_objective_derivatives(const Objective& obj,
                                                const std::function<Vector(RngStream&)>& sample,
                                                std::size_t M, const RngStream& rng,
                                                double grad_tol = 1e-6, double hess_tol = 1e-5,
                                                double near_zero = 1e-3) {
  RngStream local = rng;
  double worst_grad = 0.0;
  double worst_hess = 0.0;
  bool abs_fail = false;
  for (std::size_t m = 0; m < M; ++m) {
    const Vector x = sample(local);
    const Vector g = obj.gradient(x);
    const Vector g_fd = fd_gradient(obj.value, x, kFdStepSmooth);
    const double gerr = (g - g_fd).norm();
    if (g.norm() < near_zero) {
      abs_fail = abs_fail || gerr > 1e-8;
    } else {
      worst_grad = std::max(worst_grad, gerr / g.norm());
    }
    if (obj.has_hessian()) {
      const Matrix h = obj.hessian(x);
      const Matrix h_fd = fd_hessian(obj, x, kFdStepSmooth);
      const double herr = (h - h_fd).norm();
      const double scale = h.norm();
      if (scale < near_zero) {
        abs_fail = abs_fail || herr > 1e-8;
      } else {
        worst_hess = std::max(worst_hess, herr / scale);
      }
    }
  }
  OracleReport r;
  r.name = "derivatives";
  r.samples = M;
  r.measured = {worst_grad, worst_hess};
  r.reference = {0.0, 0.0};
  r.relative_error = abs_fail ? std::numeric_limits<double>::infinity()
                              : std::max(worst_grad / grad_tol, worst_hess / hess_tol);
  r.tolerance = 1.0;
  r.detail = "grad_tol=" + std::to_string(grad_tol) + " hess_tol=" + std::to_string(hess_tol);
  r.decide();
  return r;
}

}  // namespace flatmin
