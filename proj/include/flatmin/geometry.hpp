#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include <Eigen/Dense>

#include "flatmin/error.hpp"
#include "flatmin/objective.hpp"
#include "flatmin/rng.hpp"
#include "flatmin/types.hpp"

namespace flatmin {

/// Below this norm the projecting-out direction is treated as undefined.
inline constexpr double kProjectionTolerance = 1e-12;

/// Default central-difference steps.
inline constexpr double kFdStepSmooth = 1e-5;
inline constexpr double kFdStepComposed = 1e-4;

/// Removes from v its component along u. Returns v unchanged when
/// ||u|| <= kProjectionTolerance.
inline Vector proj_out(const Vector& u, const Vector& v) {
  if (u.size() != v.size()) {
    throw InvalidArgument("proj_out: dimension mismatch (" + std::to_string(u.size()) + " vs " +
                          std::to_string(v.size()) + ")");
  }
  const double un = u.norm();
  if (!(un > kProjectionTolerance)) return v;
  const Vector unit = u / un;
  Vector r = v - unit.dot(v) * unit;
  // Second pass: when v is nearly parallel to u the first leaves a residual of
  // order eps |v| along u, which can dwarf |r|.
  r -= unit.dot(r) * unit;
  return r;
}

/// Uniform draw from the unit sphere S^{d-1} (normalized Gaussian vector).
inline Vector sample_sphere(std::size_t d, RngStream& rng) {
  if (d == 0) throw InvalidArgument("sample_sphere: dimension must be >= 1");
  Vector g(static_cast<Eigen::Index>(d));
  double n2 = 0.0;
  do {
    for (Eigen::Index j = 0; j < g.size(); ++j) g[j] = rng.normal();
    n2 = g.squaredNorm();
  } while (n2 == 0.0);
  return g / std::sqrt(n2);
}

/// Central-difference gradient of a scalar function. Throws NonFiniteValue
/// carrying the probe point if any evaluation is not finite.
template <class ScalarFn>
Vector fd_gradient(ScalarFn&& fn, const Vector& x, double h = kFdStepSmooth) {
  if (!(h > 0.0)) throw InvalidArgument("fd_gradient: step must be positive");
  Vector out(x.size());
  Vector probe = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    probe[j] = x[j] + h;
    const double up = fn(probe);
    if (!std::isfinite(up)) throw NonFiniteValue("fd_gradient: non-finite value", probe);
    probe[j] = x[j] - h;
    const double down = fn(probe);
    if (!std::isfinite(down)) throw NonFiniteValue("fd_gradient: non-finite value", probe);
    probe[j] = x[j];
    out[j] = (up - down) / (2.0 * h);
  }
  return out;
}

/// Central-difference Jacobian of a vector map; column j is d map / d x_j.
template <class VectorFn>
Matrix fd_jacobian(VectorFn&& fn, const Vector& x, double h = kFdStepSmooth) {
  if (!(h > 0.0)) throw InvalidArgument("fd_jacobian: step must be positive");
  Matrix jac;
  Vector probe = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    probe[j] = x[j] + h;
    const Vector up = fn(probe);
    probe[j] = x[j] - h;
    const Vector down = fn(probe);
    probe[j] = x[j];
    if (!up.allFinite()) throw NonFiniteValue("fd_jacobian: non-finite value", x);
    if (!down.allFinite()) throw NonFiniteValue("fd_jacobian: non-finite value", x);
    if (j == 0) jac.resize(up.size(), x.size());
    jac.col(j) = (up - down) / (2.0 * h);
  }
  return jac;
}

/// Central-difference Hessian from the analytic gradient, symmetrized.
inline Matrix fd_hessian(const Objective& obj, const Vector& x, double h = kFdStepSmooth) {
  const Matrix jac = fd_jacobian([&](const Vector& p) { return obj.gradient(p); }, x, h);
  return 0.5 * (jac + jac.transpose());
}

/// tr(Hessian)/d. Uses the exact Hessian when the objective has one, otherwise
/// central differences of the gradient (d gradient pairs).
inline double normalized_trace(const Objective& obj, const Vector& x, double h = kFdStepSmooth) {
  const double d = static_cast<double>(obj.dim);
  if (obj.has_hessian()) return obj.hessian(x).trace() / d;
  double tr = 0.0;
  Vector probe = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    probe[j] = x[j] + h;
    const double up = obj.gradient(probe)[j];
    probe[j] = x[j] - h;
    const double down = obj.gradient(probe)[j];
    probe[j] = x[j];
    tr += (up - down) / (2.0 * h);
  }
  if (!std::isfinite(tr)) throw NonFiniteValue("normalized_trace: non-finite value", x);
  return tr / d;
}

/// Normalized trace computed through the finite-difference path even when an
/// exact Hessian exists.
inline double normalized_trace_fd(const Objective& obj, const Vector& x, double h = kFdStepSmooth) {
  Objective no_hess = obj;
  no_hess.hessian = nullptr;
  return normalized_trace(no_hess, x, h);
}

}  // namespace flatmin
