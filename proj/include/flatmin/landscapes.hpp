#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "flatmin/error.hpp"
#include "flatmin/objective.hpp"
#include "flatmin/rng.hpp"
#include "flatmin/types.hpp"

namespace flatmin {

/// Half-width of the box [-3, 3]^d on which derivative checks and Lipschitz
/// hints are defined.
inline constexpr double kTestRegionHalfWidth = 3.0;

struct HyperbolaParams {};

struct ConvexQuadraticParams {
  std::vector<double> eigenvalues;
};

struct ScalarFactorizationParams {
  std::vector<double> a;
  double c = 1.0;
};

struct OrthogonalModelParams {
  std::size_t d = 0;
  std::size_t n = 0;
  std::vector<double> y;
  /// Absent: a_i are the first n standard basis vectors. Present: a_i are the
  /// first n columns of a seeded random orthogonal matrix.
  std::optional<std::uint64_t> basis_seed;
};

/// Which analytic landscape to build, with its parameters.
struct LandscapeSpec {
  std::variant<HyperbolaParams, ConvexQuadraticParams, ScalarFactorizationParams,
               OrthogonalModelParams>
      params;

  std::string kind() const {
    switch (params.index()) {
      case 0: return "hyperbola";
      case 1: return "convex_quadratic";
      case 2: return "scalar_factorization";
      default: return "orthogonal_quadratic_model";
    }
  }
};

/// A built landscape: the objective, its per-sample structure when it has one,
/// and ground truth about the minima set X*.
struct Landscape {
  LandscapeSpec spec;
  Objective objective;
  std::optional<SampleSumObjective> samples;
  /// Zero exactly on X*; grows with the distance from it.
  std::function<double(const Vector&)> minima_residual;
  /// A known point of X*.
  Vector reference_minimum;
};

/// Largest Hessian spectral norm over a uniform grid on [-r, r]^2 with the
/// given number of points per axis (corners included).
inline double sup_hessian_norm_on_square(const Objective& obj, double r = kTestRegionHalfWidth,
                                         int points_per_axis = 121) {
  if (obj.dim != 2 || !obj.has_hessian()) {
    throw InvalidArgument("sup_hessian_norm_on_square: needs a 2-d objective with a Hessian");
  }
  double best = 0.0;
  Vector x(2);
  for (int i = 0; i < points_per_axis; ++i) {
    x[0] = -r + 2.0 * r * i / (points_per_axis - 1);
    for (int j = 0; j < points_per_axis; ++j) {
      x[1] = -r + 2.0 * r * j / (points_per_axis - 1);
      Eigen::SelfAdjointEigenSolver<Matrix> es(obj.hessian(x), Eigen::EigenvaluesOnly);
      best = std::max(best, es.eigenvalues().cwiseAbs().maxCoeff());
    }
  }
  return best;
}

/// f(x1, x2) = (x1 x2 - 1)^2, minima set {x1 x2 = 1}.
inline Objective build_hyperbola() {
  Objective obj;
  obj.dim = 2;
  obj.value = [](const Vector& x) {
    const double r = x[0] * x[1] - 1.0;
    return r * r;
  };
  obj.gradient = [](const Vector& x) {
    const double r = x[0] * x[1] - 1.0;
    Vector g(2);
    g << 2.0 * r * x[1], 2.0 * r * x[0];
    return g;
  };
  obj.hessian = [](const Vector& x) {
    const double off = 4.0 * x[0] * x[1] - 2.0;
    Matrix h(2, 2);
    h << 2.0 * x[1] * x[1], off, off, 2.0 * x[0] * x[0];
    return h;
  };
  static const double beta = sup_hessian_norm_on_square(obj);
  obj.lipschitz_grad_hint = beta;
  return obj;
}

/// f(x) = 0.5 x^T diag(eigenvalues) x, unique minimum at the origin.
inline Objective build_convex_quadratic(const std::vector<double>& eigenvalues) {
  if (eigenvalues.empty()) throw InvalidArgument("convex_quadratic: need at least one eigenvalue");
  for (double e : eigenvalues) {
    if (!(e > 0.0) || !std::isfinite(e)) {
      throw InvalidArgument("convex_quadratic: eigenvalues must be positive, got " +
                            std::to_string(e));
    }
  }
  const Vector diag = Eigen::Map<const Vector>(eigenvalues.data(),
                                               static_cast<Eigen::Index>(eigenvalues.size()));
  Objective obj;
  obj.dim = eigenvalues.size();
  obj.value = [diag](const Vector& x) { return 0.5 * x.dot(diag.cwiseProduct(x)); };
  obj.gradient = [diag](const Vector& x) -> Vector { return diag.cwiseProduct(x); };
  obj.hessian = [diag](const Vector&) -> Matrix { return diag.asDiagonal(); };
  obj.lipschitz_grad_hint = diag.maxCoeff();
  return obj;
}

/// Training loss with p_i(u, v) = a_i u v, y_i = c a_i, l(z, y) = (z - y)^2.
/// Minima set {u v = c}.
inline SampleSumObjective build_scalar_factorization(const std::vector<double>& a, double c) {
  if (a.empty()) throw InvalidArgument("scalar_factorization: need at least one sample");
  for (double ai : a) {
    if (ai == 0.0 || !std::isfinite(ai)) {
      throw InvalidArgument("scalar_factorization: every a_i must be finite and nonzero");
    }
  }
  if (!std::isfinite(c)) throw InvalidArgument("scalar_factorization: c must be finite");
  double mean_sq = 0.0;
  for (double ai : a) mean_sq += ai * ai;
  mean_sq /= static_cast<double>(a.size());

  // Every f_i = a_i^2 (uv - c)^2, so f = mean(a_i^2) (uv - c)^2.
  auto value_unit = [c](const Vector& x) {
    const double r = x[0] * x[1] - c;
    return r * r;
  };
  auto grad_unit = [c](const Vector& x) {
    const double r = x[0] * x[1] - c;
    Vector g(2);
    g << 2.0 * r * x[1], 2.0 * r * x[0];
    return g;
  };
  auto hess_unit = [c](const Vector& x) {
    const double off = 4.0 * x[0] * x[1] - 2.0 * c;
    Matrix h(2, 2);
    h << 2.0 * x[1] * x[1], off, off, 2.0 * x[0] * x[0];
    return h;
  };

  SampleSumObjective s;
  s.n = a.size();
  s.base.dim = 2;
  s.base.value = [=](const Vector& x) { return mean_sq * value_unit(x); };
  s.base.gradient = [=](const Vector& x) -> Vector { return mean_sq * grad_unit(x); };
  s.base.hessian = [=](const Vector& x) -> Matrix { return mean_sq * hess_unit(x); };
  s.base.lipschitz_grad_hint = sup_hessian_norm_on_square(s.base);
  s.sample_gradient = [=](std::size_t i, const Vector& x) -> Vector {
    return a.at(i) * a.at(i) * grad_unit(x);
  };
  s.sample_hessian = [=](std::size_t i, const Vector& x) -> Matrix {
    return a.at(i) * a.at(i) * hess_unit(x);
  };
  s.prediction_gradient = [=](std::size_t i, const Vector& x) -> Vector {
    Vector g(2);
    g << a.at(i) * x[1], a.at(i) * x[0];
    return g;
  };
  s.loss_curvature = [](std::size_t, const Vector&) { return 2.0; };
  return s;
}

/// Directions a_1..a_n of the orthogonal quadratic model, as columns.
inline Matrix orthogonal_model_directions(std::size_t d, std::size_t n,
                                          std::optional<std::uint64_t> basis_seed) {
  const auto di = static_cast<Eigen::Index>(d);
  const auto ni = static_cast<Eigen::Index>(n);
  if (!basis_seed) return Matrix::Identity(di, di).leftCols(ni);
  RngStream rng(*basis_seed, 0);
  Matrix g(di, di);
  for (Eigen::Index j = 0; j < di; ++j) {
    for (Eigen::Index i = 0; i < di; ++i) g(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Matrix> qr(g);
  const Matrix q = qr.householderQ();
  return q.leftCols(ni);
}

/// Training loss with p_i(x) = 0.5 <a_i, x>^2 for orthonormal a_i and
/// l(z, y) = 0.5 (z - y)^2. Global minima: <a_i, x>^2 = 2 y_i for all i.
inline SampleSumObjective build_orthogonal_quadratic_model(const OrthogonalModelParams& p) {
  if (p.d == 0 || p.n == 0) throw InvalidArgument("orthogonal_quadratic_model: need d, n >= 1");
  if (p.n > p.d) {
    throw InvalidArgument("orthogonal_quadratic_model: n = " + std::to_string(p.n) +
                          " exceeds d = " + std::to_string(p.d));
  }
  if (p.y.size() != p.n) {
    throw InvalidArgument("orthogonal_quadratic_model: y must have n entries");
  }
  for (double yi : p.y) {
    if (!(yi > 0.0) || !std::isfinite(yi)) {
      throw InvalidArgument("orthogonal_quadratic_model: labels must be positive");
    }
  }
  const Matrix dirs = orthogonal_model_directions(p.d, p.n, p.basis_seed);
  const std::vector<double> y = p.y;
  const double inv_n = 1.0 / static_cast<double>(p.n);

  SampleSumObjective s;
  s.n = p.n;
  s.base.dim = p.d;
  s.sample_gradient = [dirs, y](std::size_t i, const Vector& x) -> Vector {
    const auto col = dirs.col(static_cast<Eigen::Index>(i));
    const double q = col.dot(x);
    return (0.5 * q * q - y.at(i)) * q * col;
  };
  s.sample_hessian = [dirs, y](std::size_t i, const Vector& x) -> Matrix {
    const auto col = dirs.col(static_cast<Eigen::Index>(i));
    const double q = col.dot(x);
    return (1.5 * q * q - y.at(i)) * col * col.transpose();
  };
  s.prediction_gradient = [dirs](std::size_t i, const Vector& x) -> Vector {
    const auto col = dirs.col(static_cast<Eigen::Index>(i));
    return col.dot(x) * col;
  };
  s.loss_curvature = [](std::size_t, const Vector&) { return 1.0; };
  s.base.value = [dirs, y, inv_n](const Vector& x) {
    const Vector q = dirs.transpose() * x;
    double total = 0.0;
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      const double r = 0.5 * q[i] * q[i] - y[static_cast<std::size_t>(i)];
      total += 0.5 * r * r;
    }
    return inv_n * total;
  };
  s.base.gradient = [dirs, y, inv_n](const Vector& x) -> Vector {
    Vector q = dirs.transpose() * x;
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      q[i] = (0.5 * q[i] * q[i] - y[static_cast<std::size_t>(i)]) * q[i];
    }
    return inv_n * (dirs * q);
  };
  s.base.hessian = [dirs, y, inv_n](const Vector& x) -> Matrix {
    Vector w = dirs.transpose() * x;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      w[i] = 1.5 * w[i] * w[i] - y[static_cast<std::size_t>(i)];
    }
    const Matrix h = inv_n * (dirs * w.asDiagonal() * dirs.transpose());
    return 0.5 * (h + h.transpose());
  };
  // Eigenvalues are (1.5 <a_i,x>^2 - y_i)/n; <a_i,x>^2 <= 9 ||a_i||_1^2 on the box.
  double beta = 0.0;
  for (Eigen::Index i = 0; i < dirs.cols(); ++i) {
    const double l1 = dirs.col(i).cwiseAbs().sum();
    const double yi = y[static_cast<std::size_t>(i)];
    const double top = 1.5 * kTestRegionHalfWidth * kTestRegionHalfWidth * l1 * l1 - yi;
    beta = std::max({beta, top, yi});
  }
  s.base.lipschitz_grad_hint = inv_n * beta;
  return s;
}

/// The constructed global minimum sum_i sqrt(2 y_i) a_i.
inline Vector orthogonal_model_minimum(const OrthogonalModelParams& p) {
  const Matrix dirs = orthogonal_model_directions(p.d, p.n, p.basis_seed);
  Vector coeff(static_cast<Eigen::Index>(p.n));
  for (std::size_t i = 0; i < p.n; ++i) coeff[static_cast<Eigen::Index>(i)] = std::sqrt(2.0 * p.y[i]);
  return dirs * coeff;
}

/// Builds any landscape from its spec, attaching minima-set ground truth.
inline Landscape build_landscape(const LandscapeSpec& spec) {
  Landscape out;
  out.spec = spec;
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, HyperbolaParams>) {
          out.objective = build_hyperbola();
          out.minima_residual = [](const Vector& x) { return std::abs(x[0] * x[1] - 1.0); };
          out.reference_minimum = Vector::Ones(2);
        } else if constexpr (std::is_same_v<P, ConvexQuadraticParams>) {
          out.objective = build_convex_quadratic(p.eigenvalues);
          out.minima_residual = [](const Vector& x) { return x.norm(); };
          out.reference_minimum = Vector::Zero(static_cast<Eigen::Index>(p.eigenvalues.size()));
        } else if constexpr (std::is_same_v<P, ScalarFactorizationParams>) {
          out.samples = build_scalar_factorization(p.a, p.c);
          out.objective = out.samples->base;
          const double c = p.c;
          out.minima_residual = [c](const Vector& x) { return std::abs(x[0] * x[1] - c); };
          Vector m(2);
          const double root = std::sqrt(std::abs(c));
          m << root, (c >= 0.0 ? root : -root);
          out.reference_minimum = m;
        } else {
          out.samples = build_orthogonal_quadratic_model(p);
          out.objective = out.samples->base;
          const Matrix dirs = orthogonal_model_directions(p.d, p.n, p.basis_seed);
          const std::vector<double> y = p.y;
          out.minima_residual = [dirs, y](const Vector& x) {
            const Vector q = dirs.transpose() * x;
            double worst = 0.0;
            for (Eigen::Index i = 0; i < q.size(); ++i) {
              worst = std::max(worst, std::abs(q[i] * q[i] - 2.0 * y[static_cast<std::size_t>(i)]));
            }
            return worst;
          };
          out.reference_minimum = orthogonal_model_minimum(p);
        }
      },
      spec.params);
  return out;
}

}  // namespace flatmin
