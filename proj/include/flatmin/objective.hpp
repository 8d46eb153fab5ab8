#pragma once

#include <cstddef>
#include <functional>
#include <optional>

#include "flatmin/types.hpp"

namespace flatmin {

/// A twice-differentiable objective f: R^d -> R with analytic derivatives.
///
/// Instances are immutable after construction; all callables are pure and may
/// be invoked concurrently.
struct Objective {
  std::size_t dim = 0;
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
  /// Empty when no exact Hessian is available.
  std::function<Matrix(const Vector&)> hessian;
  /// Upper bound on the gradient Lipschitz constant over the region of interest.
  std::optional<double> lipschitz_grad_hint;

  bool has_hessian() const noexcept { return static_cast<bool>(hessian); }
};

/// Training-loss structure f(x) = (1/n) sum_i l(p_i(x), y_i) with per-sample
/// access. `base` is the full objective.
struct SampleSumObjective {
  Objective base;
  std::size_t n = 0;
  std::function<Vector(std::size_t, const Vector&)> sample_gradient;
  std::function<Matrix(std::size_t, const Vector&)> sample_hessian;
  /// Gradient of the model output p_i.
  std::function<Vector(std::size_t, const Vector&)> prediction_gradient;
  /// l''(p_i(x), y_i), the loss curvature in its first argument.
  std::function<double(std::size_t, const Vector&)> loss_curvature;

  std::size_t dim() const noexcept { return base.dim; }
  bool has_sample_hessian() const noexcept { return static_cast<bool>(sample_hessian); }
};

}  // namespace flatmin
