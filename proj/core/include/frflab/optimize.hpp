#pragma once

// Box-constrained local minimization and low-discrepancy start points.

#include <cstdint>
#include <functional>
#include <vector>

#include "frflab/types.hpp"

namespace frflab::optimize {

/// f(x), writing the gradient when grad is non-null. Non-finite values count as +inf.
using Objective = std::function<double(const RVector& x, RVector* grad)>;

struct MinimizeOptions {
  int max_iter = 200;
  double gtol = 1e-6;     // on the projected gradient, infinity norm
  double ftol = 1e-12;    // relative decrease per iteration
  double max_step = 5.0;  // infinity norm of a trial step
};

struct Result {
  RVector x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

/// Projected BFGS with Armijo backtracking on lower <= x <= upper.
Result minimize_box(const Objective& f, const RVector& x0, const RVector& lower, const RVector& upper,
                    const MinimizeOptions& options = {});

/// Central differences with step h, one-sided where a bound is closer than h.
RVector central_difference(const std::function<double(const RVector&)>& f, const RVector& x, const RVector& lower,
                           const RVector& upper, double h = 1e-6);

/// count points of the Sobol sequence in [0, 1)^dim, skipping the origin and `offset` further points.
std::vector<RVector> sobol_points(Index dim, std::size_t count, std::uint64_t offset = 0);

}  // namespace frflab::optimize
