#pragma once

// Baseline local estimators: polynomial (LPM), Levy-linearized rational (LRM)
// and output-error rational (ILRM), plus the modified MDL order selector.

#include <span>
#include <utility>
#include <vector>

#include "frflab/localwin.hpp"
#include "frflab/types.hpp"

namespace frflab::classic {

/// Local model orders. n_a = 0 is polynomial; n_i = -1 drops the transient.
struct Orders {
  int n_a = 0;
  int n_b = 2;
  int n_i = 2;

  int parameter_count() const noexcept { return n_a + n_b + n_i + 2; }
  bool operator==(const Orders&) const = default;
};

struct SolverDiagnostics {
  Index rank = 0;
  Index truncated = 0;        // singular values discarded by the truncated SVD
  int iterations = 0;         // ILRM only
  bool improved = false;      // ILRM moved away from its start
  bool converged = false;
  bool pole_in_window = false;
};

struct LocalFit {
  Orders orders;
  double scaling = 1.0;  // alpha
  CVector a;             // a_1..a_{n_a}; a_0 = 1 is implicit
  CVector b;
  CVector i;
  Complex g_hat{};
  Complex t_hat{};
  double sigma2 = 0.0;   // residual power over 2l+1-n_k
  double loe = 0.0;      // sum |Y - Yhat|^2 over the window
  double criterion = 0.0;
  SolverDiagnostics diagnostics;
};

/// Least-squares fit of Y = B U + I (truncated SVD on Psi).
LocalFit lpm_fit(const LocalWindow& window, int n_b, int n_i, double scaling);

/// Levy fit of A Y - B U - I = 0 with a_0 = 1.
LocalFit lrm_fit(const LocalWindow& window, Orders orders, double scaling);

struct IlrmOptions {
  int max_iter = 200;
  double tol = 1e-10;          // on the gradient infinity norm, relative to 1 + LOE
  double initial_damping = 1e-3;
  double damping_cap = 1e12;
};

/// Levenberg-Marquardt refinement of the output-error criterion from a rational start.
/// The returned LOE never exceeds the start's.
LocalFit ilrm_fit(const LocalWindow& window, const LocalFit& start, IlrmOptions options = {});

/// Output error sum_r |Y_r - (B U_r + I)/A|^2 for the fitted coefficients.
double local_output_error(const LocalWindow& window, const LocalFit& fit);

enum class ModelFamily { Polynomial, Rational };

struct MdlChoice {
  LocalFit fit;
  std::vector<std::pair<int, double>> table;  // (degree, criterion) for every admissible degree
};

/// sigma2 * exp(log(4l+2) * n_k / (2l+1-n_k-2)).
double mdl_criterion(double sigma2, int half_width, int n_k);

/// Selects equal orders over degree_grid minimizing the MDL criterion; ties go to the smaller n_k.
MdlChoice mdl_select(const LocalWindow& window, std::span<const int> degree_grid, ModelFamily family,
                     double scaling);

/// {0,1,2,3,4}.
std::span<const int> default_degree_grid();

}  // namespace frflab::classic
