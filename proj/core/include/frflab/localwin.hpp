#pragma once

#include <cstddef>

#include "frflab/spectra.hpp"
#include "frflab/types.hpp"

namespace frflab {

/// The 2l+1 contiguous excited bins used to estimate the FRF at one bin.
///
/// Near the edges of the excited band the window is shifted inward and the
/// estimate is read at eval_offset instead of the window centre.
struct LocalWindow {
  std::size_t bin = 0;           // k, where the estimate is wanted
  std::size_t center = 0;        // bin at offset 0
  int half_width = 0;            // l
  int eval_offset = 0;           // k - center
  double resolution = 0.0;       // bin spacing in rad/s
  RVector offset_omega;          // omega_{center+r} - omega_center, r = -l..l
  RVector absolute_omega;        // omega_{center+r}
  CVector input;                 // U_k
  CVector output;                // Y_k

  Index size() const noexcept { return output.size(); }
  int first_offset() const noexcept { return -half_width; }
  double eval_omega() const noexcept { return static_cast<double>(eval_offset) * resolution; }
};

/// Extracts the window for bin k from the contiguous excited run containing it.
/// Throws InvalidArgument when k is not excited or the run is shorter than 2l+1.
LocalWindow extract_window(const spectra::SpectraRecord& record, std::size_t k, int half_width);

/// alpha = N T_s / (2 pi), which turns alpha*omega_r into the bin offset r.
inline double default_scaling(double resolution) { return 1.0 / resolution; }

/// alpha * omega_r for r = -l..l. With alpha = 1/resolution these are exactly the integers r.
RVector scaled_offsets(const LocalWindow& window, double scaling);

/// Columns x^0..x^order; order -1 gives an empty matrix.
RMatrix power_basis(const RVector& x, int order);

/// Polynomial regressors of the local polynomial model.
struct RegressorSet {
  double scaling = 1.0;  // alpha
  int n_b = 0;
  int n_i = 0;
  RVector phi1;          // alpha * omega_r
  RMatrix phi_b;         // Phi^{n_b}
  RMatrix phi_i;         // Phi^{n_i}
  CMatrix psi;           // [diag(U) Phi^{n_b}, Phi^{n_i}]
};

RegressorSet regressors(const LocalWindow& window, int n_b, int n_i, double scaling);

/// Evaluates sum_n c_n x^n.
Complex polyval(const CVector& coefficients, double x);

}  // namespace frflab
