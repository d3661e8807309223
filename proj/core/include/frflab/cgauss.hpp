#pragma once

// Complex Gaussian linear algebra on augmented vectors [z; conj(z)].
//
// A zero-mean complex Gaussian z is described either by its covariance
// Gamma = E[z z^H] and relation C = E[z z^T] (composite M = [Gamma C; C* Gamma*]),
// or by the real covariance of [Re z; Im z]. Both descriptions are used:
// kernels are built in the first, likelihoods are evaluated in the second.

#include <cstdint>
#include <span>

#include "frflab/types.hpp"

namespace frflab::cgauss {

struct AugmentedKernel {
  CMatrix covariance;  // Gamma, Hermitian PSD
  CMatrix relation;    // C, symmetric

  Index dim() const noexcept { return covariance.rows(); }

  /// M = [Gamma C; conj(C) conj(Gamma)].
  CMatrix composite() const;

  static AugmentedKernel zeros(Index n);

  AugmentedKernel& operator+=(const AugmentedKernel& other);
  AugmentedKernel& operator*=(double s);
  friend AugmentedKernel operator+(AugmentedKernel l, const AugmentedKernel& r) { return l += r; }
  friend AugmentedKernel operator*(double s, AugmentedKernel k) { return k *= s; }
};

/// Covariance of [Re z; Im z] as one 2n x 2n real matrix with blocks rr, ri / ir, ii.
struct RealCompositeKernel {
  RMatrix matrix;

  Index dim() const noexcept { return matrix.rows() / 2; }
  auto rr() const { return matrix.topLeftCorner(dim(), dim()); }
  auto ri() const { return matrix.topRightCorner(dim(), dim()); }
  auto ir() const { return matrix.bottomLeftCorner(dim(), dim()); }
  auto ii() const { return matrix.bottomRightCorner(dim(), dim()); }
};

/// M = J K J^H with J = [I jI; I -jI]. Throws InvalidArgument if K is not symmetric PSD.
AugmentedKernel compose(const RealCompositeKernel& k);

/// Inverse of compose: K = J^{-1} M J^{-H}.
RealCompositeKernel decompose(const AugmentedKernel& m);

/// min eig(M) / max eig(M); 0 for the zero kernel.
double min_eigen_ratio(const AugmentedKernel& m);

/// Hermitian covariance, symmetric relation and min eig(M) >= -tol * max eig(M).
bool is_valid(const AugmentedKernel& m, double tol = 1e-10);

struct ThetaEstimate {
  CVector theta;              // top half of the augmented MAP estimate
  double conjugacy_residual;  // |bottom - conj(top)| / |top|
};

/// MAP estimate of theta for Y = Psi theta + V with theta ~ CN(0, M), V ~ CN(0, sigma2 I, 0).
ThetaEstimate map_theta(const CMatrix& psi, const AugmentedKernel& prior, const CVector& y, double sigma2);

struct FrfPosterior {
  CVector g;                  // MAP of G over the window
  CVector t;                  // MAP of T over the window
  double identity_residual;   // |U g~ + t~ + sigma2 w - Y~| / (|O| |w| + |Y~|), w = O^{-1} Y~
  double conjugacy_residual;
};

/// MAP estimates of G and T for Y = diag(U) G + T + V with independent priors.
FrfPosterior map_gt(const CVector& u, const CVector& y, const AugmentedKernel& prior_g,
                    const AugmentedKernel& prior_t, double sigma2);

/// Process-wide record of the residual identity checked on every map_gt call.
struct MapGtStats {
  std::uint64_t calls = 0;
  double max_identity_residual = 0.0;
};
MapGtStats map_gt_stats();
void reset_map_gt_stats();

/// Observation covariance of Y = diag(U) G + T + V.
AugmentedKernel frf_observation(const CVector& u, const AugmentedKernel& prior_g, const AugmentedKernel& prior_t,
                                double sigma2);

/// Observation covariance of Y = Psi theta + V.
AugmentedKernel coefficient_observation(const CMatrix& psi, const AugmentedKernel& prior, double sigma2);

/// Negative log marginal likelihood of y under observation covariance O, evaluated on
/// the real vector [Re y; Im y] by Cholesky (one jitter retry, then NumericalError).
double nll(const CVector& y, const AugmentedKernel& observation);

/// Same quantity through the augmented complex formula 1/2 Y~^H O^{-1} Y~ + 1/2 log|O| + const.
double nll_augmented(const CVector& y, const AugmentedKernel& observation);

/// nll for the FRF model.
double nll(const CVector& u, const CVector& y, const AugmentedKernel& prior_g, const AugmentedKernel& prior_t,
           double sigma2);

struct NllValue {
  double value = 0.0;
  RVector gradient;  // one entry per observation-covariance derivative
};

/// nll with its sensitivity to the observation covariance:
/// d nll = Re sum(cov .* dGamma_O + rel .* dC_O).
struct NllSensitivity {
  double value = 0.0;
  CMatrix cov;
  CMatrix rel;
};
NllSensitivity nll_sensitivity(const CVector& y, const AugmentedKernel& observation);

/// nll and its derivatives, given dO/dp for each parameter p.
NllValue nll_with_gradient(const CVector& y, const AugmentedKernel& observation,
                           std::span<const AugmentedKernel> derivatives);

}  // namespace frflab::cgauss
